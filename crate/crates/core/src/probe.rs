//! Probe sets for the reference-network path: one probe point per CSV row.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Parses a headerless CSV of numbers. Every row must have the same width.
pub fn parse_probe_csv<R: Read>(source: R) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid("probe csv", e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::invalid(
                        "probe csv",
                        format!("row {}: '{field}' is not a number", i + 1),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "probe csv" });
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::invalid(
                    "probe csv",
                    format!(
                        "row {} has {} columns, expected {}",
                        i + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("probe csv"));
    }
    Ok(rows)
}

pub fn load_probe_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    parse_probe_csv(File::open(path)?)
}

/// Writes rows with the shortest round-tripping decimal form of each value.
pub fn write_probe_csv<W: Write>(rows: &[Vec<f64>], sink: &mut W) -> Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(sink, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_probe_csv(rows: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    let mut sink = BufWriter::new(File::create(path)?);
    write_probe_csv(rows, &mut sink)?;
    sink.flush()?;
    Ok(())
}

/// Content-derived probe identity: `probe-` followed by the CRC-32 of the
/// row count, width and values (f64 little-endian).
pub fn probe_id_for(rows: &[Vec<f64>]) -> String {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&(rows.len() as u64).to_le_bytes());
    hasher.update(&(rows.first().map_or(0, Vec::len) as u64).to_le_bytes());
    for v in rows.iter().flatten() {
        hasher.update(&v.to_le_bytes());
    }
    format!("probe-{:08x}", hasher.finalize())
}

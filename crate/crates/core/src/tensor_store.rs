//! DEPB v1: the interchange format for probe bundles.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size       | content                                   |
//! |--------|------------|-------------------------------------------|
//! | 0      | 4          | magic `DEPB`                              |
//! | 4      | 2          | version, `1`                              |
//! | 6      | 2          | flags, `0`                                |
//! | 8      | 4          | `meta_len`                                |
//! | 12     | `meta_len` | UTF-8 JSON metadata                       |
//! | ...    | n·d_embed·4 | embeddings, row-major f32 LE             |
//! | ...    | n·d_input·4 | attributions, row-major f32 LE           |
//!
//! The metadata object carries `model_id`, `layer_id`, `probe_id`, `n`,
//! `d_embed`, `d_input`, `dtype` (always `"f32le"`) and `checksum`, the
//! CRC-32 (IEEE) of the payload bytes as eight lowercase hex digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{map_eof, Error, Result};

pub const BUNDLE_MAGIC: [u8; 4] = *b"DEPB";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE: &str = "f32le";

/// Upper bound on the metadata block; anything larger is treated as a
/// corrupt length field rather than allocated.
pub(crate) const MAX_META_LEN: u32 = 1 << 24;

/// Identity of a probe bundle: which model and layer produced it, on which
/// probe set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BundleIds {
    pub model_id: String,
    pub layer_id: String,
    pub probe_id: String,
}

impl BundleIds {
    pub fn new(
        model_id: impl Into<String>,
        layer_id: impl Into<String>,
        probe_id: impl Into<String>,
    ) -> Self {
        BundleIds {
            model_id: model_id.into(),
            layer_id: layer_id.into(),
            probe_id: probe_id.into(),
        }
    }

    /// `model_id/layer_id`
    pub fn label(&self) -> String {
        format!("{}/{}", self.model_id, self.layer_id)
    }
}

/// Embeddings and attributions of one (model, layer) over a shared probe set.
/// Row `k` of each matrix belongs to probe point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBundle {
    ids: BundleIds,
    n: usize,
    d_embed: usize,
    d_input: usize,
    embeddings: Vec<f32>,
    attributions: Vec<f32>,
}

impl ProbeBundle {
    pub fn new(
        ids: BundleIds,
        n: usize,
        d_embed: usize,
        d_input: usize,
        embeddings: Vec<f32>,
        attributions: Vec<f32>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(
                "bundle",
                format!("n = {n}, need at least 2 probe points"),
            ));
        }
        if d_embed == 0 || d_input == 0 {
            return Err(Error::invalid("bundle", "zero dimensionality"));
        }
        if embeddings.len() != n * d_embed {
            return Err(Error::DimensionMismatch {
                expected: n * d_embed,
                got: embeddings.len(),
            });
        }
        if attributions.len() != n * d_input {
            return Err(Error::DimensionMismatch {
                expected: n * d_input,
                got: attributions.len(),
            });
        }
        if !embeddings.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "embeddings" });
        }
        if !attributions.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "attributions",
            });
        }
        Ok(ProbeBundle {
            ids,
            n,
            d_embed,
            d_input,
            embeddings,
            attributions,
        })
    }

    pub fn ids(&self) -> &BundleIds {
        &self.ids
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_embed(&self) -> usize {
        self.d_embed
    }

    pub fn d_input(&self) -> usize {
        self.d_input
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn attributions(&self) -> &[f32] {
        &self.attributions
    }

    pub fn embedding(&self, k: usize) -> &[f32] {
        &self.embeddings[k * self.d_embed..(k + 1) * self.d_embed]
    }

    pub fn attribution(&self, k: usize) -> &[f32] {
        &self.attributions[k * self.d_input..(k + 1) * self.d_input]
    }

    /// Two bundles can be compared when they were computed on the same probe
    /// set.
    pub fn comparable_with(&self, other: &ProbeBundle) -> bool {
        self.ids.probe_id == other.ids.probe_id && self.n == other.n
    }

    /// Returns a copy with every embedding multiplied by `factor`.
    pub fn scaled_embeddings(&self, factor: f32) -> Result<ProbeBundle> {
        let embeddings = self.embeddings.iter().map(|v| v * factor).collect();
        ProbeBundle::new(
            self.ids.clone(),
            self.n,
            self.d_embed,
            self.d_input,
            embeddings,
            self.attributions.clone(),
        )
    }

    /// CRC-32 of the payload section as it is laid out on disk.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in self.embeddings.iter().chain(&self.attributions) {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    model_id: String,
    layer_id: String,
    probe_id: String,
    n: usize,
    d_embed: usize,
    d_input: usize,
    dtype: String,
    checksum: String,
}

pub(crate) fn write_header<W: Write>(sink: &mut W, magic: &[u8; 4], meta: &[u8]) -> Result<()> {
    let meta_len = u32::try_from(meta.len())
        .ok()
        .filter(|len| *len <= MAX_META_LEN)
        .ok_or_else(|| Error::BadMeta("metadata too large".into()))?;
    sink.write_all(magic)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
    sink.write_all(&0u16.to_le_bytes())?;
    sink.write_all(&meta_len.to_le_bytes())?;
    sink.write_all(meta)?;
    Ok(())
}

/// Reads and validates the fixed header, returning the raw metadata bytes.
pub(crate) fn read_header<R: Read>(
    source: &mut R,
    magic: &[u8; 4],
    format: &'static str,
) -> Result<Vec<u8>> {
    let mut fixed = [0u8; 12];
    source.read_exact(&mut fixed[..4]).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::BadMagic { format }
        } else {
            Error::Io(e)
        }
    })?;
    if &fixed[..4] != magic {
        return Err(Error::BadMagic { format });
    }
    source.read_exact(&mut fixed[4..]).map_err(map_eof)?;
    let version = u16::from_le_bytes([fixed[4], fixed[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { format, version });
    }
    let flags = u16::from_le_bytes([fixed[6], fixed[7]]);
    if flags != 0 {
        return Err(Error::UnsupportedFlags { format, flags });
    }
    let meta_len = u32::from_le_bytes([fixed[8], fixed[9], fixed[10], fixed[11]]);
    if meta_len > MAX_META_LEN {
        return Err(Error::BadMeta(format!(
            "metadata length {meta_len} too large"
        )));
    }
    let mut meta = vec![0u8; meta_len as usize];
    source.read_exact(&mut meta).map_err(map_eof)?;
    Ok(meta)
}

pub(crate) fn parse_checksum(text: &str) -> Result<u32> {
    if text.len() != 8 {
        return Err(Error::BadMeta(format!(
            "checksum '{text}' is not 8 hex digits"
        )));
    }
    u32::from_str_radix(text, 16)
        .map_err(|_| Error::BadMeta(format!("checksum '{text}' is not 8 hex digits")))
}

pub(crate) fn check_dtype(dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(Error::BadMeta(format!(
            "dtype '{dtype}', expected '{DTYPE}'"
        )));
    }
    Ok(())
}

/// Reads `count` little-endian f32 values, feeding the raw bytes to `hasher`.
pub(crate) fn read_f32s<R: Read>(
    source: &mut R,
    count: usize,
    hasher: &mut crc32fast::Hasher,
) -> Result<Vec<f32>> {
    let bytes_len = count
        .checked_mul(4)
        .ok_or_else(|| Error::BadMeta("payload size overflows".into()))?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 8192];
    let mut remaining = bytes_len;
    while remaining > 0 {
        let take = remaining.min(buf.len());
        source.read_exact(&mut buf[..take]).map_err(map_eof)?;
        hasher.update(&buf[..take]);
        out.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        remaining -= take;
    }
    Ok(out)
}

pub(crate) fn write_f32s<W: Write>(sink: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(8192);
    for chunk in values.chunks(2048) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_bundle<W: Write>(bundle: &ProbeBundle, sink: &mut W) -> Result<()> {
    // Bundles built through `new` are finite; re-check since the payload is
    // the contract with other producers.
    if !bundle
        .embeddings
        .iter()
        .chain(&bundle.attributions)
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite { what: "bundle" });
    }
    let meta = BundleMeta {
        model_id: bundle.ids.model_id.clone(),
        layer_id: bundle.ids.layer_id.clone(),
        probe_id: bundle.ids.probe_id.clone(),
        n: bundle.n,
        d_embed: bundle.d_embed,
        d_input: bundle.d_input,
        dtype: DTYPE.to_string(),
        checksum: format!("{:08x}", bundle.checksum()),
    };
    let meta = serde_json::to_vec(&meta)?;
    write_header(sink, &BUNDLE_MAGIC, &meta)?;
    write_f32s(sink, &bundle.embeddings)?;
    write_f32s(sink, &bundle.attributions)?;
    Ok(())
}

pub fn read_bundle<R: Read>(source: &mut R) -> Result<ProbeBundle> {
    let meta = read_header(source, &BUNDLE_MAGIC, "DEPB")?;
    let meta: BundleMeta =
        serde_json::from_slice(&meta).map_err(|e| Error::BadMeta(e.to_string()))?;
    check_dtype(&meta.dtype)?;
    let stored = parse_checksum(&meta.checksum)?;
    let emb_len = meta
        .n
        .checked_mul(meta.d_embed)
        .ok_or_else(|| Error::BadMeta("n·d_embed overflows".into()))?;
    let attr_len = meta
        .n
        .checked_mul(meta.d_input)
        .ok_or_else(|| Error::BadMeta("n·d_input overflows".into()))?;

    let mut hasher = crc32fast::Hasher::new();
    let embeddings = read_f32s(source, emb_len, &mut hasher)?;
    let attributions = read_f32s(source, attr_len, &mut hasher)?;
    let computed = hasher.finalize();
    if computed != stored {
        return Err(Error::CorruptPayload { stored, computed });
    }
    ProbeBundle::new(
        BundleIds {
            model_id: meta.model_id,
            layer_id: meta.layer_id,
            probe_id: meta.probe_id,
        },
        meta.n,
        meta.d_embed,
        meta.d_input,
        embeddings,
        attributions,
    )
}

pub fn save_bundle(bundle: &ProbeBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut sink = BufWriter::new(File::create(path)?);
    write_bundle(bundle, &mut sink)?;
    sink.flush()?;
    Ok(())
}

/// Reads a `.depb` file. Unlike [`read_bundle`], trailing bytes after the
/// payload are an error.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<ProbeBundle> {
    let mut source = BufReader::new(File::open(path)?);
    let bundle = read_bundle(&mut source)?;
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(Error::invalid("bundle", "trailing bytes after payload"));
    }
    Ok(bundle)
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use depara::evaluation::{pr_curve, precision_at_k, recall_at_k, task_tree, PrCurve, RelevanceSet};
use depara::graph::build_graph;
use depara::numfmt::sig9;
use depara::probe::{load_probe_csv, probe_id_for};
use depara::refnet::{export_bundle, load_refnet};
use depara::similarity::{check_lambda, edge_only_similarity, graph_similarity};
use depara::synthbench::{generate_family, monotonicity_harness, FamilyParams, HarnessPoint};
use depara::tensor_store::{load_bundle, save_bundle};
use depara::transferability::{
    all_pairs_matrix, rank_by_similarity, select_layer, KnowledgePool, RankingTable, ScoreMatrix,
};
use depara::{BundleIds, DeparaGraph, LayerTap};

#[derive(Parser, Debug)]
#[command(
    name = "depara",
    version,
    about = "Rank pre-trained models and layers by deep attribution graph similarity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    check_lambda(v).map_err(|e| e.to_string())?;
    Ok(v)
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a probe set through a reference network and write a DEPB bundle.
    ExportRef {
        #[arg(long)]
        net: PathBuf,
        /// CSV file, one probe point per row.
        #[arg(long)]
        probe: PathBuf,
        /// Layer whose output is the embedding (1-based).
        #[arg(long)]
        tap: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the network file stem.
        #[arg(long)]
        model_id: Option<String>,
        /// Defaults to `tap-<K>`.
        #[arg(long)]
        layer_id: Option<String>,
        /// Defaults to a checksum of the probe values.
        #[arg(long)]
        probe_id: Option<String>,
    },
    /// Similarity report for two bundles.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
        lambda: f64,
        /// Skip the node term (for bundles with different input spaces).
        #[arg(long)]
        edges_only: bool,
    },
    /// Rank candidate bundles by similarity to a target bundle.
    Rank {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Pick the source layer most similar to a target encoder.
    SelectLayer {
        #[arg(long)]
        layers: PathBuf,
        #[arg(long)]
        target_encoder: PathBuf,
        #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// P@K, R@K and the PR curve of rankings against relevance sets.
    Eval {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        relevance: PathBuf,
        #[arg(long)]
        k: usize,
        /// Also write the PR curve as an SVG plot.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Average-linkage task similarity tree over a directory of bundles.
    Tree {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Generate a synthetic task family and report variant-vs-base scores.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        sigmas: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        d_input: usize,
        #[arg(long, default_value_t = 8)]
        d_embed: usize,
        #[arg(long, default_value_t = 64)]
        n_probe: usize,
        #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib {
        path: Option<PathBuf>,
        err: depara::Error,
    },
    Io(io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib { err, .. } if err.is_validation() => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Lib {
                path: Some(path),
                err,
            } => write!(f, "{}: {err}", path.display()),
            CliError::Lib { path: None, err } => write!(f, "{err}"),
            CliError::Io(err) => write!(f, "{err}"),
        }
    }
}

impl From<depara::Error> for CliError {
    fn from(err: depara::Error) -> Self {
        CliError::Lib { path: None, err }
    }
}

trait AtPath<T> {
    fn at(self, path: &Path) -> Result<T, CliError>;
}

impl<T> AtPath<T> for depara::Result<T> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|err| CliError::Lib {
            path: Some(path.to_path_buf()),
            err,
        })
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `.depb` files in `dir`, sorted by file name.
fn discover_bundles(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Lib {
        path: Some(dir.to_path_buf()),
        err: e.into(),
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(CliError::Io)?.path();
        if path.is_file() && path.extension().is_some_and(|ext| ext == "depb") {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no .depb files found",
            dir.display()
        )));
    }
    Ok(paths)
}

fn load_graph(path: &Path) -> Result<DeparaGraph, CliError> {
    let bundle = load_bundle(path).at(path)?;
    build_graph(&bundle).at(path)
}

fn load_pool(dir: &Path) -> Result<KnowledgePool, CliError> {
    let mut pool = KnowledgePool::new();
    for path in discover_bundles(dir)? {
        let graph = load_graph(&path)?;
        pool.push(file_stem(&path), graph).at(&path)?;
    }
    Ok(pool)
}

fn json_line<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string(value).map_err(|e| CliError::from(depara::Error::from(e)))?;
    s.push('\n');
    Ok(s)
}

/// Accepts either a single object or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    One(T),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::Many(v) => v,
            OneOrMany::One(v) => vec![v],
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Lib {
        path: Some(path.to_path_buf()),
        err: e.into(),
    })?;
    let parsed: OneOrMany<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(parsed.into_vec())
}

#[derive(Serialize)]
struct ExportSummary {
    out: String,
    model_id: String,
    layer_id: String,
    probe_id: String,
    n: usize,
    d_embed: usize,
    d_input: usize,
    checksum: String,
}

#[derive(Serialize)]
struct QueryScore {
    query_id: String,
    #[serde(serialize_with = "ser9")]
    precision_at_k: f64,
    #[serde(serialize_with = "ser9")]
    recall_at_k: f64,
}

#[derive(Serialize)]
struct EvalReport {
    k: usize,
    queries: Vec<QueryScore>,
    #[serde(serialize_with = "ser9")]
    mean_precision_at_k: f64,
    #[serde(serialize_with = "ser9")]
    mean_recall_at_k: f64,
    pr_curve: PrCurve,
}

#[derive(Serialize)]
struct TreeReport<'a> {
    newick: String,
    tree: &'a depara::evaluation::Dendrogram,
    matrix: &'a ScoreMatrix,
}

#[derive(Serialize)]
struct SynthReport {
    family_dir: String,
    seed: u64,
    #[serde(serialize_with = "ser9")]
    lambda: f64,
    /// What the sigma axis stands for; it is not a transfer accuracy.
    ground_truth: &'static str,
    points: Vec<HarnessPoint>,
}

fn ser9<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(sig9(*x))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::ExportRef {
            net,
            probe,
            tap,
            out,
            model_id,
            layer_id,
            probe_id,
        } => {
            let tap_sel = LayerTap::new(tap).map_err(|_| {
                CliError::Usage(format!("tap out of range: {tap} (taps start at 1)"))
            })?;
            let network = load_refnet(&net).at(&net)?;
            network.tap_width(tap_sel).at(&net)?;
            let rows = load_probe_csv(&probe).at(&probe)?;
            if rows[0].len() != network.input_dim() {
                return Err(CliError::Lib {
                    path: Some(probe.clone()),
                    err: depara::Error::DimensionMismatch {
                        expected: network.input_dim(),
                        got: rows[0].len(),
                    },
                });
            }
            let ids = BundleIds::new(
                model_id.unwrap_or_else(|| file_stem(&net)),
                layer_id.unwrap_or_else(|| tap_sel.to_string()),
                probe_id.unwrap_or_else(|| probe_id_for(&rows)),
            );
            let bundle = export_bundle(&network, &rows, tap_sel, ids).at(&probe)?;
            save_bundle(&bundle, &out).at(&out)?;
            json_line(&ExportSummary {
                out: out.display().to_string(),
                model_id: bundle.ids().model_id.clone(),
                layer_id: bundle.ids().layer_id.clone(),
                probe_id: bundle.ids().probe_id.clone(),
                n: bundle.n(),
                d_embed: bundle.d_embed(),
                d_input: bundle.d_input(),
                checksum: format!("{:08x}", bundle.checksum()),
            })
        }
        Command::Compare {
            a,
            b,
            lambda,
            edges_only,
        } => {
            let ga = load_graph(&a)?;
            let gb = load_graph(&b)?;
            let report = if edges_only {
                edge_only_similarity(&ga, &gb, lambda)?
            } else {
                graph_similarity(&ga, &gb, lambda)?
            };
            json_line(&report)
        }
        Command::Rank {
            target,
            candidates,
            lambda,
            format,
        } => {
            let target_graph = load_graph(&target)?;
            let pool = load_pool(&candidates)?;
            let mut table = rank_by_similarity(&pool, &target_graph, lambda)?;
            table.target_id = file_stem(&target);
            match format {
                Format::Json => json_line(&table),
                Format::Csv => Ok(table.to_csv()),
            }
        }
        Command::SelectLayer {
            layers,
            target_encoder,
            lambda,
            format,
        } => {
            let target_graph = load_graph(&target_encoder)?;
            let pool = load_pool(&layers)?;
            let mut selection = select_layer(&pool, &target_graph, lambda)?;
            selection.ranking.target_id = file_stem(&target_encoder);
            if selection.tie {
                eprintln!(
                    "warning: several layers share the top score; '{}' chosen by file order",
                    selection.candidate_id
                );
            }
            match format {
                Format::Json => json_line(&selection),
                Format::Csv => Ok(selection.ranking.to_csv()),
            }
        }
        Command::Eval {
            rankings,
            relevance,
            k,
            svg,
            format,
        } => {
            let tables: Vec<RankingTable> = read_json(&rankings)?;
            let rels: Vec<RelevanceSet> = read_json(&relevance)?;
            if tables.is_empty() {
                return Err(CliError::Usage(format!(
                    "{}: no rankings",
                    rankings.display()
                )));
            }
            for rel in &rels {
                rel.validate().at(&relevance)?;
            }
            let mut queries = Vec::with_capacity(tables.len());
            for table in &tables {
                let rel = rels
                    .iter()
                    .find(|r| r.query_id == table.target_id)
                    .ok_or_else(|| depara::Error::MissingQuery(table.target_id.clone()))
                    .at(&relevance)?;
                queries.push(QueryScore {
                    query_id: table.target_id.clone(),
                    precision_at_k: precision_at_k(table, rel, k).at(&rankings)?,
                    recall_at_k: recall_at_k(table, rel, k).at(&rankings)?,
                });
            }
            let curve = pr_curve(&tables, &rels).at(&relevance)?;
            if let Some(svg_path) = &svg {
                fs::write(svg_path, curve.to_svg()).map_err(|e| CliError::Lib {
                    path: Some(svg_path.clone()),
                    err: e.into(),
                })?;
            }
            let count = queries.len() as f64;
            let report = EvalReport {
                k,
                mean_precision_at_k: queries.iter().map(|q| q.precision_at_k).sum::<f64>() / count,
                mean_recall_at_k: queries.iter().map(|q| q.recall_at_k).sum::<f64>() / count,
                queries,
                pr_curve: curve,
            };
            match format {
                Format::Json => json_line(&report),
                Format::Csv => Ok(report.pr_curve.to_csv()),
            }
        }
        Command::Tree {
            bundles,
            lambda,
            format,
        } => {
            let pool = load_pool(&bundles)?;
            let matrix = all_pairs_matrix(&pool, lambda)?;
            let tree = task_tree(&matrix)?;
            match format {
                Format::Json => json_line(&TreeReport {
                    newick: tree.to_newick(),
                    tree: &tree,
                    matrix: &matrix,
                }),
                Format::Csv => Ok(tree.to_csv()),
            }
        }
        Command::Synth {
            seed,
            sigmas,
            out,
            d_input,
            d_embed,
            n_probe,
            lambda,
            format,
        } => {
            if sigmas.len() < 2 {
                return Err(CliError::Usage("--sigmas needs at least two values".into()));
            }
            let family =
                generate_family(FamilyParams::new(seed, d_input, d_embed, n_probe), &sigmas)?;
            let points = monotonicity_harness(&family, lambda)?;
            let dir = family.write_to(&out).at(&out)?;
            match format {
                Format::Json => json_line(&SynthReport {
                    family_dir: dir.display().to_string(),
                    seed,
                    lambda,
                    ground_truth: "synthetic proxy: relatedness falls as perturbation sigma grows",
                    points,
                }),
                Format::Csv => {
                    let mut s = String::from("sigma,score\n");
                    for p in points {
                        s.push_str(&format!(
                            "{},{}\n",
                            depara::numfmt::sig9_text(p.sigma),
                            depara::numfmt::sig9_text(p.score)
                        ));
                    }
                    Ok(s)
                }
            }
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("DEPARA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "DEPARA_THREADS='{value}' is not a positive integer"
            ))
        })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(output) => {
            let mut stdout = io::stdout().lock();
            if stdout
                .write_all(output.as_bytes())
                .and_then(|()| stdout.flush())
                .is_err()
            {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

//! Deep attribution graphs (DEPARA) for estimating how well the knowledge in
//! a pre-trained network transfers to another task.
//!
//! Each (model, layer) pair is probed with a shared, unlabeled probe set.
//! The resulting graph has one node per probe point, carrying the point's
//! Gradient*Input attribution, and a fully connected edge set weighted by the
//! cosine similarity of the points' embeddings. Two graphs are compared by
//! the mean node cosine plus `λ` times the Spearman correlation of their
//! edges, and candidates are ranked by that score.
//!
//! Module map:
//!
//! - [`tensor_store`]: DEPB bundle format (embeddings + attributions).
//! - [`refnet`]: dense reference network, Gradient*Input, DEPN format.
//! - [`graph`]: graph construction from a bundle.
//! - [`similarity`]: node, edge and combined similarity.
//! - [`transferability`]: model ranking, layer selection, all-pairs matrices.
//! - [`evaluation`]: P@K, R@K, PR curves, task similarity trees.
//! - [`synthbench`]: synthetic task families with known relatedness.

pub mod error;
pub mod evaluation;
pub mod exec;
pub mod graph;
pub mod numfmt;
pub mod probe;
pub mod refnet;
pub mod similarity;
pub mod stats;
pub mod synthbench;
pub mod tensor_store;
pub mod transferability;

pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::{build_graph, edge_index, DeparaGraph};
pub use refnet::{Activation, DenseLayer, LayerTap, RefNet};
pub use similarity::{graph_similarity, SimilarityReport};
pub use tensor_store::{read_bundle, write_bundle, BundleIds, ProbeBundle};
pub use transferability::{KnowledgePool, RankingTable};

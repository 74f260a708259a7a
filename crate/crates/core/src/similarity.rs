//! Similarity of two attribution graphs built on the same probe set.
//!
//! The node term is the mean cosine between paired attribution vectors, the
//! edge term is Spearman's rank correlation between the two edge vectors, and
//! the combined score is `s_nodes + λ·s_edges`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cosine, DeparaGraph};
use crate::numfmt::{ser_opt_sig9, ser_sig9};
use crate::stats::spearman;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `None` only for edge-only comparisons.
    #[serde(serialize_with = "ser_opt_sig9")]
    pub s_nodes: Option<f64>,
    #[serde(serialize_with = "ser_sig9")]
    pub s_edges: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub lambda: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub score: f64,
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(
            "lambda",
            format!("{lambda} (must be a finite non-negative number)"),
        ));
    }
    Ok(())
}

pub fn node_similarity(a: &DeparaGraph, b: &DeparaGraph) -> Result<f64> {
    a.check_comparable(b)?;
    if a.node_dim() != b.node_dim() {
        return Err(Error::Incomparable(format!(
            "node dimensionality {} vs {}",
            a.node_dim(),
            b.node_dim()
        )));
    }
    let mut total = 0.0;
    for k in 0..a.n() {
        let (va, vb) = (a.node(k), b.node(k));
        let c = cosine(
            va.iter().map(|&v| f64::from(v)),
            vb.iter().map(|&v| f64::from(v)),
        )
        .ok_or_else(|| {
            let what = if va.iter().all(|v| *v == 0.0) {
                "attribution (first graph)"
            } else {
                "attribution (second graph)"
            };
            Error::ZeroVector { what, index: k }
        })?;
        total += c.clamp(-1.0, 1.0);
    }
    Ok(total / a.n() as f64)
}

pub fn edge_similarity(a: &DeparaGraph, b: &DeparaGraph) -> Result<f64> {
    a.check_comparable(b)?;
    spearman(a.edges(), b.edges(), "edge distribution")
}

pub fn graph_similarity(a: &DeparaGraph, b: &DeparaGraph, lambda: f64) -> Result<SimilarityReport> {
    check_lambda(lambda)?;
    let s_nodes = node_similarity(a, b)?;
    let s_edges = edge_similarity(a, b)?;
    Ok(SimilarityReport {
        s_nodes: Some(s_nodes),
        s_edges,
        lambda,
        score: s_nodes + lambda * s_edges,
    })
}

/// Edge term only, for graphs whose attributions live in different input
/// spaces. The score is `λ·s_edges`.
pub fn edge_only_similarity(
    a: &DeparaGraph,
    b: &DeparaGraph,
    lambda: f64,
) -> Result<SimilarityReport> {
    check_lambda(lambda)?;
    let s_edges = edge_similarity(a, b)?;
    Ok(SimilarityReport {
        s_nodes: None,
        s_edges,
        lambda,
        score: lambda * s_edges,
    })
}

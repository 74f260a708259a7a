//! Deep attribution graphs.
//!
//! A graph over `n` probe points has one node per point (its attribution
//! vector) and a fully connected, undirected edge set weighted by the cosine
//! similarity of the points' embeddings. Edges are stored once, upper
//! triangle only, in lexicographic `(p, q)` order with `p < q`; self-edges
//! are not stored.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor_store::{BundleIds, ProbeBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct DeparaGraph {
    ids: BundleIds,
    n: usize,
    node_dim: usize,
    /// Row-major `n × node_dim`.
    nodes: Vec<f32>,
    edges: Vec<f64>,
}

/// Number of stored edges for `n` nodes.
pub fn edge_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Flat position of edge `(p, q)` in the stored edge vector.
pub fn edge_index(p: usize, q: usize, n: usize) -> Result<usize> {
    if p >= q || q >= n {
        return Err(Error::invalid(
            "edge",
            format!("({p}, {q}) is not a pair p < q < {n}"),
        ));
    }
    Ok(p * n - p * (p + 1) / 2 + (q - p - 1))
}

/// `a·b / √(‖a‖²‖b‖²)` in f64. Returns `None` when either vector is zero.
/// Identical inputs give exactly 1.
pub(crate) fn cosine<A, B>(a: A, b: B) -> Option<f64>
where
    A: IntoIterator<Item = f64>,
    B: IntoIterator<Item = f64>,
{
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.into_iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb).sqrt())
}

/// Unclamped upper-triangle cosine similarities of the rows of an
/// `n × d` row-major matrix.
pub fn raw_cosine_edges(rows: &[f64], n: usize, d: usize, exec: Exec) -> Result<Vec<f64>> {
    if rows.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: rows.len(),
        });
    }
    let row = |k: usize| &rows[k * d..(k + 1) * d];
    let sq_norms: Vec<f64> = (0..n).map(|k| row(k).iter().map(|v| v * v).sum()).collect();
    if let Some(index) = sq_norms.iter().position(|s| *s == 0.0) {
        return Err(Error::ZeroVector {
            what: "embedding",
            index,
        });
    }
    let per_row = exec.map(n, |p| {
        ((p + 1)..n)
            .map(|q| {
                let dot: f64 = row(p).iter().zip(row(q)).map(|(x, y)| x * y).sum();
                dot / (sq_norms[p] * sq_norms[q]).sqrt()
            })
            .collect::<Vec<f64>>()
    });
    Ok(per_row.into_iter().flatten().collect())
}

/// Upper-triangle cosine similarities clamped to `[-1, 1]`.
pub fn cosine_edges(rows: &[f64], n: usize, d: usize, exec: Exec) -> Result<Vec<f64>> {
    let mut edges = raw_cosine_edges(rows, n, d, exec)?;
    for e in &mut edges {
        *e = e.clamp(-1.0, 1.0);
    }
    Ok(edges)
}

pub fn build_graph(bundle: &ProbeBundle) -> Result<DeparaGraph> {
    build_graph_with(bundle, Exec::default())
}

pub fn build_graph_with(bundle: &ProbeBundle, exec: Exec) -> Result<DeparaGraph> {
    let embeddings: Vec<f64> = bundle.embeddings().iter().map(|&v| f64::from(v)).collect();
    let edges = cosine_edges(&embeddings, bundle.n(), bundle.d_embed(), exec)?;
    Ok(DeparaGraph {
        ids: bundle.ids().clone(),
        n: bundle.n(),
        node_dim: bundle.d_input(),
        nodes: bundle.attributions().to_vec(),
        edges,
    })
}

impl DeparaGraph {
    pub fn ids(&self) -> &BundleIds {
        &self.ids
    }

    pub fn probe_id(&self) -> &str {
        &self.ids.probe_id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn node(&self, k: usize) -> &[f32] {
        &self.nodes[k * self.node_dim..(k + 1) * self.node_dim]
    }

    pub fn nodes(&self) -> &[f32] {
        &self.nodes
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn edge(&self, p: usize, q: usize) -> Result<f64> {
        if p == q && p < self.n {
            return Ok(1.0);
        }
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        Ok(self.edges[edge_index(lo, hi, self.n)?])
    }

    /// Same probe set and probe count.
    pub fn check_comparable(&self, other: &DeparaGraph) -> Result<()> {
        if self.ids.probe_id != other.ids.probe_id {
            return Err(Error::Incomparable(format!(
                "probe '{}' vs '{}'",
                self.ids.probe_id, other.ids.probe_id
            )));
        }
        if self.n != other.n {
            return Err(Error::Incomparable(format!(
                "{} vs {} probe points",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// Debug view of the graph; nodes are included only on request.
    pub fn to_json(&self, include_nodes: bool) -> serde_json::Value {
        #[derive(Serialize)]
        struct View<'a> {
            model_id: &'a str,
            layer_id: &'a str,
            probe_id: &'a str,
            n: usize,
            node_dim: usize,
            edges: &'a [f64],
            #[serde(skip_serializing_if = "Option::is_none")]
            nodes: Option<Vec<&'a [f32]>>,
        }
        let view = View {
            model_id: &self.ids.model_id,
            layer_id: &self.ids.layer_id,
            probe_id: &self.ids.probe_id,
            n: self.n,
            node_dim: self.node_dim,
            edges: &self.edges,
            nodes: include_nodes.then(|| (0..self.n).map(|k| self.node(k)).collect()),
        };
        serde_json::to_value(view).expect("graph view serializes")
    }
}

//! Ranking knowledge items (models or layers) for a target task.
//!
//! Ranks use competition ranking: a candidate's rank is one plus the number
//! of candidates that are strictly better, so tied candidates share a rank
//! and the next distinct value skips ahead. Among exact ties the input order
//! is kept.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::DeparaGraph;
use crate::numfmt::{ser_sig9, ser_vec_sig9, sig9_text};
use crate::similarity::{check_lambda, graph_similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDirection {
    DescendingByScore,
    AscendingByRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub candidate_id: String,
    #[serde(serialize_with = "ser_sig9")]
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub target_id: String,
    pub direction: RankDirection,
    pub entries: Vec<RankEntry>,
}

impl RankingTable {
    /// Sorts `(id, value)` pairs in `direction` and assigns competition
    /// ranks.
    pub fn from_values(
        target_id: impl Into<String>,
        direction: RankDirection,
        values: Vec<(String, f64)>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("candidate list"));
        }
        if let Some((id, _)) = values.iter().find(|(_, v)| v.is_nan()) {
            return Err(Error::Candidate {
                id: id.clone(),
                source: Box::new(Error::NonFinite { what: "score" }),
            });
        }
        let better = |a: f64, b: f64| -> Ordering {
            match direction {
                RankDirection::DescendingByScore => b.total_cmp(&a),
                RankDirection::AscendingByRisk => a.total_cmp(&b),
            }
        };
        let mut sorted = values;
        // stable: ties keep input order
        sorted.sort_by(|a, b| better(a.1, b.1));
        let mut entries: Vec<RankEntry> = Vec::with_capacity(sorted.len());
        for (i, (candidate_id, score)) in sorted.into_iter().enumerate() {
            let rank = match entries.last() {
                Some(prev) if prev.score == score => prev.rank,
                _ => i + 1,
            };
            entries.push(RankEntry {
                candidate_id,
                score,
                rank,
            });
        }
        Ok(RankingTable {
            target_id: target_id.into(),
            direction,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Candidate ids in table order.
    pub fn order(&self) -> Vec<&str> {
        self.entries
            .iter()
            .map(|e| e.candidate_id.as_str())
            .collect()
    }

    pub fn rank_of(&self, candidate_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.candidate_id == candidate_id)
            .map(|e| e.rank)
    }

    /// `rank,candidate_id,score`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,candidate_id,score\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{}\n",
                e.rank,
                csv_field(&e.candidate_id),
                sig9_text(e.score)
            ));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A pool of knowledge items sharing one probe set.
#[derive(Debug, Clone, Default)]
pub struct KnowledgePool {
    items: Vec<(String, DeparaGraph)>,
}

impl KnowledgePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, candidate_id: impl Into<String>, graph: DeparaGraph) -> Result<()> {
        let candidate_id = candidate_id.into();
        if let Some((_, first)) = self.items.first() {
            first
                .check_comparable(&graph)
                .map_err(|e| Error::Candidate {
                    id: candidate_id.clone(),
                    source: Box::new(e),
                })?;
        }
        self.items.push((candidate_id, graph));
        Ok(())
    }

    pub fn from_items<I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, DeparaGraph)>,
    {
        let mut pool = KnowledgePool::new();
        for (id, graph) in items {
            pool.push(id, graph)?;
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn items(&self) -> &[(String, DeparaGraph)] {
        &self.items
    }
}

fn pool_scores(
    pool: &KnowledgePool,
    target: &DeparaGraph,
    lambda: f64,
    exec: Exec,
) -> Result<Vec<(String, f64)>> {
    check_lambda(lambda)?;
    if pool.is_empty() {
        return Err(Error::Empty("knowledge pool"));
    }
    exec.try_map(pool.len(), |i| {
        let (id, graph) = &pool.items[i];
        graph_similarity(graph, target, lambda)
            .map(|r| (id.clone(), r.score))
            .map_err(|e| Error::Candidate {
                id: id.clone(),
                source: Box::new(e),
            })
    })
}

/// Ranks pool items by descending similarity to `target`; rank 1 is the
/// most transferable.
pub fn rank_by_similarity(
    pool: &KnowledgePool,
    target: &DeparaGraph,
    lambda: f64,
) -> Result<RankingTable> {
    rank_by_similarity_with(pool, target, lambda, Exec::default())
}

pub fn rank_by_similarity_with(
    pool: &KnowledgePool,
    target: &DeparaGraph,
    lambda: f64,
    exec: Exec,
) -> Result<RankingTable> {
    let scores = pool_scores(pool, target, lambda, exec)?;
    RankingTable::from_values(
        target.ids().label(),
        RankDirection::DescendingByScore,
        scores,
    )
}

/// Ranks candidates by ascending risk; rank 1 has the lowest risk.
pub fn rank_by_risk(target_id: &str, candidates: &[(String, f64)]) -> Result<RankingTable> {
    if let Some((id, _)) = candidates.iter().find(|(_, r)| !r.is_finite()) {
        return Err(Error::Candidate {
            id: id.clone(),
            source: Box::new(Error::NonFinite { what: "risk" }),
        });
    }
    RankingTable::from_values(
        target_id,
        RankDirection::AscendingByRisk,
        candidates.to_vec(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSelection {
    pub candidate_id: String,
    #[serde(serialize_with = "ser_sig9")]
    pub score: f64,
    /// Another layer reached the same score; the first in input order won.
    pub tie: bool,
    pub ranking: RankingTable,
}

/// Picks the layer whose graph is most similar to the target's encoder
/// graph.
pub fn select_layer(
    layers: &KnowledgePool,
    target_encoder: &DeparaGraph,
    lambda: f64,
) -> Result<LayerSelection> {
    let ranking = rank_by_similarity(layers, target_encoder, lambda)?;
    let best = &ranking.entries[0];
    let tie = ranking.entries.get(1).is_some_and(|e| e.rank == 1);
    Ok(LayerSelection {
        candidate_id: best.candidate_id.clone(),
        score: best.score,
        tie,
        ranking,
    })
}

/// Symmetric all-pairs similarity matrix over a pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    #[serde(serialize_with = "ser_sig9")]
    pub lambda: f64,
    /// Row-major `ids.len() × ids.len()`.
    #[serde(serialize_with = "ser_vec_sig9")]
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, lambda: f64, values: Vec<f64>) -> Result<Self> {
        check_lambda(lambda)?;
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        Ok(ScoreMatrix {
            ids,
            lambda,
            values,
        })
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push(',');
            out.push_str(&csv_field(id));
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&csv_field(id));
            for j in 0..self.ids.len() {
                out.push(',');
                out.push_str(&sig9_text(self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn all_pairs_matrix(pool: &KnowledgePool, lambda: f64) -> Result<ScoreMatrix> {
    all_pairs_matrix_with(pool, lambda, Exec::default())
}

pub fn all_pairs_matrix_with(pool: &KnowledgePool, lambda: f64, exec: Exec) -> Result<ScoreMatrix> {
    check_lambda(lambda)?;
    let n = pool.len();
    if n == 0 {
        return Err(Error::Empty("knowledge pool"));
    }
    // unordered pairs i <= j, each computed once
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let scores = exec.try_map(pairs.len(), |k| {
        let (i, j) = pairs[k];
        let (id_i, gi) = &pool.items[i];
        let (_, gj) = &pool.items[j];
        graph_similarity(gi, gj, lambda)
            .map(|r| r.score)
            .map_err(|e| Error::Candidate {
                id: id_i.clone(),
                source: Box::new(e),
            })
    })?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), s) in pairs.iter().zip(scores) {
        values[i * n + j] = s;
        values[j * n + i] = s;
    }
    ScoreMatrix::new(pool.ids(), lambda, values)
}

//! Scoring predicted transferability against reference relevance sets, and
//! clustering tasks into a similarity tree.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{ser_sig9, sig9, sig9_text};
use crate::stats::spearman;
use crate::transferability::{RankingTable, ScoreMatrix};

/// Candidates regarded as relevant for one query (e.g. its best known
/// sources).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceSet {
    pub query_id: String,
    pub relevant_ids: BTreeSet<String>,
}

impl RelevanceSet {
    pub fn new<I, S>(query_id: impl Into<String>, ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut relevant_ids = BTreeSet::new();
        for id in ids {
            let id = id.into();
            if !relevant_ids.insert(id.clone()) {
                return Err(Error::invalid(
                    "relevance set",
                    format!("duplicate id '{id}'"),
                ));
            }
        }
        let set = RelevanceSet {
            query_id: query_id.into(),
            relevant_ids,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.relevant_ids.is_empty() {
            return Err(Error::Empty("relevance set"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.relevant_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant_ids.is_empty()
    }
}

/// Relevant candidates among the first `k` entries of the table.
pub fn hits_at_k(ranking: &RankingTable, rel: &RelevanceSet, k: usize) -> Result<usize> {
    if k == 0 || k > ranking.len() {
        return Err(Error::KOutOfRange {
            k,
            len: ranking.len(),
        });
    }
    rel.validate()?;
    Ok(ranking.entries[..k]
        .iter()
        .filter(|e| rel.relevant_ids.contains(&e.candidate_id))
        .count())
}

pub fn precision_at_k(ranking: &RankingTable, rel: &RelevanceSet, k: usize) -> Result<f64> {
    Ok(hits_at_k(ranking, rel, k)? as f64 / k as f64)
}

pub fn recall_at_k(ranking: &RankingTable, rel: &RelevanceSet, k: usize) -> Result<f64> {
    Ok(hits_at_k(ranking, rel, k)? as f64 / rel.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub k: usize,
    #[serde(serialize_with = "ser_sig9")]
    pub precision: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub recall: f64,
}

/// Macro-averaged precision and recall for `K = 1..=max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{}",
                p.k,
                sig9_text(p.precision),
                sig9_text(p.recall)
            );
        }
        out
    }

    /// Precision (y) against recall (x) on the unit square.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 400.0;
        const PAD: f64 = 40.0;
        let x = |r: f64| PAD + r * SIZE;
        let y = |p: f64| PAD + (1.0 - p) * SIZE;
        let points: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.recall), y(p.precision)))
            .collect();
        let total = SIZE + 2.0 * PAD;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">recall</text>"#,
            PAD + SIZE / 2.0,
            total - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 14 {})">precision</text>"#,
            PAD + SIZE / 2.0,
            PAD + SIZE / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Averages per-query precision and recall at every K up to the smallest
/// candidate count. Each ranking's `target_id` is its query id.
pub fn pr_curve(rankings: &[RankingTable], rels: &[RelevanceSet]) -> Result<PrCurve> {
    if rankings.is_empty() {
        return Err(Error::Empty("ranking list"));
    }
    let paired = rankings
        .iter()
        .map(|r| {
            rels.iter()
                .find(|rel| rel.query_id == r.target_id)
                .map(|rel| (r, rel))
                .ok_or_else(|| Error::MissingQuery(r.target_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_k = rankings.iter().map(RankingTable::len).min().unwrap_or(0);
    let queries = paired.len() as f64;
    let mut points = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let (mut p_sum, mut r_sum) = (0.0, 0.0);
        for (ranking, rel) in &paired {
            p_sum += precision_at_k(ranking, rel, k)?;
            r_sum += recall_at_k(ranking, rel, k)?;
        }
        points.push(PrPoint {
            k,
            precision: p_sum / queries,
            recall: r_sum / queries,
        });
    }
    Ok(PrCurve { points })
}

/// Spearman correlation between similarities and observed accuracies.
pub fn sim_accuracy_correlation(sims: &[f64], accs: &[f64]) -> Result<f64> {
    if sims.len() != accs.len() {
        return Err(Error::DimensionMismatch {
            expected: sims.len(),
            got: accs.len(),
        });
    }
    if sims.len() < 3 {
        return Err(Error::invalid("correlation input", "need at least 3 pairs"));
    }
    spearman(sims, accs, "input (constant values)")
}

/// One agglomeration step. Node indices `0..leaves.len()` are leaves; merge
/// `i` creates node `leaves.len() + i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    #[serde(serialize_with = "ser_sig9")]
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    /// How merge heights relate to similarity scores.
    pub distance: String,
}

impl Dendrogram {
    pub fn root(&self) -> usize {
        self.leaves.len() + self.merges.len() - 1
    }

    fn height(&self, node: usize) -> f64 {
        if node < self.leaves.len() {
            0.0
        } else {
            self.merges[node - self.leaves.len()].height
        }
    }

    /// Newick string with branch lengths; siblings are ordered by their
    /// smallest leaf id.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_newick(self.root(), &mut out);
        out.push(';');
        out
    }

    fn write_newick(&self, node: usize, out: &mut String) {
        if node < self.leaves.len() {
            out.push_str(&newick_label(&self.leaves[node]));
            return;
        }
        let m = &self.merges[node - self.leaves.len()];
        out.push('(');
        for (i, child) in [m.left, m.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write_newick(child, out);
            let branch = (m.height - self.height(child)).max(0.0);
            let _ = write!(out, ":{}", sig9(branch));
        }
        out.push(')');
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,left,right,height,size\n");
        for (i, m) in self.merges.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                m.left,
                m.right,
                sig9_text(m.height),
                m.size
            );
        }
        out
    }
}

fn newick_label(name: &str) -> String {
    if name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,".contains(c))
    {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

struct Cluster {
    node: usize,
    /// Leaf indices sorted by leaf id.
    members: Vec<usize>,
}

/// Average-linkage agglomerative clustering on `d = 1 − score/(1+λ)`.
///
/// At each step the closest pair of clusters merges; exact distance ties go
/// to the pair with the lexicographically smallest (min leaf id, min leaf id)
/// key, so the tree does not depend on the order of the input.
pub fn task_tree(matrix: &ScoreMatrix) -> Result<Dendrogram> {
    let n = matrix.size();
    if n == 0 {
        return Err(Error::Empty("score matrix"));
    }
    let ids = &matrix.ids;
    if ids.iter().collect::<HashSet<_>>().len() != n {
        return Err(Error::invalid("task ids", "duplicate id"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (matrix.get(i, j) - matrix.get(j, i)).abs();
            if diff > 1e-9 || diff.is_nan() {
                return Err(Error::Asymmetric {
                    row: i,
                    col: j,
                    diff,
                });
            }
        }
    }
    let scale = 1.0 + matrix.lambda;
    let dist = |i: usize, j: usize| {
        let s = (matrix.get(i, j) + matrix.get(j, i)) / 2.0;
        1.0 - s / scale
    };

    let mut clusters: Vec<Cluster> = (0..n)
        .map(|i| Cluster {
            node: i,
            members: vec![i],
        })
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while clusters.len() > 1 {
        let mut best: Option<(f64, (&str, &str), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let (ca, cb) = (&clusters[a], &clusters[b]);
                let mut total = 0.0;
                for &x in &ca.members {
                    for &y in &cb.members {
                        total += dist(x, y);
                    }
                }
                let d = total / (ca.members.len() * cb.members.len()) as f64;
                let ka = ids[ca.members[0]].as_str();
                let kb = ids[cb.members[0]].as_str();
                let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, a, b));
                }
            }
        }
        let (height, _, a, b) = best.expect("at least two clusters");
        let cb = clusters.remove(b);
        let ca = clusters.remove(a);
        let (left, right) = if ids[ca.members[0]] <= ids[cb.members[0]] {
            (ca, cb)
        } else {
            (cb, ca)
        };
        let mut members: Vec<usize> = left.members.iter().chain(&right.members).copied().collect();
        members.sort_by(|x, y| ids[*x].cmp(&ids[*y]));
        merges.push(Merge {
            left: left.node,
            right: right.node,
            height,
            size: members.len(),
        });
        clusters.push(Cluster {
            node: n + merges.len() - 1,
            members,
        });
    }
    Ok(Dendrogram {
        leaves: ids.clone(),
        merges,
        distance: format!("1 - score/(1+lambda), lambda = {}", sig9(matrix.lambda)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transferability::RankDirection;

    fn ranking(ids: &[&str]) -> RankingTable {
        let n = ids.len();
        RankingTable::from_values(
            "q",
            RankDirection::DescendingByScore,
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), (n - i) as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn precision_recall_counts() {
        let r = ranking(&["a", "b", "c", "d", "e", "f"]);
        let rel = RelevanceSet::new("q", ["a", "b", "c", "e", "x"]).unwrap();
        assert_eq!(precision_at_k(&r, &rel, 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, &rel, 5).unwrap(), 0.8);
        assert_eq!(recall_at_k(&r, &rel, 5).unwrap(), 0.8);
        assert_eq!(recall_at_k(&r, &rel, 6).unwrap(), 0.8);
        let none = RelevanceSet::new("q", ["z"]).unwrap();
        assert_eq!(precision_at_k(&r, &none, 3).unwrap(), 0.0);
        assert_eq!(recall_at_k(&r, &none, 3).unwrap(), 0.0);
        assert!(precision_at_k(&r, &rel, 0).is_err());
        assert!(precision_at_k(&r, &rel, 7).is_err());
    }

    #[test]
    fn full_retrieval_recall() {
        let r = ranking(&["a", "b", "c"]);
        let rel = RelevanceSet::new("q", ["c", "a"]).unwrap();
        assert_eq!(recall_at_k(&r, &rel, 3).unwrap(), 1.0);
    }

    #[test]
    fn relevance_set_validation() {
        assert!(RelevanceSet::new("q", Vec::<String>::new()).is_err());
        assert!(RelevanceSet::new("q", ["a", "a"]).is_err());
    }

    #[test]
    fn curve_all_relevant() {
        let r = ranking(&["a", "b", "c"]);
        let rel = RelevanceSet::new("q", ["a", "b", "c"]).unwrap();
        let curve = pr_curve(&[r], &[rel]).unwrap();
        assert!(curve.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(curve.points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn curve_missing_query() {
        let r = ranking(&["a", "b"]);
        let rel = RelevanceSet::new("other", ["a"]).unwrap();
        assert!(matches!(
            pr_curve(&[r], &[rel]),
            Err(Error::MissingQuery(_))
        ));
    }

    #[test]
    fn correlation_examples() {
        assert_eq!(
            sim_accuracy_correlation(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.7]).unwrap(),
            1.0
        );
        assert_eq!(
            sim_accuracy_correlation(&[1.0, 2.0, 3.0], &[0.7, 0.5, 0.1]).unwrap(),
            -1.0
        );
        assert_eq!(
            sim_accuracy_correlation(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 3.0, 4.0]).unwrap(),
            0.8
        );
        let err = sim_accuracy_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(err.to_string().starts_with("degenerate"));
        assert!(sim_accuracy_correlation(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    fn matrix(ids: &[&str], lambda: f64, values: Vec<f64>) -> ScoreMatrix {
        ScoreMatrix::new(ids.iter().map(|s| s.to_string()).collect(), lambda, values).unwrap()
    }

    #[test]
    fn identical_pair_merges_first() {
        let m = matrix(
            &["a", "b", "c"],
            1.0,
            vec![2.0, 0.5, 2.0, 0.5, 2.0, 0.5, 2.0, 0.5, 2.0],
        );
        let tree = task_tree(&m).unwrap();
        assert_eq!(tree.merges[0].left, 0);
        assert_eq!(tree.merges[0].right, 2);
        assert_eq!(tree.merges[0].height, 0.0);
    }

    #[test]
    fn two_blocks() {
        let m = matrix(
            &["a", "b", "c", "d"],
            0.0,
            vec![
                1.0, 0.9, 0.1, 0.1, //
                0.9, 1.0, 0.1, 0.1, //
                0.1, 0.1, 1.0, 0.9, //
                0.1, 0.1, 0.9, 1.0,
            ],
        );
        let tree = task_tree(&m).unwrap();
        let h = |x: f64| (x * 1e9).round() / 1e9;
        assert_eq!(h(tree.merges[0].height), 0.1);
        assert_eq!(h(tree.merges[1].height), 0.1);
        assert_eq!(h(tree.merges[2].height), 0.9);
        assert_eq!(tree.to_newick(), "((a:0.1,b:0.1):0.8,(c:0.1,d:0.1):0.8);");
    }

    #[test]
    fn single_leaf() {
        let tree = task_tree(&matrix(&["solo"], 1.0, vec![2.0])).unwrap();
        assert!(tree.merges.is_empty());
        assert_eq!(tree.to_newick(), "solo;");
    }

    #[test]
    fn asymmetric_rejected() {
        let m = matrix(&["a", "b"], 1.0, vec![2.0, 0.5, 0.6, 2.0]);
        assert!(matches!(task_tree(&m), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn quoted_labels() {
        assert_eq!(newick_label("plain"), "plain");
        assert_eq!(newick_label("has space"), "'has space'");
        assert_eq!(newick_label("o'k"), "'o''k'");
    }
}

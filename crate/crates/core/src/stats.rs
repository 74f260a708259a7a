//! Rank statistics shared by the edge term and the evaluation metrics.

use crate::error::{Error, Result};

/// 1-based fractional ranks; tied values share the mean of the ranks they
/// span. Inputs must be finite.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties, computed as the
/// Pearson correlation of the rank vectors. Without ties this equals
/// `1 − 6Σd²/(m³ − m)`.
///
/// Fails with [`Error::Degenerate`] naming `what` when either input is
/// constant.
pub fn spearman(a: &[f64], b: &[f64], what: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(what));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(Error::NonFinite { what: "rank input" });
    }
    pearson(&average_ranks(a), &average_ranks(b)).ok_or(Error::Degenerate(what))
}

/// Median of a non-empty sample (mean of the two middle values for even
/// lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_fixtures() {
        let r = spearman(&[0.1, 0.5, 0.9], &[0.9, 0.5, 0.1], "x").unwrap();
        assert_eq!(r, -1.0);
        let r = spearman(&[0.1, 0.2, 0.3, 0.4], &[0.2, 0.1, 0.3, 0.4], "x").unwrap();
        assert_eq!(r, 0.8);
    }

    #[test]
    fn constant_is_degenerate() {
        let err = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], "edge distribution").unwrap_err();
        assert_eq!(err.to_string(), "degenerate edge distribution");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}

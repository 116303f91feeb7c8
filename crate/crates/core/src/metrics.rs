//! Utility and fairness measurements over a node mask.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Split;
use crate::ssl::{group_prototypes, group_similarities, GroupStat};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// ROC AUC over `mask`: the probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8], mask: &[usize]) -> Result<f64> {
    let mut pts: Vec<(f64, u8)> = mask.iter().map(|&i| (scores[i], labels[i])).collect();
    let n_pos = pts.iter().filter(|p| p.1 == 1).count() as u128;
    let n_neg = pts.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined("AUC needs both classes in the mask".into()));
    }
    if pts.iter().any(|p| p.0.is_nan()) {
        return Err(Error::MetricUndefined("NaN score".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the number of correctly ordered pairs, so ties stay integral.
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut k = 0;
    while k < pts.len() {
        let mut end = k;
        while end < pts.len() && pts[end].0 == pts[k].0 {
            end += 1;
        }
        let pos = pts[k..end].iter().filter(|p| p.1 == 1).count() as u128;
        let neg = (end - k) as u128 - pos;
        doubled += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        k = end;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

fn rate(hits: usize, total: usize, what: &str) -> Result<f64> {
    if total == 0 {
        Err(Error::MetricUndefined(format!("{what} is empty")))
    } else {
        Ok(hits as f64 / total as f64)
    }
}

/// `|P(ŷ=1 | s=0) - P(ŷ=1 | s=1)|` over `mask`.
pub fn delta_sp(pred: &[u8], sensitive: &[u8], mask: &[usize]) -> Result<f64> {
    let mut total = [0usize; 2];
    let mut pos = [0usize; 2];
    for &i in mask {
        let g = usize::from(sensitive[i]);
        total[g] += 1;
        pos[g] += usize::from(pred[i]);
    }
    Ok((rate(pos[0], total[0], "group s=0")? - rate(pos[1], total[1], "group s=1")?).abs())
}

/// `|P(ŷ=1 | y=1, s=0) - P(ŷ=1 | y=1, s=1)|` over `mask`.
pub fn delta_eo(pred: &[u8], labels: &[u8], sensitive: &[u8], mask: &[usize]) -> Result<f64> {
    let mut total = [0usize; 2];
    let mut pos = [0usize; 2];
    for &i in mask.iter().filter(|&&i| labels[i] == 1) {
        let g = usize::from(sensitive[i]);
        total[g] += 1;
        pos[g] += usize::from(pred[i]);
    }
    Ok((rate(pos[0], total[0], "cell y=1,s=0")? - rate(pos[1], total[1], "cell y=1,s=1")?).abs())
}

/// `ŷ_i = 1` iff `score_i >= threshold`.
pub fn binarize(scores: &[f64], threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(scores.iter().map(|&s| u8::from(s >= threshold)).collect())
}

/// Similarity distribution of each group around its own prototype. Shares
/// its arithmetic with the migration machinery.
pub fn group_similarity_stats(z: ArrayView2<'_, f64>, groups: &[u8]) -> Result<[GroupStat; 2]> {
    let t = group_prototypes(z, groups).map_err(|e| match e {
        Error::Degenerate(m) => Error::MetricUndefined(m),
        other => other,
    })?;
    Ok(group_similarities(z, t.view(), groups).stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub auc: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
    pub group_stats: [GroupStat; 2],
    pub threshold: f64,
    pub split: Split,
}

/// Full report for the nodes of `mask`. Group statistics cover every node.
pub fn fairness_report(
    scores: &[f64],
    labels: &[u8],
    sensitive: &[u8],
    z: ArrayView2<'_, f64>,
    mask: &[usize],
    split: Split,
    threshold: f64,
) -> Result<FairnessReport> {
    let pred = binarize(scores, threshold)?;
    let report = FairnessReport {
        auc: auc(scores, labels, mask)?,
        delta_sp: delta_sp(&pred, sensitive, mask)?,
        delta_eo: delta_eo(&pred, labels, sensitive, mask)?,
        group_stats: group_similarity_stats(z, sensitive)?,
        threshold,
        split,
    };
    let finite = [report.auc, report.delta_sp, report.delta_eo]
        .iter()
        .chain(report.group_stats.iter().flat_map(|g| [g.mean, g.std].into_iter()).collect::<Vec<_>>().iter())
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::numeric("fairness report", "non-finite metric"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], &all(4)).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[0, 1, 0, 1], &all(4)).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], &all(4)).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1], &all(2)), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn parity_examples() {
        // Rates 0.8 vs 0.5.
        let s = [0u8, 0, 0, 0, 0, 1, 1, 1, 1];
        let p = [1u8, 1, 1, 1, 0, 1, 1, 0, 0];
        assert!((delta_sp(&p, &s, &all(9)).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(delta_sp(&[1, 0, 1, 0], &[0, 0, 1, 1], &all(4)).unwrap(), 0.0);
        assert!(matches!(delta_sp(&[1, 0], &[0, 0], &all(2)), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn equal_opportunity_examples() {
        // TPR 1.0 in s=0, 0.6 in s=1.
        let y = [1u8, 1, 1, 1, 1, 1, 1, 0];
        let s = [0u8, 0, 1, 1, 1, 1, 1, 0];
        let p = [1u8, 1, 1, 1, 1, 0, 0, 1];
        assert!((delta_eo(&p, &y, &s, &all(8)).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(delta_eo(&y, &y, &s, &all(8)).unwrap(), 0.0);
        assert!(matches!(delta_eo(&p, &[0; 8], &s, &all(8)), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        assert_eq!(binarize(&[0.5, 0.5], 0.5).unwrap(), vec![1, 1]);
        assert_eq!(binarize(&[0.2, 0.7, 0.69], 0.7).unwrap(), vec![0, 1, 0]);
        assert!(matches!(binarize(&[0.5], 1.0), Err(Error::Config(_))));
        assert!(matches!(binarize(&[0.5], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn similarity_stats_for_tight_and_identical_groups() {
        let z = array![[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 3.0]];
        let st = group_similarity_stats(z.view(), &[0, 0, 1, 1]).unwrap();
        assert!(st.iter().all(|g| g.std.abs() < 1e-12 && (g.mean - 1.0).abs() < 1e-12));
        let z = array![[1.0, 0.5], [0.2, 1.0], [1.0, 0.5], [0.2, 1.0]];
        let st = group_similarity_stats(z.view(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(st[0].mean, st[1].mean);
        assert!(matches!(group_similarity_stats(z.view(), &[0, 0, 0, 0]), Err(Error::MetricUndefined(_))));
    }

    proptest! {
        #[test]
        fn fairness_gaps_ignore_group_relabeling(
            cells in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), 4..40)
        ) {
            let pred: Vec<u8> = cells.iter().map(|c| c.0).collect();
            let y: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let s: Vec<u8> = cells.iter().map(|c| c.2).collect();
            let flipped: Vec<u8> = s.iter().map(|v| 1 - v).collect();
            let m = all(cells.len());
            if let Ok(a) = delta_sp(&pred, &s, &m) {
                prop_assert_eq!(a, delta_sp(&pred, &flipped, &m).unwrap());
            }
            if let Ok(a) = delta_eo(&pred, &y, &s, &m) {
                prop_assert_eq!(a, delta_eo(&pred, &y, &flipped, &m).unwrap());
                prop_assert_eq!(delta_eo(&y, &y, &s, &m).unwrap(), 0.0);
            }
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            pts in proptest::collection::vec((-3.0f64..3.0, 0u8..2), 2..30)
        ) {
            let scores: Vec<f64> = pts.iter().map(|p| (p.0 * 4.0).round() / 4.0).collect();
            let labels: Vec<u8> = pts.iter().map(|p| p.1).collect();
            let m = all(pts.len());
            if let Ok(a) = auc(&scores, &labels, &m) {
                let t: Vec<f64> = scores.iter().map(|v| (2.0 * v).exp() + 1.0).collect();
                prop_assert_eq!(a, auc(&t, &labels, &m).unwrap());
            }
        }
    }
}

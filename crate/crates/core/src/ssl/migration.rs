//! Pseudo-demographic groups: prototypes, similarity distributions,
//! outlier detection and group flips.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cosine::{cosine, cosine_with_grad};
use crate::error::{Error, Result};

/// Mean and population standard deviation of one group's similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Similarities {
    pub q: Array1<f64>,
    pub stats: [GroupStat; 2],
}

/// `T_j = Σ_{i: P_i = j} Z_i`, a sum rather than a mean.
pub fn group_prototypes(z: ArrayView2<'_, f64>, groups: &[u8]) -> Result<Array2<f64>> {
    let mut t = Array2::zeros((2, z.ncols()));
    let mut counts = [0usize; 2];
    for (row, &g) in z.rows().into_iter().zip(groups) {
        t.row_mut(usize::from(g)).scaled_add(1.0, &row);
        counts[usize::from(g)] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!("pseudo-group {empty} has no members")));
    }
    Ok(t)
}

/// `Q_i = cos(T_{P_i}, Z_i)` and per-group (μ, σ).
pub fn group_similarities(z: ArrayView2<'_, f64>, prototypes: ArrayView2<'_, f64>, groups: &[u8]) -> Similarities {
    let q: Array1<f64> =
        z.rows().into_iter().zip(groups).map(|(row, &g)| cosine(prototypes.row(usize::from(g)), row)).collect();
    let stats = [0u8, 1].map(|g| stat_of(q.view(), groups, g));
    Similarities { q, stats }
}

fn stat_of(q: ArrayView1<'_, f64>, groups: &[u8], g: u8) -> GroupStat {
    let vals: Vec<f64> = q.iter().zip(groups).filter(|(_, &p)| p == g).map(|(v, _)| *v).collect();
    let count = vals.len();
    if count == 0 {
        return GroupStat { count, mean: f64::NAN, std: f64::NAN };
    }
    let mean = vals.iter().sum::<f64>() / count as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    GroupStat { count, mean, std: var.sqrt() }
}

/// Nodes with `Q_i < μ_{P_i} - 2 σ_{P_i}`, ascending.
pub fn detect_outliers(q: ArrayView1<'_, f64>, stats: &[GroupStat; 2], groups: &[u8]) -> Vec<usize> {
    q.iter()
        .zip(groups)
        .enumerate()
        .filter(|(_, (&qi, &g))| {
            let st = stats[usize::from(g)];
            qi < st.mean - 2.0 * st.std
        })
        .map(|(i, _)| i)
        .collect()
}

/// Value and gradient w.r.t. `Z` of
/// `(1/|O|) Σ_{i∈O} w_i (1 - cos(Z_i, T_{1-P_i}))`, with `T` held constant.
/// Defined as zero when `O` is empty.
pub fn migration_loss(
    z: ArrayView2<'_, f64>,
    prototypes: ArrayView2<'_, f64>,
    groups: &[u8],
    outliers: &[usize],
    weights: &[f64],
) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(z.raw_dim());
    if outliers.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / outliers.len() as f64;
    let mut value = 0.0;
    for &i in outliers {
        let other = prototypes.row(usize::from(1 - groups[i]));
        let (c, dz, _) = cosine_with_grad(z.row(i), other);
        value += weights[i] * (1.0 - c);
        grad.row_mut(i).scaled_add(-weights[i] * inv, &dz);
    }
    (value * inv, grad)
}

/// `w_i = max(|S=0|, |S=1|) / |S=S_i|`, computed from the raw attribute.
pub fn reweight(sensitive: &[u8]) -> Result<Vec<f64>> {
    let ones = sensitive.iter().filter(|&&s| s == 1).count();
    let sizes = [sensitive.len() - ones, ones];
    if sizes.contains(&0) {
        return Err(Error::Config("reweighting needs both sensitive groups present".into()));
    }
    let big = sizes[0].max(sizes[1]) as f64;
    Ok(sensitive.iter().map(|&s| big / sizes[usize::from(s)] as f64).collect())
}

/// Smallest size a pseudo-group may shrink to: `max(2, ceil(n / 100))`.
pub fn min_group_size(n: usize) -> usize {
    n.div_ceil(100).max(2)
}

/// One migration round, as written to the trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub epoch: usize,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub n_flips_0to1: usize,
    pub n_flips_1to0: usize,
    pub n_skipped: usize,
}

/// Evolving pseudo-sensitive assignment and the statistics it was last
/// evaluated under.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationState {
    groups: Vec<u8>,
    prototypes: Array2<f64>,
    similarities: Option<Similarities>,
    outliers: Vec<usize>,
    frozen: bool,
    min_group_size: usize,
    history: Vec<MigrationRecord>,
}

impl MigrationState {
    /// Starts from the raw sensitive attribute.
    pub fn new(sensitive: &[u8]) -> Self {
        MigrationState {
            groups: sensitive.to_vec(),
            prototypes: Array2::zeros((2, 0)),
            similarities: None,
            outliers: Vec::new(),
            frozen: false,
            min_group_size: min_group_size(sensitive.len()),
            history: Vec::new(),
        }
    }

    /// A frozen state over fixed groups, for runs without pretraining.
    pub fn frozen_from(groups: &[u8]) -> Self {
        let mut s = Self::new(groups);
        s.frozen = true;
        s
    }

    pub fn groups(&self) -> &[u8] {
        &self.groups
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f64> {
        self.prototypes.view()
    }

    pub fn similarities(&self) -> Option<&Similarities> {
        self.similarities.as_ref()
    }

    pub fn outliers(&self) -> &[usize] {
        &self.outliers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn min_group_size(&self) -> usize {
        self.min_group_size
    }

    pub fn set_min_group_size(&mut self, size: usize) {
        self.min_group_size = size;
    }

    pub fn history(&self) -> &[MigrationRecord] {
        &self.history
    }

    pub fn group_sizes(&self) -> [usize; 2] {
        let ones = self.groups.iter().filter(|&&g| g == 1).count();
        [self.groups.len() - ones, ones]
    }

    /// Recomputes prototypes, similarities and outliers for embeddings `z`
    /// under the current groups. Allowed on frozen states.
    pub fn observe(&mut self, z: ArrayView2<'_, f64>) -> Result<&[usize]> {
        if z.nrows() != self.groups.len() {
            return Err(Error::Contract(format!("{} embeddings for {} nodes", z.nrows(), self.groups.len())));
        }
        self.prototypes = group_prototypes(z, &self.groups)?;
        let sims = group_similarities(z, self.prototypes.view(), &self.groups);
        self.outliers = detect_outliers(sims.q.view(), &sims.stats, &self.groups);
        self.similarities = Some(sims);
        Ok(&self.outliers)
    }

    /// Migration loss against the last observation.
    pub fn loss(&self, z: ArrayView2<'_, f64>, weights: &[f64]) -> (f64, Array2<f64>) {
        migration_loss(z, self.prototypes.view(), &self.groups, &self.outliers, weights)
    }

    fn record(&self, epoch: usize, flips: [usize; 2], skipped: usize) -> MigrationRecord {
        let [s0, s1] = self
            .similarities
            .as_ref()
            .map(|s| s.stats)
            .unwrap_or([GroupStat { count: 0, mean: f64::NAN, std: f64::NAN }; 2]);
        MigrationRecord {
            epoch,
            mu0: s0.mean,
            sigma0: s0.std,
            mu1: s1.mean,
            sigma1: s1.std,
            n_flips_0to1: flips[0],
            n_flips_1to0: flips[1],
            n_skipped: skipped,
        }
    }

    /// Flips `P_i = 1 - P_i` for each index in `outliers`, ascending, skipping
    /// any flip that would shrink a group below the size floor.
    pub fn migrate(&mut self, outliers: &[usize], epoch: usize) -> Result<MigrationRecord> {
        if self.frozen {
            return Err(Error::Contract("pseudo-groups are frozen".into()));
        }
        let mut order = outliers.to_vec();
        order.sort_unstable();
        order.dedup();
        let mut sizes = self.group_sizes();
        let mut flips = [0usize; 2];
        let mut skipped = 0;
        for i in order {
            let from = usize::from(self.groups[i]);
            if sizes[from] <= self.min_group_size {
                skipped += 1;
                continue;
            }
            sizes[from] -= 1;
            sizes[1 - from] += 1;
            self.groups[i] = 1 - self.groups[i];
            flips[from] += 1;
        }
        let rec = self.record(epoch, flips, skipped);
        self.history.push(rec);
        Ok(rec)
    }

    /// Appends a trace row without migrating, for runs where migration is off
    /// or the cadence skips this epoch.
    pub fn record_without_migration(&mut self, epoch: usize) -> MigrationRecord {
        let rec = self.record(epoch, [0, 0], 0);
        self.history.push(rec);
        rec
    }
}

/// How repeated detect/migrate rounds on fixed embeddings ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedPointOutcome {
    /// No flips in round `rounds`.
    Converged { rounds: usize },
    /// The assignment after round `rounds` repeats one seen `period` rounds earlier.
    Cycle { rounds: usize, period: usize },
    /// Still changing after the round budget.
    Exhausted { rounds: usize },
}

/// Runs detect/migrate rounds on fixed embeddings until nothing flips, the
/// assignment revisits an earlier state, or `max_rounds` is reached. Works
/// on a copy of `state`.
pub fn migrate_to_fixed_point(
    z: ArrayView2<'_, f64>,
    state: &MigrationState,
    max_rounds: usize,
) -> Result<(FixedPointOutcome, MigrationState)> {
    let mut st = state.clone();
    st.frozen = false;
    st.history.clear();
    let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
    seen.insert(st.groups.clone(), 0);
    for round in 1..=max_rounds {
        let outliers = st.observe(z)?.to_vec();
        let rec = st.migrate(&outliers, round)?;
        if rec.n_flips_0to1 + rec.n_flips_1to0 == 0 {
            return Ok((FixedPointOutcome::Converged { rounds: round }, st));
        }
        if let Some(prev) = seen.insert(st.groups.clone(), round) {
            return Ok((FixedPointOutcome::Cycle { rounds: round, period: round - prev }, st));
        }
    }
    Ok((FixedPointOutcome::Exhausted { rounds: max_rounds }, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn prototypes_are_group_sums() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let t = group_prototypes(z.view(), &[0, 0, 1]).unwrap();
        assert_eq!(t, array![[1.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(group_prototypes(z.view(), &[0, 0, 0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sum_and_mean_prototypes_give_same_similarities() {
        let z = Array2::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f64 * 0.77).sin());
        let g = [0, 1, 0, 0, 1, 1, 0];
        let t = group_prototypes(z.view(), &g).unwrap();
        let mut mean = t.clone();
        mean.row_mut(0).mapv_inplace(|v| v / 4.0);
        mean.row_mut(1).mapv_inplace(|v| v / 3.0);
        let a = group_similarities(z.view(), t.view(), &g);
        let b = group_similarities(z.view(), mean.view(), &g);
        for (x, y) in a.q.iter().zip(b.q.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(detect_outliers(a.q.view(), &a.stats, &g), detect_outliers(b.q.view(), &b.stats, &g));
    }

    #[test]
    fn identical_members_and_orthogonal_rows() {
        let z = array![[1.0, 2.0], [1.0, 2.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]];
        let g = [0, 0, 1, 1, 1];
        let t = group_prototypes(z.view(), &g).unwrap();
        let s = group_similarities(z.view(), t.view(), &g);
        assert!((s.q[0] - 1.0).abs() < 1e-15 && s.stats[0].std.abs() < 1e-15);
        let z2 = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let t2 = array![[1.0, 0.0], [1.0, 0.0]];
        let s2 = group_similarities(z2.view(), t2.view(), &[0, 0, 0]);
        assert_eq!(s2.q[2], 0.0);
    }

    #[test]
    fn stats_and_threshold_for_one_far_member() {
        // Ten similarities of 0.99 and one of 0.0.
        let mut q = vec![0.99; 10];
        q.push(0.0);
        let q = Array1::from(q);
        let g = vec![0u8; 11];
        let st = stat_of(q.view(), &g, 0);
        // Oracle: μ = 9.9/11 = 0.9, σ² = (10·0.09² + 0.9²)/11.
        let mu = 9.9 / 11.0;
        let sigma = ((10.0 * (0.99f64 - mu).powi(2) + mu * mu) / 11.0).sqrt();
        assert!((st.mean - 0.9).abs() < 1e-12);
        assert!((st.std - sigma).abs() < 1e-12);
        assert!((st.std - 0.2846).abs() < 1e-4);
        let threshold = mu - 2.0 * sigma;
        assert!((threshold - 0.3308).abs() < 1e-4);
        let stats = [st, GroupStat { count: 0, mean: 0.0, std: 0.0 }];
        assert_eq!(detect_outliers(q.view(), &stats, &g), vec![10]);
    }

    #[test]
    fn singleton_and_uniform_groups_have_no_outliers() {
        let z = array![[1.0, 0.0], [0.3, 0.4], [0.3, 0.4], [0.3, 0.4]];
        let g = [0, 1, 1, 1];
        let t = group_prototypes(z.view(), &g).unwrap();
        let s = group_similarities(z.view(), t.view(), &g);
        assert!(detect_outliers(s.q.view(), &s.stats, &g).is_empty());
    }

    #[test]
    fn migrate_flips_exactly_the_outliers() {
        let mut st = MigrationState::new(&[0, 0, 0, 1, 1, 1, 0, 1]);
        st.set_min_group_size(2);
        let before = st.groups().to_vec();
        st.migrate(&[], 0).unwrap();
        assert_eq!(st.groups(), &before[..]);
        let rec = st.migrate(&[3], 1).unwrap();
        assert_eq!(st.groups()[3], 0);
        assert_eq!((rec.n_flips_0to1, rec.n_flips_1to0), (0, 1));
        for i in (0..8).filter(|&i| i != 3) {
            assert_eq!(st.groups()[i], before[i]);
        }
        assert_eq!(st.history().len(), 2);
    }

    #[test]
    fn flips_that_would_empty_a_group_are_skipped() {
        // Group 1 has exactly min_group_size = 2 members.
        let mut st = MigrationState::new(&[0, 0, 0, 0, 1, 1]);
        assert_eq!(st.min_group_size(), 2);
        let rec = st.migrate(&[4, 5], 0).unwrap();
        assert_eq!(rec.n_skipped, 2);
        assert_eq!(st.group_sizes(), [4, 2]);
        // Ascending order: first flip accepted, the second would breach the floor.
        let mut st = MigrationState::new(&[0, 0, 1, 1, 1]);
        let rec = st.migrate(&[2, 3, 4], 0).unwrap();
        assert_eq!((rec.n_flips_1to0, rec.n_skipped), (1, 2));
        assert_eq!(st.groups(), &[0, 0, 0, 1, 1]);
    }

    #[test]
    fn frozen_state_rejects_migration() {
        let mut st = MigrationState::new(&[0, 1, 0, 1]);
        st.freeze();
        assert!(matches!(st.migrate(&[0], 0), Err(Error::Contract(_))));
    }

    #[test]
    fn migration_loss_examples() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let t = array![[0.0, 2.0], [3.0, 0.0]];
        let (v, g) = migration_loss(z.view(), t.view(), &[0, 1, 0], &[], &[1.0; 3]);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        // Node 0 (group 0) is parallel to T_1.
        let (v, _) = migration_loss(z.view(), t.view(), &[0, 1, 0], &[0], &[2.0; 3]);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn migration_loss_matches_scalar_oracle() {
        let z = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 7 + j * 2) as f64 * 0.31).cos());
        let g = [0u8, 1, 1, 0, 1];
        let t = group_prototypes(z.view(), &g).unwrap();
        let w = [1.0, 1.5, 1.5, 1.0, 1.5];
        let o = [1usize, 3];
        let mut oracle = 0.0;
        for &i in &o {
            let other = 1 - g[i] as usize;
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for j in 0..3 {
                dot += z[[i, j]] * t[[other, j]];
                na += z[[i, j]] * z[[i, j]];
                nb += t[[other, j]] * t[[other, j]];
            }
            oracle += w[i] * (1.0 - dot / (na.sqrt() * nb.sqrt()));
        }
        oracle /= 2.0;
        let (v, _) = migration_loss(z.view(), t.view(), &g, &o, &w);
        assert!((v - oracle).abs() < 1e-8);
    }

    #[test]
    fn reweight_examples() {
        let mut s = vec![0u8; 30];
        s.extend(vec![1u8; 10]);
        let w = reweight(&s).unwrap();
        assert!(w[..30].iter().all(|&v| v == 1.0) && w[30..].iter().all(|&v| v == 3.0));
        assert_eq!(reweight(&[0, 1, 0, 1]).unwrap(), vec![1.0; 4]);
        assert_eq!(reweight(&[0, 0, 1]).unwrap(), vec![1.0, 1.0, 2.0]);
        assert!(matches!(reweight(&[1, 1]), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_point_analysis_terminates() {
        let z = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 13 + j * 5) as f64 * 0.21).sin());
        let s: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let st = MigrationState::new(&s);
        let (outcome, after) = migrate_to_fixed_point(z.view(), &st, 50).unwrap();
        match outcome {
            FixedPointOutcome::Converged { rounds } | FixedPointOutcome::Exhausted { rounds } => assert!(rounds <= 50),
            FixedPointOutcome::Cycle { period, .. } => assert!(period >= 1),
        }
        let sizes = after.group_sizes();
        assert!(sizes.iter().all(|&c| c >= 2));
        assert_eq!(st.groups(), &s[..]);
    }
}

//! Stochastic block model with a controllable sensitive-attribute bias.
//!
//! Nodes fall into four blocks by (S, Y). The probability of an edge between
//! two nodes factors into a group term (`homophily` for same-S pairs,
//! `1 - homophily` otherwise) and a label term (`label_homophily` /
//! `1 - label_homophily`). The label term is renormalized inside every S-pair
//! so the expected edge rate between two demographic groups depends only on
//! the group term.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng;
use crate::sparse::Csr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    /// Fractions of nodes with S = 0 and S = 1.
    pub group_fractions: (f64, f64),
    /// P(y = 1 | s) for s = 0, 1.
    pub label_skew_per_group: (f64, f64),
    pub homophily: f64,
    pub label_homophily: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    /// Correlation between S and the `leak` feature column.
    pub sensitive_feature_leakage: f64,
    /// Mean shift of the label-bearing columns, in noise standard deviations.
    pub label_signal: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 2000,
            group_fractions: (0.7, 0.3),
            label_skew_per_group: (0.8, 0.3),
            homophily: 0.8,
            label_homophily: 0.8,
            avg_degree: 10.0,
            feature_dim: 8,
            sensitive_feature_leakage: 0.8,
            label_signal: 0.5,
            seed: 0,
        }
    }
}

fn prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} is not a probability")))
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 10 {
            return Err(Error::Config(format!("synthetic graph needs >= 10 nodes, got {}", self.n_nodes)));
        }
        let (g0, g1) = self.group_fractions;
        prob("group_fractions.0", g0)?;
        prob("group_fractions.1", g1)?;
        if (g0 + g1 - 1.0).abs() > 1e-9 {
            return Err(Error::Config("group fractions must sum to 1".into()));
        }
        prob("label_skew.0", self.label_skew_per_group.0)?;
        prob("label_skew.1", self.label_skew_per_group.1)?;
        prob("homophily", self.homophily)?;
        prob("label_homophily", self.label_homophily)?;
        prob("sensitive_feature_leakage", self.sensitive_feature_leakage)?;
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be >= 2".into()));
        }
        if !(self.avg_degree >= 0.0 && self.avg_degree < self.n_nodes as f64) {
            return Err(Error::Config(format!("avg_degree {} out of range", self.avg_degree)));
        }
        if !self.label_signal.is_finite() {
            return Err(Error::Config("label_signal must be finite".into()));
        }
        Ok(())
    }

    /// Reads `synth_*` keys, falling back to defaults for absent ones.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SyntheticSpec::default();
        let pair = |key: &str, default: (f64, f64)| -> Result<(f64, f64)> {
            match kv.list::<f64>(key)? {
                None => Ok(default),
                Some(v) if v.len() == 2 => Ok((v[0], v[1])),
                Some(_) => Err(Error::Config(format!("`{key}` needs two values"))),
            }
        };
        Ok(SyntheticSpec {
            n_nodes: kv.parsed_or("synth_nodes", d.n_nodes)?,
            group_fractions: pair("synth_group_fractions", d.group_fractions)?,
            label_skew_per_group: pair("synth_label_skew", d.label_skew_per_group)?,
            homophily: kv.parsed_or("synth_homophily", d.homophily)?,
            label_homophily: kv.parsed_or("synth_label_homophily", d.label_homophily)?,
            avg_degree: kv.parsed_or("synth_avg_degree", d.avg_degree)?,
            feature_dim: kv.parsed_or("synth_feature_dim", d.feature_dim)?,
            sensitive_feature_leakage: kv.parsed_or("synth_leakage", d.sensitive_feature_leakage)?,
            label_signal: kv.parsed_or("synth_label_signal", d.label_signal)?,
            seed: kv.parsed_or("synth_seed", d.seed)?,
        })
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("synth_nodes", self.n_nodes);
        kv.set("synth_group_fractions", format!("{},{}", self.group_fractions.0, self.group_fractions.1));
        kv.set("synth_label_skew", format!("{},{}", self.label_skew_per_group.0, self.label_skew_per_group.1));
        kv.set("synth_homophily", self.homophily);
        kv.set("synth_label_homophily", self.label_homophily);
        kv.set("synth_avg_degree", self.avg_degree);
        kv.set("synth_feature_dim", self.feature_dim);
        kv.set("synth_leakage", self.sensitive_feature_leakage);
        kv.set("synth_label_signal", self.label_signal);
        kv.set("synth_seed", self.seed);
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.n_nodes;
    let mut rng = rng::stream(spec.seed, "synthetic");

    let n1 = ((spec.group_fractions.1 * n as f64).round() as usize).clamp(1, n - 1);
    let mut s: Vec<u8> = (0..n).map(|i| u8::from(i < n1)).collect();
    s.shuffle(&mut rng);
    let skew = [spec.label_skew_per_group.0, spec.label_skew_per_group.1];
    let y: Vec<u8> = s.iter().map(|&si| u8::from(rng.random::<f64>() < skew[usize::from(si)])).collect();

    let mean_s = n1 as f64 / n as f64;
    let sd_s = (mean_s * (1.0 - mean_s)).sqrt();
    let leak = spec.sensitive_feature_leakage;
    let mut features = Array2::zeros((n, spec.feature_dim));
    for i in 0..n {
        features[[i, 0]] = f64::from(s[i]);
        let noise: f64 = rng.sample(StandardNormal);
        features[[i, 1]] = leak * (f64::from(s[i]) - mean_s) / sd_s + (1.0 - leak * leak).sqrt() * noise;
        let sign = if y[i] == 1 { 1.0 } else { -1.0 };
        for c in 2..spec.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features[[i, c]] = spec.label_signal * sign + noise;
        }
    }
    let mut feature_names = vec!["sensitive".to_string(), "leak".to_string()];
    feature_names.extend((2..spec.feature_dim).map(|c| format!("x{}", c - 2)));

    let edges = sample_edges(spec, &s, &y, &mut rng);
    let g = Graph {
        adjacency: Csr::from_undirected_edges(n, &edges),
        features,
        sensitive_index: 0,
        feature_names,
        labels: y.into_iter().map(Some).collect(),
        split: vec![None; n],
    };
    g.validate()?;
    Ok(g)
}

fn sample_edges(spec: &SyntheticSpec, s: &[u8], y: &[u8], rng: &mut rng::Rng) -> Vec<(usize, usize)> {
    let n = s.len();
    let mut blocks: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        blocks[usize::from(s[i]) * 2 + usize::from(y[i])].push(i);
    }
    let group_size = |g: usize| (blocks[2 * g].len() + blocks[2 * g + 1].len()) as f64;
    let label_frac = |g: usize, l: usize| blocks[2 * g + l].len() as f64 / group_size(g).max(1.0);
    let group_term = |a: usize, b: usize| if a == b { spec.homophily } else { 1.0 - spec.homophily };
    let label_term = |a: usize, b: usize| {
        if a == b {
            spec.label_homophily
        } else {
            1.0 - spec.label_homophily
        }
    };
    // Expected label term over pairs drawn from groups (a, b).
    let label_norm = |a: usize, b: usize| {
        let mut e = 0.0;
        for la in 0..2 {
            for lb in 0..2 {
                e += label_frac(a, la) * label_frac(b, lb) * label_term(la, lb);
            }
        }
        e
    };
    let pair_count = |a: usize, b: usize| {
        let (na, nb) = (blocks[a].len() as f64, blocks[b].len() as f64);
        if a == b {
            na * (na - 1.0) / 2.0
        } else {
            na * nb
        }
    };
    let weight = |a: usize, b: usize| {
        let (ga, la, gb, lb) = (a / 2, a % 2, b / 2, b % 2);
        let norm = label_norm(ga, gb);
        if norm == 0.0 {
            0.0
        } else {
            group_term(ga, gb) * label_term(la, lb) / norm
        }
    };
    let mut total_weight = 0.0;
    for a in 0..4 {
        for b in a..4 {
            total_weight += pair_count(a, b) * weight(a, b);
        }
    }
    let target_edges = spec.avg_degree * n as f64 / 2.0;
    let scale = if total_weight > 0.0 { target_edges / total_weight } else { 0.0 };

    let mut edges = Vec::new();
    for a in 0..4 {
        for b in a..4 {
            let pairs = pair_count(a, b) as u64;
            let p = (scale * weight(a, b)).min(1.0);
            if pairs == 0 || p <= 0.0 {
                continue;
            }
            let m = Binomial::new(pairs, p).map(|d| d.sample(rng)).unwrap_or(0);
            sample_block_pairs(&blocks[a], &blocks[b], a == b, m, pairs, rng, &mut edges);
        }
    }
    edges
}

fn sample_block_pairs(
    left: &[usize],
    right: &[usize],
    same: bool,
    m: u64,
    pairs: u64,
    rng: &mut rng::Rng,
    out: &mut Vec<(usize, usize)>,
) {
    if m == 0 {
        return;
    }
    let mut all = |out: &mut Vec<(usize, usize)>| {
        let mut cand = Vec::with_capacity(pairs as usize);
        for (ia, &u) in left.iter().enumerate() {
            let start = if same { ia + 1 } else { 0 };
            for &v in &right[start..] {
                cand.push((u, v));
            }
        }
        cand.shuffle(rng);
        out.extend_from_slice(&cand[..m as usize]);
    };
    if m * 3 > pairs {
        all(out);
        return;
    }
    let mut seen = HashSet::with_capacity(m as usize);
    while (seen.len() as u64) < m {
        let u = left[rng.random_range(0..left.len())];
        let v = right[rng.random_range(0..right.len())];
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            out.push(key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    /// Edge rate within groups and across groups, by direct pair counting.
    fn edge_rates(g: &Graph) -> (f64, f64) {
        let s = g.sensitive();
        let n1 = s.iter().filter(|&&v| v == 1).count() as f64;
        let n0 = s.len() as f64 - n1;
        let (mut within, mut across) = (0.0, 0.0);
        for (u, v) in g.adjacency.edges() {
            if s[u] == s[v] {
                within += 1.0;
            } else {
                across += 1.0;
            }
        }
        let within_pairs = n0 * (n0 - 1.0) / 2.0 + n1 * (n1 - 1.0) / 2.0;
        (within / within_pairs, across / (n0 * n1))
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SyntheticSpec { n_nodes: 300, seed: 9, ..Default::default() };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn too_small_or_bad_probabilities_rejected() {
        let small = SyntheticSpec { n_nodes: 9, ..Default::default() };
        assert!(matches!(generate_synthetic(&small), Err(Error::Config(_))));
        let bad = SyntheticSpec { homophily: 1.2, ..Default::default() };
        assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
        let narrow = SyntheticSpec { feature_dim: 1, ..Default::default() };
        assert!(matches!(generate_synthetic(&narrow), Err(Error::Config(_))));
    }

    #[test]
    fn label_skew_is_reproduced() {
        let spec = SyntheticSpec { n_nodes: 4000, seed: 1, ..Default::default() };
        let g = generate_synthetic(&spec).unwrap();
        let s = g.sensitive();
        for (grp, target) in [(0u8, 0.8), (1u8, 0.3)] {
            let members: Vec<usize> = (0..g.n_nodes()).filter(|&i| s[i] == grp).collect();
            let pos = members.iter().filter(|&&i| g.labels[i] == Some(1)).count() as f64;
            let rate = pos / members.len() as f64;
            assert!((rate - target).abs() < 0.05, "group {grp}: {rate}");
        }
    }

    #[test]
    fn zero_leakage_leaves_leak_column_uncorrelated() {
        let spec = SyntheticSpec { n_nodes: 5000, sensitive_feature_leakage: 0.0, seed: 2, ..Default::default() };
        let g = generate_synthetic(&spec).unwrap();
        let s: Vec<f64> = g.sensitive_column().to_vec();
        let leak: Vec<f64> = g.features.column(1).to_vec();
        assert!(pearson(&s, &leak).abs() < 0.05);

        let high = generate_synthetic(&SyntheticSpec { sensitive_feature_leakage: 0.8, ..spec }).unwrap();
        let r = pearson(&high.sensitive_column().to_vec(), &high.features.column(1).to_vec());
        assert!((r - 0.8).abs() < 0.05, "{r}");
    }

    #[test]
    fn homophily_controls_group_edge_rates() {
        for label_h in [0.5, 0.8] {
            let base = SyntheticSpec { n_nodes: 3000, label_homophily: label_h, seed: 4, ..Default::default() };
            let (w, a) = edge_rates(&generate_synthetic(&SyntheticSpec { homophily: 0.5, ..base.clone() }).unwrap());
            assert!((w / a - 1.0).abs() < 0.10, "h=0.5 label_h={label_h}: {w} vs {a}");
            let (w, a) = edge_rates(&generate_synthetic(&SyntheticSpec { homophily: 0.8, ..base.clone() }).unwrap());
            assert!(w > a);
            let (w, a) = edge_rates(&generate_synthetic(&SyntheticSpec { homophily: 0.3, ..base }).unwrap());
            assert!(w < a);
        }
    }

    #[test]
    fn average_degree_near_target() {
        let g = generate_synthetic(&SyntheticSpec { seed: 5, ..Default::default() }).unwrap();
        let deg = g.adjacency.nnz() as f64 / g.n_nodes() as f64;
        assert!((deg - 10.0).abs() < 1.0, "{deg}");
    }
}

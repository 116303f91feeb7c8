//! Supervised-stage objectives: classification, estimator, adversary and
//! the migration constraint under frozen pseudo-groups.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssl::{detect_outliers, group_prototypes, group_similarities, migration_loss};

/// Bound applied to every probability entering a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Derivative of `ln(clamp(p))` w.r.t. `p`; zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

/// Derivative of `ln(1 - clamp(p))` w.r.t. `p`.
fn dlog1m(p: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        -1.0 / (1.0 - p)
    } else {
        0.0
    }
}

/// A scalar loss with its gradient w.r.t. one probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLoss {
    pub value: f64,
    pub grad: Array1<f64>,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what}: lengths {a} and {b} differ")))
    }
}

/// Mean binary cross-entropy of `pred` against `target` over `mask`.
/// Gradient entries outside the mask are zero.
pub fn ce_loss(pred: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>, mask: &[usize]) -> Result<BinaryLoss> {
    check_len(pred.len(), target.len(), "cross-entropy")?;
    if mask.is_empty() {
        return Err(Error::Contract("cross-entropy over an empty mask".into()));
    }
    let inv = 1.0 / mask.len() as f64;
    let mut grad = Array1::zeros(pred.len());
    let mut value = 0.0;
    for &i in mask {
        let (p, y) = (pred[i], target[i]);
        let q = clamp_prob(p);
        value -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        grad[i] = -(y * dlog(p) + (1.0 - y) * dlog1m(p)) * inv;
    }
    Ok(BinaryLoss { value: value * inv, grad })
}

fn all_nodes(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Cross-entropy of the estimator output against the adversary output,
/// which is a constant target here. Gradient is w.r.t. `s_p`.
pub fn estimator_loss(s_p: ArrayView1<'_, f64>, s_a: ArrayView1<'_, f64>) -> Result<BinaryLoss> {
    check_len(s_p.len(), s_a.len(), "estimator loss")?;
    ce_loss(s_p, s_a, &all_nodes(s_p.len()))
}

/// Cross-entropy of the adversary output against the raw sensitive
/// attribute. Gradient is w.r.t. `s_a`.
pub fn standard_adversary_loss(s_a: ArrayView1<'_, f64>, sensitive: &[u8]) -> Result<BinaryLoss> {
    check_len(s_a.len(), sensitive.len(), "adversary loss")?;
    let target: Array1<f64> = sensitive.iter().map(|&s| f64::from(s)).collect();
    ce_loss(s_a, target.view(), &all_nodes(s_a.len()))
}

/// Symmetric adversarial loss
/// `-(1/2n) Σ [a ln p + (1-a) ln(1-p) + (1-a) ln p + a ln(1-p)]`
/// with `p = S^p` constant and `a = S^A`. Gradient is w.r.t. `s_a`.
///
/// The `a` terms cancel, so the value depends on `p` alone and the gradient
/// is identically zero: per node it is `-(d - d)/2n` with `d = ln p - ln(1-p)`.
pub fn adversarial_loss(s_p: ArrayView1<'_, f64>, s_a: ArrayView1<'_, f64>) -> Result<BinaryLoss> {
    check_len(s_p.len(), s_a.len(), "adversarial loss")?;
    let n = s_p.len();
    if n == 0 {
        return Err(Error::Contract("adversarial loss over zero nodes".into()));
    }
    let inv = 1.0 / (2.0 * n as f64);
    let mut value = 0.0;
    let mut grad = Array1::zeros(n);
    for i in 0..n {
        let (lp, l1p) = (clamp_prob(s_p[i]).ln(), (1.0 - clamp_prob(s_p[i])).ln());
        let a = s_a[i];
        value -= a * lp + (1.0 - a) * l1p + (1.0 - a) * lp + a * l1p;
        let d = lp - l1p;
        // Left unsimplified on purpose: the two `d` are the contributions of
        // the `a` and `(1-a)` pairs, which cancel.
        #[allow(clippy::eq_op)]
        let g = -(d - d) * inv;
        grad[i] = g;
    }
    Ok(BinaryLoss { value: value * inv, grad })
}

/// Which objective the adversary plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryObjective {
    /// The symmetric loss against the estimator output.
    #[default]
    Verbatim,
    /// Cross-entropy against the raw sensitive attribute.
    Standard,
}

impl fmt::Display for AdversaryObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversaryObjective::Verbatim => "verbatim",
            AdversaryObjective::Standard => "standard",
        })
    }
}

impl FromStr for AdversaryObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(AdversaryObjective::Verbatim),
            "standard" => Ok(AdversaryObjective::Standard),
            other => Err(Error::Config(format!("unknown adversary objective {other:?}"))),
        }
    }
}

/// Migration loss with prototypes, similarities and outliers recomputed
/// from `z` under `frozen`; no flips are ever applied.
#[derive(Debug, Clone)]
pub struct FrozenMigrationLoss {
    pub value: f64,
    pub d_z: Array2<f64>,
    pub outliers: Vec<usize>,
}

pub fn frozen_migration_loss(z: ArrayView2<'_, f64>, frozen: &[u8], weights: &[f64]) -> Result<FrozenMigrationLoss> {
    check_len(z.nrows(), frozen.len(), "frozen migration loss")?;
    check_len(z.nrows(), weights.len(), "frozen migration loss weights")?;
    let t = group_prototypes(z, frozen)?;
    let sims = group_similarities(z, t.view(), frozen);
    let outliers = detect_outliers(sims.q.view(), &sims.stats, frozen);
    let (value, d_z) = migration_loss(z, t.view(), frozen, &outliers, weights);
    Ok(FrozenMigrationLoss { value, d_z, outliers })
}

//! Counterfactual contrastive loss, personalized reconstruction loss and
//! their weighted combination.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use super::cosine::cosine_with_grad;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Loss value with the gradients w.r.t. both counterfactual embeddings.
#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub d_view0: Array2<f64>,
    pub d_view1: Array2<f64>,
}

/// `(1/n) Σ w_i [(1 - cos(z0_i, z1_i)) + cos(z0_i, z1_perm(i))]`.
///
/// The first term pulls each node's two counterfactual embeddings together;
/// the second pushes it away from a shuffled partner in the other view.
pub fn contrastive_loss(
    view0: ArrayView2<'_, f64>,
    view1: ArrayView2<'_, f64>,
    weights: &[f64],
    perm: &[usize],
) -> Result<ContrastiveLoss> {
    let n = view0.nrows();
    if view1.dim() != view0.dim() || weights.len() != n || perm.len() != n {
        return Err(Error::Contract("contrastive loss inputs disagree in shape".into()));
    }
    let mut d0 = Array2::zeros(view0.raw_dim());
    let mut d1 = Array2::zeros(view1.raw_dim());
    let mut value = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let w = weights[i] * inv_n;
        let (pos, pa, pb) = cosine_with_grad(view0.row(i), view1.row(i));
        let j = perm[i];
        let (neg, na, nb) = cosine_with_grad(view0.row(i), view1.row(j));
        value += weights[i] * ((1.0 - pos) + neg);
        d0.row_mut(i).scaled_add(-w, &pa);
        d0.row_mut(i).scaled_add(w, &na);
        d1.row_mut(i).scaled_add(-w, &pb);
        d1.row_mut(j).scaled_add(w, &nb);
    }
    Ok(ContrastiveLoss { value: value * inv_n, d_view0: d0, d_view1: d1 })
}

/// Fresh row permutation for the negative pairs. The identity is never
/// returned for `n >= 2`; a derangement is drawn when one turns up within a
/// few attempts.
pub fn shuffle_permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    for _ in 0..16 {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
    while perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.shuffle(rng);
    }
    perm
}

#[derive(Debug, Clone)]
pub struct ReconstructionLoss {
    pub value: f64,
    pub d_reconstruction: Array2<f64>,
}

/// `(1/n) Σ w_i [MSE(U_i, U_rec_i) + (S_rec_i - 0)^2 + (S_rec_i - 1)^2]`.
///
/// `U` is the attribute matrix without column `q`. The sensitive term is
/// minimized at `S_rec = 0.5`, where it equals 0.5.
pub fn reconstruction_loss(
    x: ArrayView2<'_, f64>,
    x_rec: ArrayView2<'_, f64>,
    q: usize,
    weights: &[f64],
) -> Result<ReconstructionLoss> {
    let (n, k) = x.dim();
    if x_rec.dim() != (n, k) || weights.len() != n || q >= k {
        return Err(Error::Contract("reconstruction loss inputs disagree in shape".into()));
    }
    let others = (k - 1) as f64;
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    for i in 0..n {
        let w = weights[i];
        let mut mse = 0.0;
        for j in (0..k).filter(|&j| j != q) {
            let diff = x_rec[[i, j]] - x[[i, j]];
            mse += diff * diff;
            grad[[i, j]] = w * 2.0 * diff / (others * n as f64);
        }
        if k > 1 {
            mse /= others;
        }
        let s = x_rec[[i, q]];
        value += w * (mse + s * s + (s - 1.0) * (s - 1.0));
        grad[[i, q]] = w * (2.0 * s + 2.0 * (s - 1.0)) / n as f64;
    }
    Ok(ReconstructionLoss { value: value / n as f64, d_reconstruction: grad })
}

/// `α L_con + (1 - α) L_rec`.
pub fn ssl_loss(l_con: f64, l_rec: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * l_con + (1.0 - alpha) * l_rec)
}

//! Central finite-difference checks for hand-derived gradients.

use ndarray::Array2;

use crate::models::{Gradients, Parameters};

/// Default central-difference step.
pub const STEP: f64 = 1e-6;
/// Magnitudes below this are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error between `analytic` and central differences of `f` at `x`.
pub fn check_array(x: &Array2<f64>, analytic: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> f64 {
    assert_eq!(x.dim(), analytic.dim());
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for (idx, &an) in analytic.indexed_iter() {
        let base = probe[idx];
        probe[idx] = base + STEP;
        let plus = f(&probe);
        probe[idx] = base - STEP;
        let minus = f(&probe);
        probe[idx] = base;
        worst = worst.max(relative_error(an, (plus - minus) / (2.0 * STEP)));
    }
    worst
}

/// Largest relative error over every scalar of every tensor of `params`.
pub fn check_params<P: Parameters + Clone>(params: &P, analytic: &Gradients, mut f: impl FnMut(&P) -> f64) -> f64 {
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (t, g) in analytic.iter().enumerate() {
        assert_eq!(g.dim(), params.tensors()[t].dim());
        for (idx, &an) in g.indexed_iter() {
            let base = probe.tensors()[t][idx];
            probe.tensors_mut()[t][idx] = base + STEP;
            let plus = f(&probe);
            probe.tensors_mut()[t][idx] = base - STEP;
            let minus = f(&probe);
            probe.tensors_mut()[t][idx] = base;
            worst = worst.max(relative_error(an, (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Gradients, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Adaptive-moment optimizer state for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        Adam { config, t: 0, m: params.zero_gradients(), v: params.zero_gradients() }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &Gradients) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} tensors, params {}, grads {}",
                self.m.len(),
                tensors.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in tensors.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[k].dim() {
                return Err(Error::Contract(format!("gradient {k} shape {:?} != {:?}", g.dim(), p.dim())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("optimizer tensor {k}"), "non-finite gradient"));
            }
        }
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + c.weight_decay * *p;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Scalar(Array2<f64>);

    impl Parameters for Scalar {
        fn tensors(&self) -> Vec<&Array2<f64>> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Scalar(array![[1.5, -2.0]]);
        let mut opt = Adam::new(&p, AdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            opt.step(&mut p, &vec![array![[0.0, 0.0]]]).unwrap();
        }
        assert_eq!(p.0, array![[1.5, -2.0]]);
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let mut p = Scalar(array![[1.0]]);
        let mut opt = Adam::new(&p, AdamConfig { weight_decay: 0.1, ..Default::default() });
        opt.step(&mut p, &vec![array![[0.0]]]).unwrap();
        assert!(p.0[[0, 0]] < 1.0);
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let start = Scalar(array![[0.3, 0.7]]);
        let grads = vec![array![[0.2, -1.0]]];
        let run = || {
            let mut p = Scalar(start.0.clone());
            let mut opt = Adam::new(&p, AdamConfig::default());
            opt.step(&mut p, &grads).unwrap();
            (p.0, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn quadratic_converges_to_closed_form_minimum() {
        // f(x) = (x - 3)^2, minimum at x = 3.
        let mut p = Scalar(array![[0.0]]);
        let mut opt = Adam::new(&p, AdamConfig { lr: 1e-2, weight_decay: 0.0, ..Default::default() });
        let mut steps = 0;
        while steps < 10_000 {
            let x = p.0[[0, 0]];
            opt.step(&mut p, &vec![array![[2.0 * (x - 3.0)]]]).unwrap();
            steps += 1;
        }
        assert!((p.0[[0, 0]] - 3.0).abs() < 1e-6, "{}", p.0[[0, 0]]);
    }

    #[test]
    fn rejects_non_finite_and_mismatched_gradients() {
        let mut p = Scalar(array![[1.0]]);
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p, &vec![array![[f64::NAN]]]), Err(Error::Numeric { .. })));
        assert!(matches!(opt.step(&mut p, &vec![array![[1.0, 2.0]]]), Err(Error::Contract(_))));
        assert_eq!(p.0, array![[1.0]]);
        assert_eq!(opt.t, 0);
    }
}

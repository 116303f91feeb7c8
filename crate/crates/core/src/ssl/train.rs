use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::losses::{contrastive_loss, reconstruction_loss, shuffle_permutation, ssl_loss};
use super::migration::MigrationState;
use crate::error::{Error, Result};
use crate::graph::{counterfactual_views, Graph};
use crate::models::{
    add_gradients, encode_backward, encode_cached, Adam, AdamConfig, EncoderCache, Gradients, ModelBundle, Propagation,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    /// Balance between contrastive (α) and reconstruction (1 - α) terms.
    pub alpha: f64,
    /// Weight of the self-supervised terms next to the migration loss.
    pub gamma: f64,
    pub epochs: usize,
    /// Migrate every `migration_every` epochs, after the loss step.
    pub migration_every: usize,
    /// Off for the no-migration ablation: no flips and no migration loss.
    pub migration: bool,
    pub adam: AdamConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            alpha: 0.6,
            gamma: 0.6,
            epochs: 200,
            migration_every: 1,
            migration: true,
            adam: AdamConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.migration_every == 0 {
            return Err(Error::Config("migration_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inputs shared by every pretraining epoch.
pub struct SslInputs<'a> {
    pub prop: &'a Propagation,
    pub x: ArrayView2<'a, f64>,
    pub view0: ArrayView2<'a, f64>,
    pub view1: ArrayView2<'a, f64>,
    pub sensitive_index: usize,
    pub weights: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct SslObjective {
    pub total: f64,
    pub l_con: f64,
    pub l_rec: f64,
    pub l_mig: f64,
    pub encoder_grads: Gradients,
    pub decoder_grads: Gradients,
}

/// `L_pre = L_mig + γ (α L_con + (1 - α) L_rec)` and its gradients for the
/// encoder and decoder. `migration` supplies the prototypes and outliers
/// from its last observation; they are treated as constants.
pub fn pretrain_objective(
    bundle: &ModelBundle,
    inputs: &SslInputs<'_>,
    perm: &[usize],
    migration: Option<&MigrationState>,
    cfg: &SslConfig,
) -> Result<SslObjective> {
    let caches = [
        encode_cached(&bundle.encoder, inputs.prop, inputs.x)?,
        encode_cached(&bundle.encoder, inputs.prop, inputs.view0)?,
        encode_cached(&bundle.encoder, inputs.prop, inputs.view1)?,
    ];
    objective_from_caches(bundle, inputs, &caches, perm, migration, cfg)
}

fn objective_from_caches(
    bundle: &ModelBundle,
    inputs: &SslInputs<'_>,
    [orig, v0, v1]: &[EncoderCache; 3],
    perm: &[usize],
    migration: Option<&MigrationState>,
    cfg: &SslConfig,
) -> Result<SslObjective> {
    let con = contrastive_loss(v0.embeddings().view(), v1.embeddings().view(), inputs.weights, perm)?;
    let dec_cache = bundle.heads.decoder.forward_cached(orig.embeddings().view());
    let rec = reconstruction_loss(inputs.x, dec_cache.output().view(), inputs.sensitive_index, inputs.weights)?;
    let (l_mig, d_mig) = match migration {
        Some(state) => state.loss(orig.embeddings().view(), inputs.weights),
        None => (0.0, Array2::zeros(orig.embeddings().raw_dim())),
    };
    let total = l_mig + cfg.gamma * ssl_loss(con.value, rec.value, cfg.alpha)?;

    let w_con = cfg.gamma * cfg.alpha;
    let w_rec = cfg.gamma * (1.0 - cfg.alpha);
    let (mut decoder_grads, d_z_rec) = bundle.heads.decoder.backward(&dec_cache, &rec.d_reconstruction);
    for g in &mut decoder_grads {
        g.mapv_inplace(|v| v * w_rec);
    }
    let d_orig = d_mig + &(d_z_rec * w_rec);
    let mut encoder_grads = encode_backward(&bundle.encoder, inputs.prop, orig, &d_orig);
    add_gradients(&mut encoder_grads, &encode_backward(&bundle.encoder, inputs.prop, v0, &(con.d_view0 * w_con)));
    add_gradients(&mut encoder_grads, &encode_backward(&bundle.encoder, inputs.prop, v1, &(con.d_view1 * w_con)));
    Ok(SslObjective { total, l_con: con.value, l_rec: rec.value, l_mig, encoder_grads, decoder_grads })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslEpoch {
    pub epoch: usize,
    pub total: f64,
    pub l_con: f64,
    pub l_rec: f64,
    pub l_mig: f64,
    pub n_outliers: usize,
}

#[derive(Debug, Clone)]
pub struct SslOutcome {
    /// Frozen pseudo-groups with the full migration history.
    pub state: MigrationState,
    pub epochs: Vec<SslEpoch>,
    pub encoder_optimizer: Adam,
    pub decoder_optimizer: Adam,
}

/// Pretrains encoder and decoder in place. Each epoch encodes the original
/// graph and both counterfactual views, observes outliers under the current
/// (pre-flip) groups, takes one optimizer step on `L_pre`, then migrates.
pub fn ssl_stage_train(
    g: &Graph,
    bundle: &mut ModelBundle,
    weights: &[f64],
    cfg: &SslConfig,
    seed: u64,
) -> Result<SslOutcome> {
    cfg.validate()?;
    let prop = Propagation::new(&g.adjacency);
    let views = counterfactual_views(g);
    let inputs = SslInputs {
        prop: &prop,
        x: g.features.view(),
        view0: views.view0.view(),
        view1: views.view1.view(),
        sensitive_index: g.sensitive_index,
        weights,
    };
    let mut state = MigrationState::new(&g.sensitive());
    let mut shuffle_rng = rng::stream(seed, "shuffle");
    let mut enc_opt = Adam::new(&bundle.encoder, cfg.adam);
    let mut dec_opt = Adam::new(&bundle.heads.decoder, cfg.adam);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let ctx = format!("ssl epoch {epoch}");
        let mut step = || -> Result<(SslObjective, Vec<usize>)> {
            let caches = [
                encode_cached(&bundle.encoder, &prop, inputs.x)?,
                encode_cached(&bundle.encoder, &prop, inputs.view0)?,
                encode_cached(&bundle.encoder, &prop, inputs.view1)?,
            ];
            let outliers = state.observe(caches[0].embeddings().view())?.to_vec();
            let perm = shuffle_permutation(g.n_nodes(), &mut shuffle_rng);
            let mig = cfg.migration.then_some(&state);
            let obj = objective_from_caches(bundle, &inputs, &caches, &perm, mig, cfg)?;
            if !obj.total.is_finite() {
                return Err(Error::numeric("pretraining loss", "non-finite value"));
            }
            Ok((obj, outliers))
        };
        let (obj, outliers) = step().map_err(|e| e.in_context(&ctx))?;
        enc_opt.step(&mut bundle.encoder, &obj.encoder_grads).map_err(|e| e.in_context(&ctx))?;
        dec_opt.step(&mut bundle.heads.decoder, &obj.decoder_grads).map_err(|e| e.in_context(&ctx))?;
        if cfg.migration && epoch % cfg.migration_every == 0 {
            state.migrate(&outliers, epoch)?;
        } else {
            state.record_without_migration(epoch);
        }
        epochs.push(SslEpoch {
            epoch,
            total: obj.total,
            l_con: obj.l_con,
            l_rec: obj.l_rec,
            l_mig: obj.l_mig,
            n_outliers: outliers.len(),
        });
    }
    state.freeze();
    Ok(SslOutcome { state, epochs, encoder_optimizer: enc_opt, decoder_optimizer: dec_opt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use crate::graph::{fixtures::toy_graph, generate_synthetic, SyntheticSpec};
    use crate::models::{ModelConfig, Parameters};
    use crate::ssl::reweight;

    fn small_bundle(in_dim: usize, seed: u64) -> ModelBundle {
        let cfg = ModelConfig { hidden_dim: 4, out_dim: 3, ..ModelConfig::default() };
        ModelBundle::init(cfg, in_dim, seed).unwrap()
    }

    #[test]
    fn gamma_zero_without_outliers_is_inert() {
        let g = toy_graph(8);
        let mut bundle = small_bundle(3, 1);
        let before = (bundle.encoder.param_hash(), bundle.heads.decoder.param_hash());
        let cfg = SslConfig {
            gamma: 0.0,
            epochs: 3,
            migration: false,
            adam: AdamConfig { weight_decay: 0.0, ..AdamConfig::default() },
            ..SslConfig::default()
        };
        let out = ssl_stage_train(&g, &mut bundle, &[1.0; 8], &cfg, 0).unwrap();
        assert!(out.epochs.iter().all(|e| e.total == 0.0));
        assert_eq!(before, (bundle.encoder.param_hash(), bundle.heads.decoder.param_hash()));
        assert!(out.state.history().iter().all(|r| r.n_flips_0to1 + r.n_flips_1to0 == 0));
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let g = toy_graph(9);
        let bundle = small_bundle(3, 5);
        let prop = Propagation::new(&g.adjacency);
        let views = counterfactual_views(&g);
        let w = reweight(&g.sensitive()).unwrap();
        let inputs = SslInputs {
            prop: &prop,
            x: g.features.view(),
            view0: views.view0.view(),
            view1: views.view1.view(),
            sensitive_index: 0,
            weights: &w,
        };
        let mut state = MigrationState::new(&g.sensitive());
        state.observe(encode(&bundle, &inputs).view()).unwrap();
        let perm = shuffle_permutation(9, &mut rng::stream(3, "shuffle"));
        let cfg = SslConfig::default();
        let obj = pretrain_objective(&bundle, &inputs, &perm, Some(&state), &cfg).unwrap();
        let f = |b: &ModelBundle| pretrain_objective(b, &inputs, &perm, Some(&state), &cfg).unwrap().total;
        let enc_err = check_params(&bundle.encoder, &obj.encoder_grads, |e| {
            f(&ModelBundle { encoder: e.clone(), ..bundle.clone() })
        });
        let dec_err = check_params(&bundle.heads.decoder, &obj.decoder_grads, |d| {
            let mut b = bundle.clone();
            b.heads.decoder = d.clone();
            f(&b)
        });
        assert!(enc_err < 1e-4 && dec_err < 1e-4, "{enc_err} {dec_err}");
    }

    fn encode(bundle: &ModelBundle, inputs: &SslInputs<'_>) -> Array2<f64> {
        crate::models::encode(&bundle.encoder, inputs.prop, inputs.x).unwrap()
    }

    #[test]
    fn leaky_synthetic_graph_migrates_early() {
        let spec = SyntheticSpec { sensitive_feature_leakage: 0.9, ..SyntheticSpec::default() };
        let g = generate_synthetic(&spec).unwrap();
        let mut bundle = ModelBundle::init(ModelConfig::default(), g.n_features(), 0).unwrap();
        let cfg = SslConfig { epochs: 20, ..SslConfig::default() };
        let w = reweight(&g.sensitive()).unwrap();
        let out = ssl_stage_train(&g, &mut bundle, &w, &cfg, 0).unwrap();
        let flips: usize = out.state.history().iter().map(|r| r.n_flips_0to1 + r.n_flips_1to0).sum();
        assert!(flips > 0);
        assert_eq!(flips, LEAKY_FLIPS_FIXTURE);
    }

    const LEAKY_FLIPS_FIXTURE: usize = 1751;

    #[test]
    fn output_state_is_frozen() {
        let g = toy_graph(8);
        let mut bundle = small_bundle(3, 2);
        let cfg = SslConfig { epochs: 2, ..SslConfig::default() };
        let mut out = ssl_stage_train(&g, &mut bundle, &[1.0; 8], &cfg, 0).unwrap();
        assert!(out.state.is_frozen());
        assert!(matches!(out.state.migrate(&[], 99), Err(Error::Contract(_))));
        assert_eq!(out.state.history().len(), 2);
    }

    #[test]
    fn config_bounds() {
        let bad = SslConfig { alpha: 1.5, ..SslConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SslConfig { migration_every: 0, ..SslConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let g = toy_graph(10);
        let run = || {
            let mut b = small_bundle(3, 4);
            let out =
                ssl_stage_train(&g, &mut b, &[1.0; 10], &SslConfig { epochs: 5, ..SslConfig::default() }, 9).unwrap();
            (b.encoder.param_hash(), out.state.groups().to_vec())
        };
        assert_eq!(run(), run());
    }
}

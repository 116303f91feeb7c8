use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::losses::{
    adversarial_loss, ce_loss, estimator_loss, frozen_migration_loss, standard_adversary_loss, AdversaryObjective,
    BinaryLoss,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::metrics::{fairness_report, FairnessReport, DEFAULT_THRESHOLD};
use crate::models::{
    classify, encode, encode_backward, encode_cached, estimator_backward, estimator_forward, single_column, Adam,
    AdamConfig, EncoderCache, Gradients, MlpCache, ModelBundle, Propagation,
};
use crate::ssl::GroupStat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupConfig {
    /// Weight of the frozen-group migration constraint.
    pub lambda: f64,
    /// Weight of the adversarial term.
    pub beta: f64,
    pub epochs: usize,
    pub adversary_steps_per_epoch: usize,
    pub adversary_objective: AdversaryObjective,
    pub threshold: f64,
    pub encoder_adam: AdamConfig,
    pub classifier_adam: AdamConfig,
    pub estimator_adam: AdamConfig,
    pub adversary_adam: AdamConfig,
}

impl Default for SupConfig {
    fn default() -> Self {
        SupConfig {
            lambda: 10.0,
            beta: 0.1,
            epochs: 500,
            adversary_steps_per_epoch: 1,
            adversary_objective: AdversaryObjective::Verbatim,
            threshold: DEFAULT_THRESHOLD,
            encoder_adam: AdamConfig::default(),
            classifier_adam: AdamConfig::default(),
            estimator_adam: AdamConfig::default(),
            adversary_adam: AdamConfig::default(),
        }
    }
}

impl SupConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.adversary_steps_per_epoch == 0 {
            return Err(Error::Config("adversary_steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// One optimizer per parameter family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupOptimizers {
    pub encoder: Adam,
    pub classifier: Adam,
    pub estimator: Adam,
    pub adversary: Adam,
}

/// Loss values of the encoder/classifier step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainStep {
    pub l_ce: f64,
    pub l_mig: f64,
    pub l_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupEpoch {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_mig: f64,
    pub l_a: f64,
    pub l_e: f64,
    pub val_auc: f64,
    pub val_delta_sp: f64,
    pub val_delta_eo: f64,
    /// Similarity statistics of the embeddings under the raw sensitive groups.
    pub group_stats: [GroupStat; 2],
}

/// Scores, embeddings and report of one evaluation pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scores: Array1<f64>,
    pub embeddings: Array2<f64>,
    pub report: FairnessReport,
}

/// Stage-2 state. Each epoch runs three alternating phases:
/// (a) the estimator fits the adversary output, (b) the adversary steps on
/// its own objective, (c) encoder and classifier descend
/// `L_CE + λ L_mig - β L_A`.
pub struct SupTrainer<'g> {
    graph: &'g Graph,
    prop: Propagation,
    x_masked: Array2<f64>,
    sensitive: Vec<u8>,
    labels: Array1<f64>,
    train: Vec<usize>,
    frozen: Option<Vec<u8>>,
    weights: Vec<f64>,
    cfg: SupConfig,
    bundle: ModelBundle,
    optimizers: SupOptimizers,
    cache: Option<EncoderCache>,
}

impl<'g> SupTrainer<'g> {
    pub fn new(
        graph: &'g Graph,
        bundle: ModelBundle,
        frozen: Option<&[u8]>,
        weights: &[f64],
        cfg: SupConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = graph.n_nodes();
        if cfg.lambda > 0.0 && frozen.is_none() {
            return Err(Error::Config("lambda > 0 needs frozen pseudo-groups".into()));
        }
        if frozen.is_some_and(|p| p.len() != n) || weights.len() != n {
            return Err(Error::Contract("pseudo-groups or weights do not match the node count".into()));
        }
        let train = graph.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Contract("graph has no training nodes".into()));
        }
        let optimizers = SupOptimizers {
            encoder: Adam::new(&bundle.encoder, cfg.encoder_adam),
            classifier: Adam::new(&bundle.heads.classifier, cfg.classifier_adam),
            estimator: Adam::new(&bundle.heads.estimator, cfg.estimator_adam),
            adversary: Adam::new(&bundle.heads.adversary, cfg.adversary_adam),
        };
        Ok(SupTrainer {
            graph,
            prop: Propagation::new(&graph.adjacency),
            x_masked: graph.masked_features(),
            sensitive: graph.sensitive(),
            labels: Array1::from(graph.label_vector()),
            train,
            frozen: frozen.map(<[u8]>::to_vec),
            weights: weights.to_vec(),
            cfg,
            bundle,
            optimizers,
            cache: None,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_parts(self) -> (ModelBundle, SupOptimizers) {
        (self.bundle, self.optimizers)
    }

    pub fn frozen_groups(&self) -> Option<&[u8]> {
        self.frozen.as_deref()
    }

    fn embeddings(&mut self) -> Result<&EncoderCache> {
        if self.cache.is_none() {
            self.cache = Some(encode_cached(&self.bundle.encoder, &self.prop, self.graph.features.view())?);
        }
        Ok(self.cache.as_ref().expect("cache filled above"))
    }

    fn adversary_output(&mut self) -> Result<(MlpCache, Array1<f64>)> {
        self.embeddings()?;
        let z = self.cache.as_ref().expect("embeddings computed").embeddings();
        let c = self.bundle.heads.adversary.forward_cached(z.view());
        let s_a = single_column(c.output().clone());
        Ok((c, s_a))
    }

    fn estimator_output(&self) -> Result<Array1<f64>> {
        let c = estimator_forward(&self.bundle.heads, &self.prop, self.x_masked.view(), self.graph.sensitive_index)?;
        Ok(c.output().clone())
    }

    /// The adversary's loss and its gradient w.r.t. the adversary output.
    fn adversary_loss(&self, s_a: &Array1<f64>) -> Result<BinaryLoss> {
        match self.cfg.adversary_objective {
            AdversaryObjective::Verbatim => adversarial_loss(self.estimator_output()?.view(), s_a.view()),
            AdversaryObjective::Standard => standard_adversary_loss(s_a.view(), &self.sensitive),
        }
    }

    /// Phase (a): one estimator step on `CE(S^p, S^A)` with `S^A` constant.
    pub fn step_estimator(&mut self) -> Result<f64> {
        let (_, s_a) = self.adversary_output()?;
        let c = estimator_forward(&self.bundle.heads, &self.prop, self.x_masked.view(), self.graph.sensitive_index)?;
        let loss = estimator_loss(c.output().view(), s_a.view())?;
        let grads = estimator_backward(&self.bundle.heads, &self.prop, &c, &loss.grad);
        self.optimizers.estimator.step(&mut self.bundle.heads.estimator, &grads)?;
        Ok(loss.value)
    }

    /// Phase (b): adversary steps. The verbatim objective is ascended; the
    /// standard objective is the adversary's own cross-entropy and is descended.
    pub fn step_adversary(&mut self) -> Result<f64> {
        let mut value = 0.0;
        for _ in 0..self.cfg.adversary_steps_per_epoch {
            let (c, s_a) = self.adversary_output()?;
            let loss = self.adversary_loss(&s_a)?;
            let sign = match self.cfg.adversary_objective {
                AdversaryObjective::Verbatim => -1.0,
                AdversaryObjective::Standard => 1.0,
            };
            let d_out = loss.grad.mapv(|g| sign * g).insert_axis(Axis(1));
            let (grads, _) = self.bundle.heads.adversary.backward(&c, &d_out);
            self.optimizers.adversary.step(&mut self.bundle.heads.adversary, &grads)?;
            value = loss.value;
        }
        Ok(value)
    }

    /// Phase (c): encoder and classifier descend `L_CE + λ L_mig - β L_A`.
    /// Terms with a zero coefficient are skipped entirely.
    pub fn step_main(&mut self) -> Result<MainStep> {
        let (step, enc_grads, cls_grads) = self.main_gradients()?;
        self.optimizers.encoder.step(&mut self.bundle.encoder, &enc_grads)?;
        self.optimizers.classifier.step(&mut self.bundle.heads.classifier, &cls_grads)?;
        self.cache = None;
        Ok(step)
    }

    fn main_gradients(&mut self) -> Result<(MainStep, Gradients, Gradients)> {
        self.embeddings()?;
        let cache = self.cache.as_ref().expect("embeddings computed");
        let z = cache.embeddings();
        let cls = self.bundle.heads.classifier.forward_cached(z.view());
        let y_hat = single_column(cls.output().clone());
        let ce = ce_loss(y_hat.view(), self.labels.view(), &self.train)?;
        let (cls_grads, mut d_z) = self.bundle.heads.classifier.backward(&cls, &ce.grad.clone().insert_axis(Axis(1)));

        let mut l_mig = 0.0;
        if self.cfg.lambda > 0.0 {
            let frozen = self.frozen.as_deref().expect("checked in new");
            let mig = frozen_migration_loss(z.view(), frozen, &self.weights)?;
            l_mig = mig.value;
            d_z.scaled_add(self.cfg.lambda, &mig.d_z);
        }
        let mut l_a = 0.0;
        if self.cfg.beta > 0.0 {
            let adv = self.bundle.heads.adversary.forward_cached(z.view());
            let s_a = single_column(adv.output().clone());
            let loss = self.adversary_loss(&s_a)?;
            l_a = loss.value;
            let d_out = loss.grad.mapv(|g| -self.cfg.beta * g).insert_axis(Axis(1));
            let (_, d_z_adv) = self.bundle.heads.adversary.backward(&adv, &d_out);
            d_z += &d_z_adv;
        }
        let enc_grads = encode_backward(&self.bundle.encoder, &self.prop, cache, &d_z);
        Ok((MainStep { l_ce: ce.value, l_mig, l_a }, enc_grads, cls_grads))
    }

    pub fn evaluate(&mut self, split: Split) -> Result<Evaluation> {
        let z = self.embeddings()?.embeddings().clone();
        evaluate_bundle(self.graph, &self.bundle, z, split, self.cfg.threshold)
    }

    /// Runs phases (a), (b), (c) and a validation pass.
    pub fn epoch(&mut self, epoch: usize) -> Result<SupEpoch> {
        let tag = |phase: &str| format!("sup epoch {epoch} phase ({phase})");
        let l_e = self.step_estimator().map_err(|e| e.in_context(&tag("a")))?;
        self.step_adversary().map_err(|e| e.in_context(&tag("b")))?;
        let main = self.step_main().map_err(|e| e.in_context(&tag("c")))?;
        for (name, v) in [("L_CE", main.l_ce), ("L_mig", main.l_mig), ("L_A", main.l_a), ("L_E", l_e)] {
            if !v.is_finite() {
                return Err(Error::numeric(tag("c"), format!("{name} is not finite")));
            }
        }
        let val = self.evaluate(Split::Val).map_err(|e| e.in_context(&format!("sup epoch {epoch} validation")))?;
        Ok(SupEpoch {
            epoch,
            l_ce: main.l_ce,
            l_mig: main.l_mig,
            l_a: main.l_a,
            l_e,
            val_auc: val.report.auc,
            val_delta_sp: val.report.delta_sp,
            val_delta_eo: val.report.delta_eo,
            group_stats: val.report.group_stats,
        })
    }
}

/// Forward pass of a trained bundle and its report on `split`.
pub fn evaluate_bundle(
    graph: &Graph,
    bundle: &ModelBundle,
    embeddings: Array2<f64>,
    split: Split,
    threshold: f64,
) -> Result<Evaluation> {
    let scores = classify(&bundle.heads, embeddings.view())?;
    let labels: Vec<u8> = graph.labels.iter().map(|l| l.unwrap_or(0)).collect();
    let report = fairness_report(
        scores.as_slice().expect("contiguous"),
        &labels,
        &graph.sensitive(),
        embeddings.view(),
        &graph.indices(split),
        split,
        threshold,
    )?;
    Ok(Evaluation { scores, embeddings, report })
}

/// Encodes `graph` with `bundle` and reports on `split`.
pub fn evaluate_model(graph: &Graph, bundle: &ModelBundle, split: Split, threshold: f64) -> Result<Evaluation> {
    let prop = Propagation::new(&graph.adjacency);
    let z = encode(&bundle.encoder, &prop, graph.features.view())?;
    evaluate_bundle(graph, bundle, z, split, threshold)
}

#[derive(Debug, Clone)]
pub struct SupOutcome {
    pub epochs: Vec<SupEpoch>,
    /// Epoch whose parameters were selected.
    pub best_epoch: usize,
    pub best: ModelBundle,
    pub last: ModelBundle,
    pub optimizers: SupOptimizers,
}

/// `a` beats `b`: higher validation AUC, then lower `ΔSP + ΔEO`.
fn better(a: &SupEpoch, b: &SupEpoch) -> bool {
    a.val_auc > b.val_auc
        || (a.val_auc == b.val_auc && a.val_delta_sp + a.val_delta_eo < b.val_delta_sp + b.val_delta_eo)
}

/// Runs `cfg.epochs` epochs and keeps the parameters of the best validation epoch.
pub fn sup_stage_train(
    graph: &Graph,
    bundle: ModelBundle,
    frozen: Option<&[u8]>,
    weights: &[f64],
    cfg: &SupConfig,
) -> Result<SupOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::Config("supervised stage needs at least one epoch".into()));
    }
    let mut trainer = SupTrainer::new(graph, bundle, frozen, weights, *cfg)?;
    let mut epochs: Vec<SupEpoch> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ModelBundle)> = None;
    for epoch in 0..cfg.epochs {
        let rec = trainer.epoch(epoch)?;
        if best.as_ref().is_none_or(|(b, _)| better(&rec, &epochs[*b])) {
            best = Some((epoch, trainer.bundle().clone()));
        }
        epochs.push(rec);
    }
    let (best_epoch, best) = best.expect("at least one epoch");
    let (last, optimizers) = trainer.into_parts();
    Ok(SupOutcome { epochs, best_epoch, best, last, optimizers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use crate::graph::{fixtures::toy_graph, make_splits, SplitFractions};
    use crate::models::{ModelConfig, Parameters};

    fn split_graph(n: usize) -> Graph {
        make_splits(&toy_graph(n), SplitFractions::default(), 3).unwrap()
    }

    fn bundle(seed: u64) -> ModelBundle {
        let cfg = ModelConfig { hidden_dim: 4, out_dim: 3, estimator_hidden: 4, ..ModelConfig::default() };
        ModelBundle::init(cfg, 3, seed).unwrap()
    }

    fn hashes(b: &ModelBundle) -> [String; 4] {
        [
            b.encoder.param_hash(),
            b.heads.classifier.param_hash(),
            b.heads.estimator.param_hash(),
            b.heads.adversary.param_hash(),
        ]
    }

    fn groups(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i % 2) as u8).collect()
    }

    #[test]
    fn phases_touch_only_their_parameters() {
        let g = split_graph(20);
        let p = groups(20);
        for objective in [AdversaryObjective::Verbatim, AdversaryObjective::Standard] {
            let cfg = SupConfig { adversary_objective: objective, ..SupConfig::default() };
            let mut t = SupTrainer::new(&g, bundle(1), Some(&p), &[1.0; 20], cfg).unwrap();
            let h0 = hashes(t.bundle());
            t.step_estimator().unwrap();
            let h1 = hashes(t.bundle());
            assert_eq!((&h0[0], &h0[1], &h0[3]), (&h1[0], &h1[1], &h1[3]));
            assert_ne!(h0[2], h1[2]);
            t.step_adversary().unwrap();
            let h2 = hashes(t.bundle());
            assert_eq!(h1[..3], h2[..3]);
            assert_ne!(h1[3], h2[3]);
            t.step_main().unwrap();
            let h3 = hashes(t.bundle());
            assert_eq!(h2[2..], h3[2..]);
            assert_ne!(h2[0], h3[0]);
            assert_ne!(h2[1], h3[1]);
        }
    }

    #[test]
    fn frozen_groups_are_never_mutated() {
        let g = split_graph(20);
        let p = groups(20);
        let mut t = SupTrainer::new(&g, bundle(2), Some(&p), &[1.0; 20], SupConfig::default()).unwrap();
        let before = format!("{:?}", t.frozen_groups());
        for e in 0..100 {
            t.epoch(e).unwrap();
        }
        assert_eq!(before, format!("{:?}", t.frozen_groups()));
        assert_eq!(t.frozen_groups().unwrap(), &p[..]);
    }

    /// Independent cross-entropy-only trainer on encoder and classifier.
    fn plain_ce_reference(g: &Graph, mut b: ModelBundle, epochs: usize) -> (Vec<f64>, ModelBundle) {
        let prop = Propagation::new(&g.adjacency);
        let train = g.indices(Split::Train);
        let y = Array1::from(g.label_vector());
        let mut enc = Adam::new(&b.encoder, AdamConfig::default());
        let mut cls = Adam::new(&b.heads.classifier, AdamConfig::default());
        let mut losses = Vec::new();
        for _ in 0..epochs {
            let cache = encode_cached(&b.encoder, &prop, g.features.view()).unwrap();
            let c = b.heads.classifier.forward_cached(cache.embeddings().view());
            let loss = ce_loss(c.output().column(0), y.view(), &train).unwrap();
            let (cg, dz) = b.heads.classifier.backward(&c, &loss.grad.clone().insert_axis(Axis(1)));
            let eg = encode_backward(&b.encoder, &prop, &cache, &dz);
            enc.step(&mut b.encoder, &eg).unwrap();
            cls.step(&mut b.heads.classifier, &cg).unwrap();
            losses.push(loss.value);
        }
        (losses, b)
    }

    #[test]
    fn zero_coefficients_reduce_to_plain_cross_entropy() {
        let g = split_graph(24);
        let cfg = SupConfig { lambda: 0.0, beta: 0.0, epochs: 30, ..SupConfig::default() };
        let mut t = SupTrainer::new(&g, bundle(4), None, &[1.0; 24], cfg).unwrap();
        let ours: Vec<f64> = (0..30).map(|e| t.epoch(e).unwrap().l_ce).collect();
        let (reference, rb) = plain_ce_reference(&g, bundle(4), 30);
        assert_eq!(
            ours.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            reference.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(t.bundle().encoder.param_hash(), rb.encoder.param_hash());
        assert_eq!(t.bundle().heads.classifier.param_hash(), rb.heads.classifier.param_hash());
    }

    #[test]
    fn main_objective_gradients_match_finite_differences() {
        let g = split_graph(10);
        let p = [0u8, 0, 0, 1, 1, 0, 1, 1, 0, 1];
        let w: Vec<f64> = (0..10).map(|i| 1.0 + 0.1 * i as f64).collect();
        for objective in [AdversaryObjective::Verbatim, AdversaryObjective::Standard] {
            let cfg = SupConfig { lambda: 2.0, beta: 0.5, adversary_objective: objective, ..SupConfig::default() };
            let b = bundle(6);
            let value = |b: &ModelBundle| {
                let mut t = SupTrainer::new(&g, b.clone(), Some(&p), &w, cfg).unwrap();
                let (s, _, _) = t.main_gradients().unwrap();
                s.l_ce + cfg.lambda * s.l_mig - cfg.beta * s.l_a
            };
            let mut t = SupTrainer::new(&g, b.clone(), Some(&p), &w, cfg).unwrap();
            let (_, enc, cls) = t.main_gradients().unwrap();
            let e1 = check_params(&b.encoder, &enc, |e| value(&ModelBundle { encoder: e.clone(), ..b.clone() }));
            let e2 = check_params(&b.heads.classifier, &cls, |c| {
                let mut bb = b.clone();
                bb.heads.classifier = c.clone();
                value(&bb)
            });
            assert!(e1 < 1e-4 && e2 < 1e-4, "{objective}: {e1} {e2}");
        }
    }

    #[test]
    fn numeric_failure_names_epoch_and_phase() {
        let mut g = split_graph(12);
        g.features[[3, 1]] = f64::NAN;
        let mut t = SupTrainer::new(&g, bundle(1), None, &[1.0; 12], SupConfig { lambda: 0.0, ..SupConfig::default() })
            .unwrap();
        let msg = t.epoch(7).unwrap_err().to_string();
        assert!(msg.contains("sup epoch 7 phase (a)"), "{msg}");
    }

    #[test]
    fn lambda_without_groups_is_config_error() {
        let g = split_graph(12);
        let r = SupTrainer::new(&g, bundle(1), None, &[1.0; 12], SupConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
        let bad = SupConfig { beta: -1.0, ..SupConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn selection_prefers_auc_then_fairness() {
        let stat = GroupStat { count: 1, mean: 0.0, std: 0.0 };
        let e = |auc, sp, eo| SupEpoch {
            epoch: 0,
            l_ce: 0.0,
            l_mig: 0.0,
            l_a: 0.0,
            l_e: 0.0,
            val_auc: auc,
            val_delta_sp: sp,
            val_delta_eo: eo,
            group_stats: [stat, stat],
        };
        assert!(better(&e(0.8, 0.5, 0.5), &e(0.7, 0.0, 0.0)));
        assert!(better(&e(0.8, 0.1, 0.1), &e(0.8, 0.1, 0.2)));
        assert!(!better(&e(0.8, 0.1, 0.1), &e(0.8, 0.1, 0.1)));
    }

    #[test]
    fn training_selects_a_recorded_epoch() {
        let g = split_graph(20);
        let p = groups(20);
        let cfg = SupConfig { epochs: 15, ..SupConfig::default() };
        let out = sup_stage_train(&g, bundle(3), Some(&p), &[1.0; 20], &cfg).unwrap();
        assert_eq!(out.epochs.len(), 15);
        let best = &out.epochs[out.best_epoch];
        assert!(out.epochs.iter().all(|e| e.val_auc <= best.val_auc));
        let eval = evaluate_model(&g, &out.best, Split::Val, cfg.threshold).unwrap();
        assert_eq!(eval.report.auc, best.val_auc);
    }
}

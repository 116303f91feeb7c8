use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{SplitFractions, SyntheticSpec};
use crate::kv::KeyValues;
use crate::models::{AdamConfig, Backbone, ModelConfig};
use crate::ssl::SslConfig;
use crate::sup::{AdversaryObjective, SupConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "FAIRMIG_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WoMig,
    WoAdv,
    WoSsf,
    WoWei,
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Full, Variant::WoMig, Variant::WoAdv, Variant::WoSsf, Variant::WoWei, Variant::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoMig => "wo_mig",
            Variant::WoAdv => "wo_adv",
            Variant::WoSsf => "wo_ssf",
            Variant::WoWei => "wo_wei",
            Variant::Vanilla => "vanilla",
        }
    }

    /// Whether the pretraining stage runs at all.
    pub fn pretrains(self) -> bool {
        !matches!(self, Variant::WoSsf | Variant::Vanilla)
    }

    /// Whether group migration (flips and the migration loss) is active.
    pub fn migrates(self) -> bool {
        !matches!(self, Variant::WoMig | Variant::Vanilla)
    }

    pub fn adversarial(self) -> bool {
        !matches!(self, Variant::WoAdv | Variant::Vanilla)
    }

    pub fn reweights(self) -> bool {
        !matches!(self, Variant::WoWei | Variant::Vanilla)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Where node data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A dataset directory with `dataset.cfg`, node and edge files.
    Directory(PathBuf),
    /// A generated graph; the generator seed is the run seed.
    Synthetic(SyntheticSpec),
}

/// Hyperparameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Gamma,
    Lambda,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
            SweepParam::Lambda => "lambda",
            SweepParam::Beta => "beta",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "gamma" => Ok(SweepParam::Gamma),
            "lambda" => Ok(SweepParam::Lambda),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::Config(format!("cannot sweep `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub model: ModelConfig,
    pub variant: Variant,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub ssl_epochs: usize,
    pub sup_epochs: usize,
    pub migration_every: usize,
    pub fixed_point_rounds: usize,
    pub adversary_objective: AdversaryObjective,
    pub adversary_steps: usize,
    pub threshold: f64,
    pub splits: SplitFractions,
    pub adam: AdamConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ssl = SslConfig::default();
        let sup = SupConfig::default();
        ExperimentConfig {
            name: "run".into(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            model: ModelConfig::default(),
            variant: Variant::Full,
            alpha: ssl.alpha,
            gamma: ssl.gamma,
            lambda: sup.lambda,
            beta: sup.beta,
            ssl_epochs: ssl.epochs,
            sup_epochs: sup.epochs,
            migration_every: ssl.migration_every,
            fixed_point_rounds: 50,
            adversary_objective: sup.adversary_objective,
            adversary_steps: sup.adversary_steps_per_epoch,
            threshold: sup.threshold,
            splits: SplitFractions::default(),
            adam: AdamConfig::default(),
            seeds: vec![0],
            output_dir: None,
        }
    }
}

const KEYS: &[&str] = &[
    "name",
    "dataset",
    "backbone",
    "hidden_dim",
    "out_dim",
    "n_layers",
    "teleport",
    "iterations",
    "estimator_hidden",
    "variant",
    "alpha",
    "gamma",
    "lambda",
    "beta",
    "ssl_epochs",
    "sup_epochs",
    "migration_every",
    "fixed_point_rounds",
    "adversary_objective",
    "adversary_steps",
    "threshold",
    "split_train",
    "split_val",
    "split_test",
    "lr",
    "weight_decay",
    "seeds",
    "output_dir",
];

impl ExperimentConfig {
    /// Parses a flat key-value config. `dataset = synthetic` (the default)
    /// reads the `synth_*` keys; any other value is a dataset directory,
    /// resolved against `base` when relative. Unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self> {
        for key in kv.keys() {
            if !KEYS.contains(&key) && !key.starts_with("synth_") {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }
        let d = ExperimentConfig::default();
        let data = match kv.get("dataset").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic(SyntheticSpec::from_kv(kv)?),
            path => {
                if kv.keys().any(|k| k.starts_with("synth_")) {
                    return Err(Error::Config("synth_* keys need `dataset = synthetic`".into()));
                }
                DataSource::Directory(base.join(path))
            }
        };
        let dm = d.model;
        let model = ModelConfig {
            backbone: kv.parsed_or("backbone", dm.backbone)?,
            hidden_dim: kv.parsed_or("hidden_dim", dm.hidden_dim)?,
            out_dim: kv.parsed_or("out_dim", dm.out_dim)?,
            n_layers: kv.parsed_or("n_layers", dm.n_layers)?,
            teleport: kv.parsed_or("teleport", dm.teleport)?,
            iterations: kv.parsed_or("iterations", dm.iterations)?,
            estimator_hidden: kv.parsed_or("estimator_hidden", dm.estimator_hidden)?,
        };
        let ds = d.splits;
        let cfg = ExperimentConfig {
            name: kv.get("name").unwrap_or(&d.name).to_string(),
            data,
            model,
            variant: kv.parsed_or("variant", d.variant)?,
            alpha: kv.parsed_or("alpha", d.alpha)?,
            gamma: kv.parsed_or("gamma", d.gamma)?,
            lambda: kv.parsed_or("lambda", d.lambda)?,
            beta: kv.parsed_or("beta", d.beta)?,
            ssl_epochs: kv.parsed_or("ssl_epochs", d.ssl_epochs)?,
            sup_epochs: kv.parsed_or("sup_epochs", d.sup_epochs)?,
            migration_every: kv.parsed_or("migration_every", d.migration_every)?,
            fixed_point_rounds: kv.parsed_or("fixed_point_rounds", d.fixed_point_rounds)?,
            adversary_objective: kv.parsed_or("adversary_objective", d.adversary_objective)?,
            adversary_steps: kv.parsed_or("adversary_steps", d.adversary_steps)?,
            threshold: kv.parsed_or("threshold", d.threshold)?,
            splits: SplitFractions {
                train: kv.parsed_or("split_train", ds.train)?,
                val: kv.parsed_or("split_val", ds.val)?,
                test: kv.parsed_or("split_test", ds.test)?,
            },
            adam: AdamConfig {
                lr: kv.parsed_or("lr", d.adam.lr)?,
                weight_decay: kv.parsed_or("weight_decay", d.adam.weight_decay)?,
                ..d.adam
            },
            seeds: kv.list("seeds")?.unwrap_or(d.seeds),
            output_dir: kv.get("output_dir").map(|p| base.join(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative dataset paths are anchored to the
    /// file's directory and stored absolute, so a copy of the config inside
    /// a run directory still points at the data.
    pub fn read(path: &Path) -> Result<Self> {
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_kv(&KeyValues::read(path)?, &base)
    }

    /// Inverse of [`ExperimentConfig::from_kv`]; paths are written as given.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("name", &self.name);
        match &self.data {
            DataSource::Directory(p) => kv.set("dataset", p.display()),
            DataSource::Synthetic(spec) => {
                kv.set("dataset", "synthetic");
                spec.write_kv(&mut kv);
            }
        }
        let m = &self.model;
        kv.set("backbone", m.backbone);
        kv.set("hidden_dim", m.hidden_dim);
        kv.set("out_dim", m.out_dim);
        kv.set("n_layers", m.n_layers);
        kv.set("teleport", m.teleport);
        kv.set("iterations", m.iterations);
        kv.set("estimator_hidden", m.estimator_hidden);
        kv.set("variant", self.variant);
        kv.set("alpha", self.alpha);
        kv.set("gamma", self.gamma);
        kv.set("lambda", self.lambda);
        kv.set("beta", self.beta);
        kv.set("ssl_epochs", self.ssl_epochs);
        kv.set("sup_epochs", self.sup_epochs);
        kv.set("migration_every", self.migration_every);
        kv.set("fixed_point_rounds", self.fixed_point_rounds);
        kv.set("adversary_objective", self.adversary_objective);
        kv.set("adversary_steps", self.adversary_steps);
        kv.set("threshold", self.threshold);
        kv.set("split_train", self.splits.train);
        kv.set("split_val", self.splits.val);
        kv.set("split_test", self.splits.test);
        kv.set("lr", self.adam.lr);
        kv.set("weight_decay", self.adam.weight_decay);
        kv.set("seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        if let Some(p) = &self.output_dir {
            kv.set("output_dir", p.display());
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run name `{}` must be a plain file name", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if self.model.n_layers == 0 || self.model.hidden_dim == 0 || self.model.out_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        self.splits.validate()?;
        self.ssl_config().validate()?;
        self.sup_config().validate()?;
        if self.sup_epochs == 0 {
            return Err(Error::Config("sup_epochs must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    /// Stage-1 settings after the variant is applied.
    pub fn ssl_config(&self) -> SslConfig {
        SslConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            epochs: self.ssl_epochs,
            migration_every: self.migration_every,
            migration: self.variant.migrates(),
            adam: self.adam,
        }
    }

    /// Stage-2 settings after the variant is applied.
    pub fn sup_config(&self) -> SupConfig {
        SupConfig {
            lambda: if self.variant.migrates() || self.variant == Variant::WoSsf { self.lambda } else { 0.0 },
            beta: if self.variant.adversarial() { self.beta } else { 0.0 },
            epochs: self.sup_epochs,
            adversary_steps_per_epoch: self.adversary_steps,
            adversary_objective: self.adversary_objective,
            threshold: self.threshold,
            encoder_adam: self.adam,
            classifier_adam: self.adam,
            estimator_adam: self.adam,
            adversary_adam: self.adam,
        }
    }

    /// The config with every setting the variant ignores reset to a fixed
    /// value, so equivalent runs share one hash.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.clone();
        let d = ExperimentConfig::default();
        if !c.variant.pretrains() {
            c.alpha = 0.0;
            c.gamma = 0.0;
            c.ssl_epochs = 0;
            c.migration_every = d.migration_every;
            c.fixed_point_rounds = 0;
        }
        if !c.variant.migrates() && c.variant != Variant::WoSsf {
            c.lambda = 0.0;
            c.migration_every = d.migration_every;
        }
        if !c.variant.adversarial() {
            c.beta = 0.0;
            c.adversary_objective = d.adversary_objective;
            c.adversary_steps = d.adversary_steps;
        }
        c
    }

    /// SHA-256 of the effective config, excluding the name, seeds and output location.
    pub fn config_hash(&self) -> String {
        let mut kv = self.effective().to_kv();
        kv.set("name", "");
        kv.set("seeds", "");
        kv.set("output_dir", "");
        let digest = Sha256::digest(kv.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset_name(&self) -> String {
        match &self.data {
            DataSource::Synthetic(_) => "synthetic".into(),
            DataSource::Directory(p) => {
                crate::graph::DatasetConfig::from_dir(p).map(|c| c.name).unwrap_or_else(|_| p.display().to_string())
            }
        }
    }

    /// `output_dir`, else the environment root, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }

    pub fn set_param(&mut self, p: SweepParam, v: f64) {
        match p {
            SweepParam::Alpha => self.alpha = v,
            SweepParam::Gamma => self.gamma = v,
            SweepParam::Lambda => self.lambda = v,
            SweepParam::Beta => self.beta = v,
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.model.backbone
    }
}

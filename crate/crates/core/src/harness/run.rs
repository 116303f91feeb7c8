use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{read_json, write_csv, write_json, EpochRow, PretrainRow, TraceRow};
use super::config::{DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::graph::{generate_synthetic, load_dataset, make_splits, DatasetConfig, Graph, Split, SyntheticSpec};
use crate::metrics::FairnessReport;
use crate::models::{encode, Checkpoint, ModelBundle, Propagation};
use crate::ssl::{migrate_to_fixed_point, reweight, ssl_stage_train, FixedPointOutcome, MigrationRecord, SslEpoch};
use crate::sup::{evaluate_model, sup_stage_train, SupEpoch};

/// Version of every JSON and CSV artifact layout.
pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = concat!("fairmig ", env!("CARGO_PKG_VERSION"));

pub const CONFIG_FILE: &str = "config.kv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const REPORT_FILE: &str = "report.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const PRETRAIN_FILE: &str = "pretrain.csv";
pub const TRACE_FILE: &str = "migration.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ERROR_FILE: &str = "error.txt";

/// How seeds are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// One rayon task per seed. Falls back to sequential without the
    /// `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Node data shared by all seeds of a run.
#[derive(Debug, Clone)]
pub enum PreparedData {
    Loaded(Graph),
    Synthetic(SyntheticSpec),
}

impl PreparedData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.data {
            DataSource::Directory(dir) => {
                let dc = DatasetConfig::from_dir(dir)?;
                Ok(PreparedData::Loaded(load_dataset(dir, &dc)?))
            }
            DataSource::Synthetic(spec) => Ok(PreparedData::Synthetic(spec.clone())),
        }
    }

    /// The split graph for one seed. Synthetic graphs are generated from the
    /// seed itself; loaded graphs keep existing splits or get seeded ones.
    pub fn graph_for_seed(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Graph> {
        let g = match self {
            PreparedData::Loaded(g) if g.has_splits() => return Ok(g.clone()),
            PreparedData::Loaded(g) => g.clone(),
            PreparedData::Synthetic(spec) => generate_synthetic(&SyntheticSpec { seed, ..spec.clone() })?,
        };
        make_splits(&g, cfg.splits, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub schema_version: u32,
    pub version: String,
    pub seed: u64,
    pub variant: String,
    pub dataset: String,
    pub backbone: String,
    pub config_hash: String,
    pub best_epoch: usize,
    pub val: FairnessReport,
    pub test: FairnessReport,
    pub total_flips: usize,
    /// Repeated migration on the final pretrained embeddings, when pretraining ran.
    pub fixed_point: Option<FixedPointOutcome>,
}

/// Everything one seed produces before it is written out.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub report: SeedReport,
    pub sup_epochs: Vec<SupEpoch>,
    pub ssl_epochs: Vec<SslEpoch>,
    pub trace: Vec<MigrationRecord>,
    pub checkpoint: Checkpoint,
}

/// Runs both stages for one seed without touching the filesystem.
pub fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SeedArtifacts> {
    let cfg = cfg.effective();
    let g = data.graph_for_seed(&cfg, seed)?;
    let mut bundle = ModelBundle::init(cfg.model, g.n_features(), seed)?;
    let sensitive = g.sensitive();
    let weights = if cfg.variant.reweights() { reweight(&sensitive)? } else { vec![1.0; g.n_nodes()] };

    let mut ssl_epochs = Vec::new();
    let mut trace = Vec::new();
    let mut fixed_point = None;
    let mut optimizers = BTreeMap::new();
    let frozen: Option<Vec<u8>> = if cfg.variant.pretrains() {
        let out = ssl_stage_train(&g, &mut bundle, &weights, &cfg.ssl_config(), seed)?;
        if cfg.variant.migrates() && cfg.fixed_point_rounds > 0 {
            let z = encode(&bundle.encoder, &Propagation::new(&g.adjacency), g.features.view())?;
            fixed_point = Some(migrate_to_fixed_point(z.view(), &out.state, cfg.fixed_point_rounds)?.0);
        }
        ssl_epochs = out.epochs;
        trace = out.state.history().to_vec();
        optimizers.insert("ssl_encoder".to_string(), out.encoder_optimizer);
        optimizers.insert("ssl_decoder".to_string(), out.decoder_optimizer);
        Some(out.state.groups().to_vec())
    } else if cfg.variant == super::Variant::WoSsf {
        Some(sensitive.clone())
    } else {
        None
    };
    let total_flips = trace.iter().map(|r| r.n_flips_0to1 + r.n_flips_1to0).sum();

    let sup = cfg.sup_config();
    let out = sup_stage_train(&g, bundle, frozen.as_deref(), &weights, &sup)?;
    let val = evaluate_model(&g, &out.best, Split::Val, sup.threshold)?.report;
    let test = evaluate_model(&g, &out.best, Split::Test, sup.threshold)?.report;
    optimizers.insert("encoder".to_string(), out.optimizers.encoder);
    optimizers.insert("classifier".to_string(), out.optimizers.classifier);
    optimizers.insert("estimator".to_string(), out.optimizers.estimator);
    optimizers.insert("adversary".to_string(), out.optimizers.adversary);
    let mut checkpoint = Checkpoint::new(seed, out.best);
    checkpoint.optimizers = optimizers;
    checkpoint.frozen_groups = frozen;

    Ok(SeedArtifacts {
        report: SeedReport {
            schema_version: SCHEMA_VERSION,
            version: VERSION.into(),
            seed,
            variant: cfg.variant.to_string(),
            dataset: cfg.dataset_name(),
            backbone: cfg.backbone().to_string(),
            config_hash: cfg.config_hash(),
            best_epoch: out.best_epoch,
            val,
            test,
            total_flips,
            fixed_point,
        },
        sup_epochs: out.epochs,
        ssl_epochs,
        trace,
        checkpoint,
    })
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

fn write_seed(dir: &Path, a: &SeedArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(REPORT_FILE), &a.report)?;
    write_csv(&dir.join(EPOCHS_FILE), a.sup_epochs.iter().map(EpochRow::from))?;
    write_csv(&dir.join(PRETRAIN_FILE), a.ssl_epochs.iter().map(PretrainRow::from))?;
    write_csv(&dir.join(TRACE_FILE), a.trace.iter().map(TraceRow::from))?;
    a.checkpoint.save(&dir.join(CHECKPOINT_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Summary { mean, std, median: median(values) })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub auc: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Test-split summary over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub version: String,
    pub name: String,
    pub variant: String,
    pub dataset: String,
    pub backbone: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    pub failed: Vec<SeedFailure>,
    /// Some seeds failed; summaries cover the rest.
    pub partial: bool,
    pub auc: Option<Summary>,
    pub delta_sp: Option<Summary>,
    pub delta_eo: Option<Summary>,
}

impl Aggregate {
    /// Folds per-seed outcomes, listed in seed order.
    pub fn fold(cfg: &ExperimentConfig, outcomes: &[(u64, std::result::Result<SeedReport, String>)]) -> Aggregate {
        let mut per_seed = Vec::new();
        let mut failed = Vec::new();
        for (seed, o) in outcomes {
            match o {
                Ok(r) => per_seed.push(SeedMetrics {
                    seed: *seed,
                    auc: r.test.auc,
                    delta_sp: r.test.delta_sp,
                    delta_eo: r.test.delta_eo,
                }),
                Err(e) => failed.push(SeedFailure { seed: *seed, error: e.clone() }),
            }
        }
        let col = |f: fn(&SeedMetrics) -> f64| Summary::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            schema_version: SCHEMA_VERSION,
            version: VERSION.into(),
            name: cfg.name.clone(),
            variant: cfg.variant.to_string(),
            dataset: cfg.dataset_name(),
            backbone: cfg.backbone().to_string(),
            config_hash: cfg.config_hash(),
            seeds: outcomes.iter().map(|(s, _)| *s).collect(),
            auc: col(|m| m.auc),
            delta_sp: col(|m| m.delta_sp),
            delta_eo: col(|m| m.delta_eo),
            partial: !failed.is_empty(),
            per_seed,
            failed,
        }
    }

    pub fn read(run_dir: &Path) -> Result<Aggregate> {
        let a: Aggregate = read_json(&run_dir.join(AGGREGATE_FILE))?;
        if a.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "{}: aggregate schema {} unsupported",
                run_dir.display(),
                a.schema_version
            )));
        }
        Ok(a)
    }
}

/// Maps `f` over `items`, in parallel when requested; output keeps input order.
pub(crate) fn map_items<T: Sync, R: Send>(items: &[T], mode: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs and writes every seed of `cfg` into `run_dir`. A failing seed
/// leaves an `error.txt` and marks the aggregate partial; other seeds
/// still run.
pub fn run_in(cfg: &ExperimentConfig, run_dir: &Path, mode: Execution) -> Result<Aggregate> {
    cfg.validate()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_kv().to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let data = PreparedData::load(cfg)?;
    let outcomes = map_items(&cfg.seeds, mode, |&seed| {
        let dir = seed_dir(run_dir, seed);
        let result = run_seed(cfg, &data, seed).and_then(|a| {
            write_seed(&dir, &a)?;
            Ok(a.report)
        });
        let result = result.map_err(|e| {
            let msg = e.to_string();
            let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(ERROR_FILE), &msg));
            msg
        });
        (seed, result)
    });
    let aggregate = Aggregate::fold(cfg, &outcomes);
    write_json(&run_dir.join(AGGREGATE_FILE), &aggregate)?;
    Ok(aggregate)
}

/// Runs `cfg` in its configured run directory.
pub fn run(cfg: &ExperimentConfig, mode: Execution) -> Result<(PathBuf, Aggregate)> {
    let dir = cfg.run_dir();
    let agg = run_in(cfg, &dir, mode)?;
    Ok((dir, agg))
}

/// Outcome of re-evaluating one stored checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationCheck {
    pub seed: u64,
    pub stored: FairnessReport,
    pub recomputed: FairnessReport,
}

impl EvaluationCheck {
    pub fn matches(&self) -> bool {
        self.stored == self.recomputed
    }
}

/// Rebuilds each seed's graph from the run's config, reloads its
/// checkpoint and recomputes the test report.
pub fn evaluate_run(run_dir: &Path) -> Result<Vec<EvaluationCheck>> {
    let cfg = ExperimentConfig::read(&run_dir.join(CONFIG_FILE))?.effective();
    let data = PreparedData::load(&cfg)?;
    let mut checks = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(run_dir, seed);
        if dir.join(ERROR_FILE).exists() {
            continue;
        }
        let stored: SeedReport = read_json(&dir.join(REPORT_FILE))?;
        let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let g = data.graph_for_seed(&cfg, seed)?;
        let recomputed = evaluate_model(&g, &ck.bundle, Split::Test, stored.test.threshold)?.report;
        checks.push(EvaluationCheck { seed, stored: stored.test, recomputed });
    }
    Ok(checks)
}

//! Fairness-aware node classification with demographic group migration.
//!
//! Training runs in two stages. A self-supervised stage pretrains the encoder
//! on counterfactual views of the graph while migrating outlying nodes between
//! pseudo-demographic groups. A supervised stage then fits a classifier under
//! the frozen pseudo-groups and an adversarial sensitive-attribute penalty.
//!
//! * [`graph`]: data model, dataset files, splits, counterfactual views,
//!   synthetic biased graphs.
//! * [`models`]: encoders (GCN, JK, APPNP), heads, optimizer, checkpoints.
//! * [`ssl`]: pretraining losses and group migration.
//! * [`sup`]: supervised losses and the min-max training loop.
//! * [`metrics`]: AUC, statistical parity, equal opportunity, group similarity.
//! * [`harness`]: experiment configs, runs, ablations, sweeps, comparisons.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod kv;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod sparse;
pub mod ssl;
pub mod sup;

pub use error::{Error, Result};

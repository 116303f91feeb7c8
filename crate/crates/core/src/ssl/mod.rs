//! Self-supervised pretraining with demographic group migration.

mod cosine;
mod losses;
mod migration;
mod train;

pub use cosine::{cosine, cosine_with_grad, COSINE_EPS};
pub use losses::{
    contrastive_loss, reconstruction_loss, shuffle_permutation, ssl_loss, ContrastiveLoss, ReconstructionLoss,
};
pub use migration::{
    detect_outliers, group_prototypes, group_similarities, migrate_to_fixed_point, migration_loss, min_group_size,
    reweight, FixedPointOutcome, GroupStat, MigrationRecord, MigrationState, Similarities,
};
pub use train::{pretrain_objective, ssl_stage_train, SslConfig, SslEpoch, SslInputs, SslObjective, SslOutcome};

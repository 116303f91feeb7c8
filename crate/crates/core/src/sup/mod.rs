//! Supervised training under frozen pseudo-groups and an adversary.

mod losses;
mod train;

pub use losses::{
    adversarial_loss, ce_loss, clamp_prob, estimator_loss, frozen_migration_loss, standard_adversary_loss,
    AdversaryObjective, BinaryLoss, FrozenMigrationLoss, PROB_CLAMP,
};
pub use train::{
    evaluate_bundle, evaluate_model, sup_stage_train, Evaluation, MainStep, SupConfig, SupEpoch, SupOptimizers,
    SupOutcome, SupTrainer,
};

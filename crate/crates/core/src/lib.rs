//! Fairness auditing for multi-class segmentation.
//!
//! The crate scores predicted label masks against ground truth (per-class
//! IoU and Dice), aggregates the scores by protected group (sex, race, or
//! both), and reports the dispersion and skew of group performance:
//! the standard deviation of group mean IoU and the skewed error ratio
//! (largest group error over smallest, with error = 1 - mean IoU).
//!
//! It also emits seeded sampler plans for four training configurations
//! (plain shuffling, oversampling of small groups, group-balanced batches,
//! and one plan per group), a stratified train/val/test split, an
//! inter-annotator agreement summary, and synthetic cohorts with known
//! per-group IoU for end-to-end checks.
//!
//! | module | contents |
//! |---|---|
//! | [`model`] | label schema, masks, cohort records, audit config |
//! | [`ingest`] | PNG/PGM masks, metadata CSV, gt/pred pairing |
//! | [`metrics`] | IoU, Dice, pass rate, pairwise agreement |
//! | [`fairness`] | group means, SD, SER, reports |
//! | [`sampling`] | split and sampler plans |
//! | [`synth`] | synthetic cohorts |
//! | [`cli`] | the `segfair` command line |
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod cli;
pub mod fairness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod synth;

pub use fairness::{build_report, group_means, group_sd, skewed_error_ratio, FairnessReport, GroupMetrics};
pub use ingest::{load_mask, load_metadata, resolve_pairs, CohortTable, MaskPair};
pub use metrics::{class_dice, class_iou, mask_scores, pairwise_agreement, pass_rate_at_iou, ClassScores};
pub use model::{
    classes_present, validate_mask, AuditConfig, ClassLabel, CohortRecord, GroupKey, GroupingAttribute, LabelMask,
    Race, SdMode, Sex, Split,
};
pub use sampling::{SamplerPlan, Strategy};

/// Any error the crate can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Fairness(#[from] fairness::FairnessError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

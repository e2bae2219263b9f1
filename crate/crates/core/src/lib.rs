//! Similarity-based oversampling for imbalanced multi-label data.
//!
//! Labeled instances are embedding vectors with binary label vectors. The
//! oversampler repeatedly picks an under-represented class, pulls similar
//! instances from an unlabeled pool, pseudo-labels them, and keeps the
//! batch only when a retrained classifier scores strictly better.

pub mod classifier;
pub mod data;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod oversample;
pub mod similarity;
pub mod synth;

pub use classifier::{Classifier, OvrLogistic, Trainer, TrainingParams};
pub use data::{
    dataset_stats, holdout_split, kfold_split, split_labeled_unlabeled, Dataset, DatasetStats,
    Fold, Header, Instance, LabeledSet, LabeledSplit, Role, UnlabeledPool,
};
pub use error::{Error, Result};
pub use experiment::{
    grid_search, learning_curve, ExperimentPlan, ExperimentResult, ParameterGrid,
};
pub use matrix::{LabelMatrix, Matrix, ScoreMatrix};
pub use metrics::{Averaging, EvaluationReport, Measure, MeasureSpec, Orientation};
pub use oversample::{
    oversample, oversample_with, EvalPolicy, MetricHistoryRecord, OversampleConfig,
    OversampleOutcome, StopReason,
};
pub use similarity::{SimilarityCalcType, SimilarityKind};
pub use synth::{gaussian_clusters, SyntheticSpec};

//! Metrics, k-fold evaluation, the data-volume experiment and feature-space
//! visualization.

mod crossval;
mod embedding;
mod experiment;
mod metrics;
mod tsne;

pub use crossval::{
    check_leakage, crossval_evaluate, test_set, ClassifierRecipe, FoldOutcome, FoldResult, GroupResult, GroupSchedule,
    TrainRecipe,
};
pub use embedding::{Embedding, EmbeddingRow};
pub use experiment::{
    run_classic_arm, run_experiment, select_optimal, Arm, Curve, CurvePoint, ExperimentConfig, GeneratorRecord, OptimalGroup, Progress,
};
pub use metrics::{confusion, weighted_average, ClassRates, ConfusionMatrix, MetricsReport};
pub use tsne::{affinities, tsne_embed, Affinities, TsneConfig, TsneResult};

pub use crate::training::extract_features;

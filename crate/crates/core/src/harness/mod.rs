//! Configuration-driven experiment pipeline: data generation, posterior
//! fitting, deferral learning, deployment and uncertainty reporting.

mod bootstrap;
mod config;
mod pipeline;

pub use bootstrap::{bootstrap_aggregate, bootstrap_resample, Aggregate};
pub use config::{
    BehaviorPolicy, BootstrapSpec, DatasetSpec, EvaluationSpec, ExperimentConfig, MethodSpec, PosteriorSpec, OUT_DIR_ENV,
};
pub use pipeline::{
    argmax, behavior_policy, file_header, learn_method, primary_deferral_point, run_experiment, run_experiment_in,
    stage, visit_counts, write_results_csv, ExperimentSummary, FileMeta, ResultRow, RunRecord, ScoreMarginals,
    WithMeta, EXPERT_LABEL, TARGET_LABEL,
};

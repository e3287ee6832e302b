//! Swap-task metrics, the sampling and ablation studies, run configuration
//! files and CSV interchange.

mod compare;
mod config;
mod metrics;
mod report;
mod study;

pub use compare::{comparison_csv, gaussian_comparison, quarter_timesteps, COMPARISON_HEADER};
pub use config::RunConfig;
pub use metrics::{
    metric_exp_error, metric_id_retrieval, metric_mse, metric_pose_error, nearest_identity, MetricsReport,
};
pub use report::{curves_csv, samples_csv, StudyReport, StudyRow, STUDY_HEADER};
pub use study::{
    ablation_variants, evaluate, generate_swaps, reconstruction_mse, run_ablation_study, run_sampling_study,
    run_study, run_variant, sampling_variants, score_swaps, swap_set, Curve, StudyConfig, StudyOutcome, SwapItem,
    Variant, VariantOutcome,
};

//! Synthetic data, the AUC metric, and the experiment drivers.

mod metrics;
mod pgm;
mod sweep;
mod synthetic;

pub use metrics::{auc, mean_auc, median, per_class_auc, MetricRow, MetricsTable, MEAN_ROW};
pub use pgm::{write_pgm, write_pgm_normalized};
pub use sweep::{
    ablation_sweep, data_seed, derive_seed, evaluate_mean_auc, robustness_experiment,
    robustness_models, robustness_sweep, run_cell, seg_toy_run, worker_threads, AblationAxis,
    CellResult, Experiment, RobustnessReport, RobustnessRow, RobustnessTable, SegToyConfig, TrainedSeed,
    ROBUST_AAA, ROBUST_HARDMASK, THREADS_ENV,
};
pub use synthetic::{gen_synthetic, LesionClass, Region, SyntheticData, SyntheticSpec, SyntheticSplit};

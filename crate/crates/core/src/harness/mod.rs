//! Experiment harness: declarative run configs, seeded single runs with
//! per-round CSV output, Monte-Carlo sweeps with aggregate gates, and plot
//! emission. Everything downstream of (config, seed) is bit-exact: output
//! files never embed wall-clock data, and sweeps aggregate per-seed results
//! in seed order regardless of execution order.

pub mod checks;
pub mod config;
pub mod plots;
pub mod run;
pub mod sweep;

pub use checks::{lemma_report, ls_coverage, mle_coverage, CoverageReport, LemmaReport};
pub use config::{config_hash, default_config, ClassConfig, EnvConfig, RunConfig, SCHEMA_VERSION};
pub use plots::{emit_plots, emit_plots_from_files, PlotManifest};
pub use run::{run_one, RunArtifacts, RunSummary};
pub use sweep::{
    regret_bound_rhs, run_sweep, run_sweep_sequential, seeds_for, wilson_interval, CheckpointAgg,
    SweepReport,
};

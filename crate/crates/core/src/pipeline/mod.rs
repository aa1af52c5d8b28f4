//! Experiment orchestration: flat TOML configuration, a resumable staged
//! pipeline writing every artifact into one run directory, per-seed and
//! aggregate reports, method comparison and embedding export.

mod config;
mod export;
mod report;
mod run;

pub use config::{hash_json, ExperimentConfig, Method, Precision, SEED_ENV};
pub use export::{embed_instances, embeddings_csv, export_embeddings, Space};
pub use report::{
    compare_methods, mean_std, Comparison, ComparisonRow, RunReport, SeedReport, TaskSummary, REPORT_VERSION,
};
pub use run::{Run, RunLayout, SplitInfo, Stage, SPLIT_VERSION, STAGES_VERSION};

use std::time::Instant;

use crate::error::Result;

/// Validates `config` and runs its pipeline in `config.out_dir`.
pub fn run_pipeline(config: &ExperimentConfig, resume: bool) -> Result<SeedReport> {
    config.validate()?;
    Run::new(config.clone()).execute(resume)
}

/// Runs one pipeline per seed in `out_dir/seed<N>` and aggregates the
/// resulting reports.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64], resume: bool) -> Result<RunReport> {
    let start = Instant::now();
    let mut reports = Vec::new();
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        c.out_dir = config.out_dir.join(format!("seed{seed}"));
        reports.push(run_pipeline(&c, resume)?);
    }
    RunReport::aggregate(&reports, &config.sweep_hash(), start.elapsed().as_secs_f64())
}

//! Experiment orchestration for `bbmlab`: configuration, the six experiment
//! kinds, and CSV/JSON reports.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;
pub mod specs;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::HarnessError;
pub use report::{Report, Written};

/// `git describe` of the build, or `unknown`.
pub const GIT_DESCRIBE: &str = env!("BBMLAB_GIT_DESCRIBE");

/// Sizes the global thread pool from `BBMLAB_WORKERS`, falling back to the
/// config. Only the first call in a process has an effect.
pub fn configure_workers(from_config: Option<usize>) {
    let env = std::env::var("BBMLAB_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    if let Some(n) = env.or(from_config) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Runs an experiment and, when an output directory is known, persists it.
pub fn execute(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<(Report, Option<Written>), HarnessError> {
    let start = Instant::now();
    let report = experiments::run(cfg)?;
    let runtime = start.elapsed().as_secs_f64();
    let dir: Option<PathBuf> = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from));
    let written = match dir {
        Some(d) => Some(report::persist(&report, cfg, &d, runtime)?),
        None => None,
    };
    Ok((report, written))
}

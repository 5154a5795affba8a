//! Experiment configuration, Monte Carlo orchestration and CSV/JSON output
//! for the `rdpg` command-line tool.
//!
//! Each experiment returns a [`output::RunOutput`]: the tables it would
//! write plus a [`output::RunRecord`]. Repetitions run on a rayon pool and
//! are merged in rep order, so outputs do not depend on the worker count.

pub mod cli;
pub mod config;
pub mod error;
pub mod exp1;
pub mod exp2;
pub mod fisher_suite;
pub mod holonomy;
pub mod output;
pub mod stats;

use rayon::prelude::*;
use rdpg_core::random::derive_seed;

pub use config::{ExperimentConfig, ExperimentKind, Sweep};
pub use error::{HarnessError, Result};
pub use output::{OutputDir, RunOutput, RunRecord, Table};

/// Top-level seed streams; each experiment derives its seeds as
/// `derive_seed(master, [stream, ...])`.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const OBSERVE: u64 = 2;
    pub const JITTER: u64 = 3;
    pub const ANCHORS: u64 = 4;
    pub const TEST_CLOUD: u64 = 5;
}

pub fn stream_seed(master: u64, stream: u64, rep: usize) -> u64 {
    derive_seed(master, &[stream, rep as u64])
}

/// Master seed handed to `observe_trajectory`, which appends `(rep, t, sample)`.
pub fn observation_master(master: u64) -> u64 {
    derive_seed(master, &[streams::OBSERVE])
}

/// Evaluate `f` for every rep, concurrently on up to `workers` threads
/// (rayon's default pool when `None`). Results come back in rep order; the
/// error of the lowest failing rep wins.
pub fn run_reps<T, F>(workers: Option<usize>, reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let job = || (0..reps).into_par_iter().map(&f).collect::<Vec<_>>();
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };
    results.into_iter().collect()
}

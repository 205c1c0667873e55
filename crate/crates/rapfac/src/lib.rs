//! Command-line runner for `rapfac-core`: TOML run configs, named presets,
//! parallel ensembles and CSV/JSON artifact directories.
//!
//! A run directory holds `populations.csv` (`t_us,n_0,…`), `gain.csv`
//! (`step,t_us,gain,variant`), geometry, pair and drive tables, optional
//! `stderr.csv`, `jumps.csv`, `pattern.csv` and `scan.csv`, the resolved
//! `config.toml`, and `manifest.json` with a SHA-256 for every file.

pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod run;

use std::path::PathBuf;
use std::time::Instant;

pub use config::RunConfig;
pub use error::AppError;
pub use run::{Outcome, Plan};

use config::Auto;
use output::RunInfo;

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Replaces `solver.dt_us`; the sampling stride is re-derived.
    pub dt_us: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(out) = &self.out {
            c.outputs.directory = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(dt) = self.dt_us {
            c.solver.dt_us = Auto::Value(dt);
            c.outputs.stride = Auto::default();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Run,
    Scan,
}

/// Run `f` on a pool of `threads` workers (all cores if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, AppError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(AppError::Config {
                field: "--threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| AppError::io("thread pool", e))?;
    Ok(pool.install(f))
}

/// Execute `config` and write its artifact directory.
pub fn execute_and_write(config: &RunConfig, verb: Verb, threads: Option<usize>) -> Result<(Outcome, PathBuf), AppError> {
    let start = Instant::now();
    let (outcome, n_threads) = with_threads(threads, || {
        let plan = Plan::new(config)?;
        let outcome = match verb {
            Verb::Run => plan.execute()?,
            Verb::Scan => plan.scan()?,
        };
        Ok::<_, AppError>((outcome, rayon::current_num_threads()))
    })??;
    let dir = outcome.config.directory();
    let info = RunInfo {
        verb: match verb {
            Verb::Run => "run",
            Verb::Scan => "scan",
        },
        wall_time: start.elapsed(),
        threads: n_threads,
    };
    output::write_run(&dir, &outcome, &info)?;
    Ok((outcome, dir))
}

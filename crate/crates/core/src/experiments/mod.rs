//! The end-to-end rate experiment: seeded trials over a grid of sample
//! sizes, excess risks through a shared oracle, quantile curves, a log-log
//! rate fit and a verdict against the guaranteed k-means exponent.

mod aggregate;
mod emit;
mod table;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample, DistributionSpec};
use crate::error::{Error, Result};
use crate::quantization::{erm, excess_risk, ErmStrategy, OracleSettings, RiskOracle};
use crate::rng::derive_seed;

pub use aggregate::{
    aggregate, compare_theory, fit_rate, theory_beta, CurvePoint, RateCurve, RateFit, TheoryComparison,
    TheorySource, Verdict,
};
pub use emit::{emit, emit_all, svg_plot, OutputFormat};
pub use table::{read_raw_table, write_raw_table, TrialRecord};

pub const CONFIG_SCHEMA: u32 = 1;
pub const DEFAULT_FIT_WINDOW: usize = 3;
pub const RAW_TABLE_FILE: &str = "raw.csv";

fn default_fit_window() -> usize {
    DEFAULT_FIT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub spec: DistributionSpec,
    pub k: usize,
    pub d: usize,
    pub rho: f64,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub erm_strategy: ErmStrategy,
    pub oracle: OracleSettings,
    /// Moment order used for the theory comparison.
    pub r_assumed: f64,
    /// Number of largest sample sizes used by the rate fit.
    #[serde(default = "default_fit_window")]
    pub fit_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Hard checks. Returns soft warnings, such as an assumed moment order
    /// the law does not have.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::param(format!(
                "config schema {} not supported, expected {CONFIG_SCHEMA}",
                self.schema
            )));
        }
        if self.k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        if self.d != self.spec.dim() {
            return Err(Error::Dimension {
                expected: self.spec.dim(),
                got: self.d,
            });
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::param(format!("rho must be finite and > 0, got {}", self.rho)));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::param("n_grid must be nonempty with sizes >= 1"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("n_grid must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials must be >= 1"));
        }
        if self.fit_window == 0 || self.fit_window > self.n_grid.len() {
            return Err(Error::param(format!(
                "fit_window {} must lie in [1, {}]",
                self.fit_window,
                self.n_grid.len()
            )));
        }
        let mut warnings = Vec::new();
        let max_order = self.spec.max_finite_moment_order();
        if self.r_assumed >= max_order {
            warnings.push(format!(
                "r_assumed = {} but the law only has moments below order {max_order}",
                self.r_assumed
            ));
        }
        Ok(warnings)
    }

    pub fn theory_source(&self) -> TheorySource {
        TheorySource::KMeans {
            r: self.r_assumed,
            k: self.k,
            d: self.d,
        }
    }
}

/// Seed of trial `t` at sample size `n`.
pub fn trial_seed(base_seed: u64, n: usize, trial: usize) -> u64 {
    derive_seed(base_seed, &[n as u64, trial as u64])
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Sorted by `(n, trial)`.
    pub table: Vec<TrialRecord>,
    pub curve: RateCurve,
    pub warnings: Vec<String>,
    /// Where the raw table was written, if an output directory was set.
    pub raw_path: Option<PathBuf>,
}

fn run_trial(config: &ExperimentConfig, oracle: &RiskOracle, n: usize, trial: usize) -> TrialRecord {
    let seed = trial_seed(config.base_seed, n, trial);
    let outcome = sample(&config.spec, n, seed)
        .and_then(|s| erm(&s, config.k, config.rho, config.erm_strategy))
        .and_then(|c| excess_risk(&c, oracle, &config.spec));
    match outcome {
        Ok(e) => TrialRecord::ok(n, trial, seed, e),
        Err(err) => TrialRecord::failed(n, trial, seed, err.to_string()),
    }
}

/// Runs every trial, persists the raw table (when `output_dir` is set) and
/// aggregates. `threads` sizes a dedicated worker pool; `None` uses the
/// global one. Results do not depend on it.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    let warnings = config.validate()?;
    let oracle = config.oracle.build(&config.spec, config.k, config.rho)?;
    let jobs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect();
    let execute = || -> Vec<TrialRecord> {
        jobs.par_iter()
            .map(|&(n, t)| run_trial(config, &oracle, n, t))
            .collect()
    };
    let mut table = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(execute),
        None => execute(),
    };
    table.sort_by_key(|r| (r.n, r.trial));

    let raw_path = match &config.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(RAW_TABLE_FILE);
            write_raw_table(&path, &table)?;
            Some(path)
        }
        None => None,
    };

    let mut curve = RateCurve::from_table(&table, config.fit_window);
    curve.name = config.name.clone();
    curve.theory = Some(compare_theory(&curve, &config.theory_source()));
    Ok(RunOutput {
        table,
        curve,
        warnings,
        raw_path,
    })
}

//! Experiment suites. Each suite computes its tables and checks in memory;
//! [`run_suite`] is the single writer of the output directory.

mod fixed_point;
mod gaps;
mod noisy;
mod series;
mod soft;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gapforge_core::mdp::{build_random_mdp, solve_optimal_q, DEFAULT_MAX_ITER};
use gapforge_core::{QFunction, TabularMdp};

use crate::config::{ConfigError, ExperimentConfig, MdpSource, Suite};
use crate::manifest::{Check, RunManifest};
use crate::output::{format_float, write_file, Table};

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run aborted: {0}")]
    Core(#[from] gapforge_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

pub type SuiteResult<T> = Result<T, SuiteError>;

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> SuiteError + '_ {
    move |source| SuiteError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Default)]
pub(crate) struct SuiteOutput {
    pub tables: Vec<Table>,
    /// `(file name, contents)` for JSON artifacts.
    pub json: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

/// Runs the configured suite, writes its CSV/JSON artifacts plus
/// `manifest.json` and `summary.txt`, and returns the manifest.
pub fn run_suite(config: &ExperimentConfig) -> SuiteResult<RunManifest> {
    let start = Instant::now();
    let output = match config.suite {
        Suite::FixedPoint => fixed_point::run(config)?,
        Suite::Gaps => gaps::run_gaps(config)?,
        Suite::GapScan => gaps::run_scan(config)?,
        Suite::Bounds => series::run_bounds(config)?,
        Suite::Figure2 => series::run_figure2(config)?,
        Suite::Rates => series::run_rates(config)?,
        Suite::NoisyVi => noisy::run(config)?,
        Suite::GviMvi => soft::run(config)?,
    };

    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut files = Vec::new();
    for table in &output.tables {
        let path = dir.join(&table.name);
        files.push(write_file(dir, &table.name, &table.to_bytes()).map_err(io_error(&path))?);
    }
    for (name, text) in &output.json {
        let path = dir.join(name);
        files.push(write_file(dir, name, text.as_bytes()).map_err(io_error(&path))?);
    }

    let manifest = RunManifest {
        suite: config.suite.name().to_owned(),
        version: gapforge_core::VERSION.to_owned(),
        config: config.clone(),
        duration_secs: start.elapsed().as_secs_f64(),
        passed: output.checks.iter().all(|c| c.passed),
        checks: output.checks,
        files,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_error(&manifest_path))?;
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, manifest.summary()).map_err(io_error(&summary_path))?;
    Ok(manifest)
}

pub(crate) fn load_mdp(config: &ExperimentConfig, seed: u64) -> SuiteResult<TabularMdp> {
    match &config.mdp {
        MdpSource::Random {
            n_states,
            n_actions,
            branching,
            gamma,
            ..
        } => Ok(build_random_mdp(*n_states, *n_actions, *branching, seed, *gamma)?),
        MdpSource::File { path } => {
            let text = fs::read_to_string(path).map_err(io_error(path))?;
            Ok(TabularMdp::from_json(&text)?)
        }
    }
}

/// An MDP of the suite together with its reference `Q*`.
pub(crate) struct Instance {
    pub seed: u64,
    pub mdp: TabularMdp,
    pub q_star: QFunction,
}

pub(crate) fn instance(config: &ExperimentConfig, seed: u64) -> SuiteResult<Instance> {
    let mdp = load_mdp(config, seed)?;
    let q_star = solve_optimal_q(&mdp, config.tol.q_star, DEFAULT_MAX_ITER)?;
    Ok(Instance { seed, mdp, q_star })
}

/// `γ` and `V_max` for the arithmetic-only suites.
pub(crate) fn gamma_and_v_max(config: &ExperimentConfig) -> SuiteResult<(f64, f64)> {
    match &config.mdp {
        // Random rewards lie in [-1, 1].
        MdpSource::Random { gamma, .. } => Ok((*gamma, 1.0 / (1.0 - gamma))),
        MdpSource::File { .. } => {
            let mdp = load_mdp(config, 0)?;
            Ok((mdp.gamma(), mdp.v_max()))
        }
    }
}

pub(crate) fn pair_label(omega: f64, alpha: f64) -> String {
    format!("omega{}_alpha{}", format_float(omega), format_float(alpha))
}

pub(crate) fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

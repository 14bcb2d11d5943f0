//! Experiment harness for `gapforge-core`.
//!
//! A run goes raw document → [`validate_config`] → [`run_suite`]; the suite
//! writes its CSV files, `manifest.json` and `summary.txt` into the output
//! directory and returns the [`RunManifest`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod output;
pub mod suites;

pub use config::{
    apply_seed_override, parse_document, parse_override, validate_config, ConfigError, ExperimentConfig, RawConfig,
    Suite,
};
pub use manifest::{Check, RunManifest};
pub use suites::{run_suite, SuiteError};

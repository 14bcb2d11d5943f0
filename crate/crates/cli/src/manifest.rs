use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::FileEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail: detail.into(),
        }
    }

    /// Passes when `failures == 0`; the detail leads with `passed/total`.
    pub fn tally(name: &str, failures: usize, total: usize, detail: impl AsRef<str>) -> Self {
        let detail = detail.as_ref();
        let lead = format!("{}/{} passed", total - failures, total);
        let detail = if detail.is_empty() {
            lead
        } else {
            format!("{lead}; {detail}")
        };
        Self::new(name, failures == 0 && total > 0, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub suite: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub duration_secs: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.files
            .iter()
            .map(|f| (f.name.as_str(), f.sha256.as_str()))
            .collect()
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}: {}", c.name, c.detail);
        }
        out
    }
}

//! Flat dotted-key experiment configuration.
//!
//! A raw document maps keys such as `mdp.n_states` or `operator.alpha` to TOML
//! values. Files may use nested tables or quoted dotted keys; both flatten to
//! the same map. [`validate_config`] fills per-suite defaults and reports
//! every problem it finds at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use gapforge_core::iteration::LIMIT_MAX_ITER;
use gapforge_core::{Execution, NoiseKind, OperatorSpec, OperatorVariant, ParameterError};
use serde::{Deserialize, Serialize};
use toml::Value;

pub type RawConfig = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    FixedPoint,
    Gaps,
    GapScan,
    Bounds,
    Figure2,
    Rates,
    NoisyVi,
    GviMvi,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::FixedPoint,
        Suite::Gaps,
        Suite::GapScan,
        Suite::Bounds,
        Suite::Figure2,
        Suite::Rates,
        Suite::NoisyVi,
        Suite::GviMvi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::FixedPoint => "fixed-point",
            Suite::Gaps => "gaps",
            Suite::GapScan => "gap-scan",
            Suite::Bounds => "bounds",
            Suite::Figure2 => "figure2",
            Suite::Rates => "rates",
            Suite::NoisyVi => "noisy-vi",
            Suite::GviMvi => "gvi-mvi",
        }
    }

    fn names() -> String {
        Suite::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected one of {})", Suite::names()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl ConfigError {
    fn single(field: &str, message: impl Into<String>) -> Self {
        Self {
            issues: vec![ConfigIssue {
                field: field.to_owned(),
                message: message.into(),
            }],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem", self.issues.len())?;
        if self.issues.len() != 1 {
            f.write_str("s")?;
        }
        f.write_str("):")?;
        for issue in &self.issues {
            write!(f, "\n  - {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum MdpSource {
    Random {
        n_states: usize,
        n_actions: usize,
        branching: usize,
        gamma: f64,
        /// First seed; the suite uses `seed..seed + seeds`.
        seed: u64,
        seeds: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub grid: Vec<f64>,
    pub omega: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: f64,
    pub variants: Vec<OperatorVariant>,
    pub unsafe_params: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kinds: Vec<NoiseKind>,
    pub epsilons: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bellman residual for the reference `Q*`.
    pub q_star: f64,
    /// Residual that ends an exact iteration.
    pub limit: f64,
    pub fixed_point: f64,
    pub gap_ratio: f64,
    pub gap_slack: f64,
    pub ordering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Per-iteration trace files for the first MDP of the fixed-point suite.
    pub traces: bool,
    /// Every `snapshot_stride`-th `Q_k` of those traces goes to JSON; 0 disables.
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub mdp: MdpSource,
    pub operator: OperatorConfig,
    pub noise: NoiseConfig,
    pub k_max: usize,
    pub tol: Tolerances,
    pub output: OutputConfig,
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Seeds of the random family, or `[0]` for a file-backed MDP.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.mdp {
            MdpSource::Random { seed, seeds, .. } => (0..*seeds as u64).map(|i| seed + i).collect(),
            MdpSource::File { .. } => vec![0],
        }
    }

    /// `(ω, α)` pairs: the explicit pair when both are set, otherwise the grid
    /// pairs with `α < ω`, optionally pinned to one coordinate. Sorted by `ω`
    /// then `α`.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let op = &self.operator;
        match (op.omega, op.alpha) {
            (Some(w), Some(a)) => vec![(w, a)],
            (Some(w), None) => op.grid.iter().filter(|&&a| a < w).map(|&a| (w, a)).collect(),
            (None, Some(a)) => op.grid.iter().filter(|&&w| a < w).map(|&w| (w, a)).collect(),
            (None, None) => {
                let mut out = Vec::new();
                for &w in &op.grid {
                    for &a in &op.grid {
                        if a < w {
                            out.push((w, a));
                        }
                    }
                }
                out
            }
        }
    }

    /// The explicit `alpha`, or every grid value, for runs that only take `α`.
    pub fn alphas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = match self.operator.alpha {
            Some(a) => vec![a],
            None => self.operator.grid.clone(),
        };
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn sal(&self, omega: f64, alpha: f64) -> OperatorSpec {
        self.gate(OperatorSpec::sal(omega, alpha))
    }

    pub fn gate(&self, spec: OperatorSpec) -> OperatorSpec {
        if self.operator.unsafe_params {
            spec.allow_unsafe()
        } else {
            spec
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match &self.mdp {
            MdpSource::Random { gamma, .. } => Some(*gamma),
            MdpSource::File { .. } => None,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "suite",
    "mdp.source",
    "mdp.path",
    "mdp.n_states",
    "mdp.n_actions",
    "mdp.branching",
    "mdp.gamma",
    "mdp.seed",
    "mdp.seeds",
    "operator.grid",
    "operator.omega",
    "operator.alpha",
    "operator.tau",
    "operator.variants",
    "operator.unsafe",
    "noise.kind",
    "noise.epsilon",
    "noise.seed",
    "k_max",
    "tol.q_star",
    "tol.limit",
    "tol.fixed_point",
    "tol.gap_ratio",
    "tol.gap_slack",
    "tol.ordering",
    "output.dir",
    "output.traces",
    "output.snapshot_stride",
    "exec.parallel",
];

/// Parses a TOML document into the flat key map.
pub fn parse_document(text: &str) -> Result<RawConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::single("<document>", e.message().to_owned()))?;
    let mut out = RawConfig::new();
    flatten("", table, &mut out);
    Ok(out)
}

fn flatten(prefix: &str, table: toml::Table, out: &mut RawConfig) {
    for (key, value) in table {
        let full = if prefix.is_empty() {
            key
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            Value::Table(inner) => flatten(&full, inner, out),
            other => {
                out.insert(full, other);
            }
        }
    }
}

/// Parses one `key=value` override. The value is read as a TOML value when
/// possible (`0.5`, `[0.2, 0.3]`, `true`) and as a bare string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::single(text, "expected key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::single(text, "empty key"));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_owned()));
    Ok((key.to_owned(), parsed))
}

/// Pins every seed to `seed` and runs a single MDP, for smoke tests.
pub fn apply_seed_override(raw: &mut RawConfig, seed: u64) {
    let seed = Value::Integer(seed as i64);
    raw.insert("mdp.seed".into(), seed.clone());
    raw.insert("noise.seed".into(), seed);
    raw.insert("mdp.seeds".into(), Value::Integer(1));
}

struct Reader<'a> {
    raw: &'a RawConfig,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn issue(&mut self, field: &str, message: impl Into<String>) {
        let issue = ConfigIssue {
            field: field.to_owned(),
            message: message.into(),
        };
        if !self.issues.contains(&issue) {
            self.issues.push(issue);
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.raw.get(key)
    }

    fn as_float(value: &Value) -> Option<f64> {
        match value {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn opt_float(&mut self, key: &str) -> Option<f64> {
        let value = self.get(key)?;
        match Self::as_float(value) {
            Some(x) if x.is_finite() => Some(x),
            Some(x) => {
                self.issue(key, format!("must be finite (got {x})"));
                None
            }
            None => {
                self.issue(key, format!("expected a number, got {value}"));
                None
            }
        }
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        self.opt_float(key).unwrap_or(default)
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let x = self.float(key, default);
        if !(x > 0.0) {
            self.issue(key, format!("must be > 0 (got {x})"));
        }
        x
    }

    fn uint(&mut self, key: &str, default: u64) -> u64 {
        match self.get(key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(value) => {
                self.issue(key, format!("expected a non-negative integer, got {value}"));
                default
            }
        }
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> usize {
        let n = self.uint(key, default as u64) as usize;
        if n < min {
            self.issue(key, format!("must be >= {min} (got {n})"));
        }
        n
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(value) => {
                self.issue(key, format!("expected true or false, got {value}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key)? {
            Value::String(s) => Some(s.clone()),
            value => {
                self.issue(key, format!("expected a string, got {value}"));
                None
            }
        }
    }

    /// A scalar or an array of numbers.
    fn floats(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let Some(value) = self.get(key) else {
            return default.to_vec();
        };
        let items: Vec<&Value> = match value {
            Value::Array(items) => items.iter().collect(),
            scalar => vec![scalar],
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match Self::as_float(item) {
                Some(x) if x.is_finite() => out.push(x),
                _ => self.issue(key, format!("expected finite numbers, got {item}")),
            }
        }
        if out.is_empty() {
            self.issue(key, "must not be empty");
            return default.to_vec();
        }
        out
    }

    /// A string or an array of strings, each parsed with `T::from_str`.
    fn parsed_list<T>(&mut self, key: &str, default: &[T]) -> Vec<T>
    where
        T: FromStr<Err = String> + Clone,
    {
        let Some(value) = self.get(key) else {
            return default.to_vec();
        };
        let items: Vec<&Value> = match value {
            Value::Array(items) => items.iter().collect(),
            scalar => vec![scalar],
        };
        let mut out = Vec::new();
        for item in items {
            match item {
                Value::String(s) => match s.parse() {
                    Ok(v) => out.push(v),
                    Err(e) => self.issue(key, e),
                },
                other => self.issue(key, format!("expected a string, got {other}")),
            }
        }
        if out.is_empty() {
            self.issue(key, "must not be empty");
            return default.to_vec();
        }
        out
    }
}

const GRID: [f64; 4] = [0.2, 0.3, 0.5, 0.9];

/// Parses, defaults and domain-checks a raw document.
///
/// Every violated precondition is collected; nothing is computed unless the
/// whole document is valid.
pub fn validate_config(raw: &RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut r = Reader {
        raw,
        issues: Vec::new(),
    };

    for key in raw.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            r.issue(key, "unknown key");
        }
    }

    let suite = match r.string("suite") {
        Some(name) => match name.parse::<Suite>() {
            Ok(s) => Some(s),
            Err(e) => {
                r.issue("suite", e);
                None
            }
        },
        None => {
            if raw.get("suite").is_none() {
                r.issue("suite", format!("missing required field (one of {})", Suite::names()));
            }
            None
        }
    };
    // Defaults below depend on the suite; fall back to fixed-point so the
    // remaining keys still get checked.
    let s = suite.unwrap_or(Suite::FixedPoint);

    let mdp = read_mdp(&mut r, s);
    let operator = read_operator(&mut r, s);
    let noise = read_noise(&mut r, s);

    let default_k = match s {
        Suite::FixedPoint | Suite::Gaps | Suite::GapScan => LIMIT_MAX_ITER,
        Suite::Bounds | Suite::Figure2 | Suite::Rates => 2000,
        Suite::NoisyVi | Suite::GviMvi => 200,
    };
    let k_max = r.count("k_max", default_k, 1);

    let tol = Tolerances {
        q_star: r.positive("tol.q_star", 1e-12),
        limit: r.positive("tol.limit", 1e-12),
        fixed_point: r.positive("tol.fixed_point", 1e-8),
        gap_ratio: r.positive("tol.gap_ratio", 1e-6),
        gap_slack: r.positive("tol.gap_slack", 1e-9),
        ordering: r.positive("tol.ordering", 1e-12),
    };

    let output = OutputConfig {
        dir: r
            .string("output.dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out").join(s.name())),
        traces: r.boolean("output.traces", true),
        snapshot_stride: r.uint("output.snapshot_stride", 0) as usize,
    };
    let parallel = r.boolean("exec.parallel", true);

    let config = ExperimentConfig {
        suite: s,
        mdp,
        operator,
        noise,
        k_max,
        tol,
        output,
        parallel,
    };
    check_gates(&mut r, &config);

    match (suite, r.issues.is_empty()) {
        (Some(_), true) => Ok(config),
        _ => Err(ConfigError { issues: r.issues }),
    }
}

fn read_mdp(r: &mut Reader<'_>, suite: Suite) -> MdpSource {
    let source = r.string("mdp.source").unwrap_or_else(|| "random".into());
    let default_states = if suite == Suite::GviMvi { 10 } else { 20 };
    let n_states = r.count("mdp.n_states", default_states, 1);
    let n_actions = r.count("mdp.n_actions", 4, 1);
    let branching = r.count("mdp.branching", 3, 1);
    let gamma = r.float("mdp.gamma", 0.99);
    let seed = r.uint("mdp.seed", 0);
    let seeds = r.count("mdp.seeds", 100, 1);
    let path = r.string("mdp.path");

    match source.as_str() {
        "random" => {
            if !(0.0..1.0).contains(&gamma) {
                r.issue("mdp.gamma", format!("must lie in [0, 1) (got {gamma})"));
            }
            if branching > n_states {
                r.issue(
                    "mdp.branching",
                    format!("must be <= mdp.n_states = {n_states} (got {branching})"),
                );
            }
            if path.is_some() {
                r.issue("mdp.path", "only used with mdp.source = \"file\"");
            }
            MdpSource::Random {
                n_states,
                n_actions,
                branching,
                gamma,
                seed,
                seeds,
            }
        }
        "file" => match path {
            Some(path) => MdpSource::File { path: path.into() },
            None => {
                r.issue("mdp.path", "required when mdp.source = \"file\"");
                MdpSource::File { path: PathBuf::new() }
            }
        },
        other => {
            r.issue(
                "mdp.source",
                format!("expected \"random\" or \"file\", got \"{other}\""),
            );
            MdpSource::File { path: PathBuf::new() }
        }
    }
}

fn read_operator(r: &mut Reader<'_>, suite: Suite) -> OperatorConfig {
    let default_grid: &[f64] = if suite == Suite::GviMvi {
        &[0.2, 0.5, 0.9]
    } else {
        &GRID
    };
    let grid = r.floats("operator.grid", default_grid);
    let (default_omega, default_alpha) = if suite == Suite::Figure2 {
        (Some(0.95), Some(0.9))
    } else {
        (None, None)
    };
    let omega = r.opt_float("operator.omega").or(default_omega);
    let alpha = r.opt_float("operator.alpha").or(default_alpha);
    let tau = r.positive("operator.tau", 0.03);
    let variants = r.parsed_list("operator.variants", &[OperatorVariant::Sal, OperatorVariant::Al]);
    for v in &variants {
        if !matches!(v, OperatorVariant::Sal | OperatorVariant::Al) {
            r.issue("operator.variants", format!("`{v}` has no error bound; use sal or al"));
        }
    }
    let unsafe_params = r.boolean("operator.unsafe", false);
    OperatorConfig {
        grid,
        omega,
        alpha,
        tau,
        variants,
        unsafe_params,
    }
}

fn read_noise(r: &mut Reader<'_>, suite: Suite) -> NoiseConfig {
    let kinds = r.parsed_list(
        "noise.kind",
        &[
            NoiseKind::UniformBounded,
            NoiseKind::GaussianClipped,
            NoiseKind::AdversarialSign,
        ],
    );
    let default_eps: &[f64] = if suite == Suite::Figure2 { &[1.0] } else { &[0.01, 0.1] };
    let epsilons = r.floats("noise.epsilon", default_eps);
    for &e in &epsilons {
        if e < 0.0 {
            r.issue("noise.epsilon", format!("must be >= 0 (got {e})"));
        }
    }
    let seed = r.uint("noise.seed", 0);
    NoiseConfig { kinds, epsilons, seed }
}

fn remediation(e: &ParameterError) -> &'static str {
    match e {
        ParameterError::AlphaNotBelowOmega { .. }
        | ParameterError::OmegaAboveRange { .. }
        | ParameterError::AlphaAboveOne { .. }
        | ParameterError::MarginTooSmall { .. } => {
            "; pass --unsafe-params (operator.unsafe = true) to run outside the guaranteed range"
        }
        _ => "",
    }
}

fn gate_field(e: &ParameterError) -> &'static str {
    match e {
        ParameterError::OmegaAboveRange { .. } | ParameterError::OmegaNotPositive { .. } => "operator.omega",
        ParameterError::TauNotPositive { .. } => "operator.tau",
        _ => "operator.alpha",
    }
}

fn check_gates(r: &mut Reader<'_>, config: &ExperimentConfig) {
    // File-backed MDPs are gated once the file is loaded.
    let Some(gamma) = config.gamma() else {
        return;
    };
    if !(0.0..1.0).contains(&gamma) {
        return;
    }
    let mut report = |r: &mut Reader<'_>, spec: OperatorSpec| {
        if let Err(e) = config.gate(spec).validate(gamma) {
            r.issue(gate_field(&e), format!("{e}{}", remediation(&e)));
        }
    };

    match config.suite {
        Suite::GviMvi => {
            for a in config.alphas() {
                report(r, OperatorSpec::gvi(a, config.operator.tau));
            }
        }
        Suite::NoisyVi => {
            if config.operator.variants.contains(&OperatorVariant::Sal) {
                check_pairs(r, config, &mut report);
            }
            if config.operator.variants.contains(&OperatorVariant::Al) {
                for a in config.alphas() {
                    report(r, OperatorSpec::al(a));
                }
            }
        }
        _ => check_pairs(r, config, &mut report),
    }

    if config.suite == Suite::Figure2 {
        if config.pairs().len() > 1 {
            r.issue("operator.omega", "figure2 takes a single (omega, alpha) pair");
        }
        if config.noise.epsilons.len() != 1 {
            r.issue("noise.epsilon", "figure2 takes a single epsilon");
        }
        if let Some(w) = config.operator.omega {
            if w >= 1.0 {
                r.issue("operator.omega", format!("figure2 requires omega < 1 (got omega={w})"));
            }
        }
    }
}

fn check_pairs(r: &mut Reader<'_>, config: &ExperimentConfig, report: &mut impl FnMut(&mut Reader<'_>, OperatorSpec)) {
    let pairs = config.pairs();
    if pairs.is_empty() {
        r.issue("operator.grid", "no (omega, alpha) pair with alpha < omega");
        // Surface the explicit coordinate's own problems anyway.
        if let (Some(w), Some(a)) = (config.operator.omega, config.operator.alpha) {
            report(r, OperatorSpec::sal(w, a));
        }
    }
    let used: BTreeSet<(u64, u64)> = pairs.iter().map(|(w, a)| (w.to_bits(), a.to_bits())).collect();
    for (w, a) in used {
        report(r, OperatorSpec::sal(f64::from_bits(w), f64::from_bits(a)));
    }
}

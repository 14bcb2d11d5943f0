//! Exact and noise-injected value iteration.
//!
//! One step computes
//! `Q_{k+1} = (1 - ω) Q_k + ω [T Q_k + ε_k] + α (Q_k - V_k)`,
//! which covers every variant in [`OperatorSpec`]; non-smooth variants use
//! `ω = 1`, so the error lands on the backup term in all cases.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParameterError, Result};
use crate::mdp::{solve_optimal_q, Policy, QFunction, TabularMdp, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::operators::{a_k, derived_constants, OperatorSpec, MIN_SAL_MARGIN};

/// Iteration cap used when running to the limit.
pub const LIMIT_MAX_ITER: usize = 100_000;

/// Residual at which an exact run is treated as converged.
pub const LIMIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    /// Independent `U[-ε, ε]` per entry.
    UniformBounded,
    /// `N(0, (ε/2)²)` per entry, clipped to `[-ε, ε]`.
    GaussianClipped,
    /// `ε · sign(Q_k - Q*)`: every entry pushed away from the optimum.
    AdversarialSign,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::UniformBounded => "uniform",
            Self::GaussianClipped => "gaussian",
            Self::AdversarialSign => "adversarial",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" => Self::None,
            "uniform" | "uniform-bounded" => Self::UniformBounded,
            "gaussian" | "gaussian-clipped" => Self::GaussianClipped,
            "adversarial" | "adversarial-sign" => Self::AdversarialSign,
            other => return Err(format!("unknown noise kind `{other}`")),
        })
    }
}

/// Per-iteration approximation errors with `||ε_k||_∞ <= epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub epsilon: f64,
    pub seed: u64,
    /// `Q*` for [`NoiseKind::AdversarialSign`]; solved on demand when absent.
    pub reference: Option<QFunction>,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::new(NoiseKind::None, 0.0, 0)
    }

    pub fn new(kind: NoiseKind, epsilon: f64, seed: u64) -> Self {
        Self {
            kind,
            epsilon,
            seed,
            reference: None,
        }
    }

    pub fn with_reference(mut self, q_star: QFunction) -> Self {
        self.reference = Some(q_star);
        self
    }

    /// No error is ever injected.
    pub fn is_exact(&self) -> bool {
        self.kind == NoiseKind::None || self.epsilon == 0.0
    }
}

struct NoiseSource {
    kind: NoiseKind,
    epsilon: f64,
    rng: ChaCha8Rng,
    gaussian: Option<Normal<f64>>,
    reference: Option<QFunction>,
}

impl NoiseSource {
    fn new(model: &NoiseModel, mdp: &TabularMdp) -> Result<Self> {
        if !(model.epsilon >= 0.0 && model.epsilon.is_finite()) {
            return Err(ParameterError::NegativeEpsilon { epsilon: model.epsilon }.into());
        }
        let gaussian = (model.kind == NoiseKind::GaussianClipped && !model.is_exact())
            .then(|| Normal::new(0.0, model.epsilon / 2.0).expect("finite sigma"));
        let reference = match (&model.reference, model.kind) {
            (Some(q), _) => {
                q.ensure_shape(mdp)?;
                Some(q.clone())
            }
            (None, NoiseKind::AdversarialSign) if !model.is_exact() => {
                Some(solve_optimal_q(mdp, DEFAULT_TOL, DEFAULT_MAX_ITER)?)
            }
            (None, _) => None,
        };
        Ok(Self {
            kind: model.kind,
            epsilon: model.epsilon,
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            gaussian,
            reference,
        })
    }

    fn next(&mut self, q: &QFunction) -> Option<Array2<f64>> {
        if self.kind == NoiseKind::None || self.epsilon == 0.0 {
            return None;
        }
        let eps = self.epsilon;
        let shape = q.shape();
        Some(match self.kind {
            NoiseKind::None => unreachable!(),
            NoiseKind::UniformBounded => Array2::from_shape_fn(shape, |_| self.rng.random_range(-eps..=eps)),
            NoiseKind::GaussianClipped => {
                let normal = self.gaussian.expect("built with the source");
                Array2::from_shape_fn(shape, |_| normal.sample(&mut self.rng).clamp(-eps, eps))
            }
            NoiseKind::AdversarialSign => {
                let q_star = self.reference.as_ref().expect("resolved at construction");
                Array2::from_shape_fn(shape, |(s, a)| if q.get(s, a) >= q_star.get(s, a) { eps } else { -eps })
            }
        })
    }
}

/// One iterate of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub q: QFunction,
    /// `||Q_{k+1} - Q_k||_∞`.
    pub residual: f64,
    /// `||T Q_k - Q_k||_∞` with the optimal Bellman operator.
    pub bellman_residual: f64,
    pub mean_gap: f64,
    /// `||ε_k||_∞`, the error used to form `Q_{k+1}`.
    pub noise_norm: f64,
    /// `π_k`, greedy w.r.t. `Q_k` (lowest index on ties).
    pub greedy_actions: Vec<usize>,
}

impl IterationRecord {
    pub fn greedy_policy(&self) -> Policy {
        Policy::deterministic(&self.greedy_actions, self.q.n_actions()).expect("greedy actions are in range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub spec: OperatorSpec,
    pub noise_kind: NoiseKind,
    pub epsilon: f64,
    /// Records for `k = 0..=K`.
    pub records: Vec<IterationRecord>,
    /// An exact run stopped on its residual before hitting `k_max`.
    pub converged: bool,
}

impl IterationTrace {
    /// `K`, the index of the last record.
    pub fn last_k(&self) -> usize {
        self.records.len() - 1
    }

    pub fn final_q(&self) -> &QFunction {
        &self.records.last().expect("trace is never empty").q
    }

    pub fn is_exact(&self) -> bool {
        self.noise_kind == NoiseKind::None || self.epsilon == 0.0
    }
}

fn divergence_limit(mdp: &TabularMdp, spec: &OperatorSpec, epsilon: f64) -> f64 {
    let margin = (spec.effective_omega() - spec.effective_alpha()).max(MIN_SAL_MARGIN);
    let soft = if spec.variant.is_soft() {
        spec.tau * (mdp.n_actions() as f64).ln()
    } else {
        0.0
    };
    let scale = mdp.v_max() + (epsilon + soft) / (1.0 - mdp.gamma());
    10.0 * scale / margin
}

fn check_run(spec: &OperatorSpec, mdp: &TabularMdp, k_max: usize, stop_tol: f64) -> Result<()> {
    spec.validate(mdp.gamma())?;
    if k_max == 0 {
        return Err(ParameterError::ZeroIterations.into());
    }
    if !(stop_tol >= 0.0) {
        return Err(ParameterError::Tolerance { tol: stop_tol }.into());
    }
    Ok(())
}

/// Runs value iteration from `Q_0 = 0`.
///
/// Exact runs stop at the first `k` with residual `<= stop_tol` (or at
/// `k_max`); noisy runs always produce `k_max + 1` records.
pub fn iterate(
    mdp: &TabularMdp,
    spec: &OperatorSpec,
    noise: &NoiseModel,
    k_max: usize,
    stop_tol: f64,
) -> Result<IterationTrace> {
    iterate_from(mdp, spec, noise, QFunction::zeros_for(mdp), k_max, stop_tol)
}

pub fn iterate_from(
    mdp: &TabularMdp,
    spec: &OperatorSpec,
    noise: &NoiseModel,
    q0: QFunction,
    k_max: usize,
    stop_tol: f64,
) -> Result<IterationTrace> {
    check_run(spec, mdp, k_max, stop_tol)?;
    q0.ensure_shape(mdp)?;
    let mut source = NoiseSource::new(noise, mdp)?;
    let limit = divergence_limit(mdp, spec, noise.epsilon);
    let exact = noise.is_exact();

    let mut records = Vec::new();
    let mut q = q0;
    let mut converged = false;
    for k in 0..=k_max {
        let tq = crate::operators::apply_bellman_optimal(mdp, &q)?;
        let eps = source.next(&q);
        let next = spec.step(mdp, &q, eps.as_ref());
        let residual = sup_diff(&next, &q);
        let noise_norm = eps.as_ref().map_or(0.0, |e| e.fold(0.0f64, |m, x| m.max(x.abs())));

        let stop = k == k_max || (exact && residual <= stop_tol);
        converged = exact && residual <= stop_tol;
        records.push(IterationRecord {
            k,
            bellman_residual: tq.sup_distance(&q),
            mean_gap: q.mean_gap(),
            greedy_actions: q.greedy_actions(),
            residual,
            noise_norm,
            q,
        });
        if stop {
            break;
        }
        q = guard(next, k + 1, limit)?;
    }
    Ok(IterationTrace {
        spec: *spec,
        noise_kind: noise.kind,
        epsilon: noise.epsilon,
        records,
        converged,
    })
}

fn sup_diff(next: &Array2<f64>, q: &QFunction) -> f64 {
    next.iter()
        .zip(q.values().iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn guard(values: Array2<f64>, k: usize, limit: f64) -> Result<QFunction> {
    let norm = values.fold(0.0f64, |m, v| m.max(v.abs()));
    // NaN norms also fail this comparison.
    if !(norm <= limit) {
        return Err(Error::Divergence { k, norm, limit });
    }
    QFunction::new(values)
}

/// End state of an exact run driven to its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLimit {
    pub q: QFunction,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Exact iteration from `Q_0 = 0` without keeping history. Stops at the first
/// residual `<= stop_tol` and returns that `Q_{k+1}`, or gives up after
/// `k_max` steps (reported through `converged`).
pub fn iterate_limit(mdp: &TabularMdp, spec: &OperatorSpec, stop_tol: f64, k_max: usize) -> Result<IterationLimit> {
    check_run(spec, mdp, k_max, stop_tol)?;
    let limit = divergence_limit(mdp, spec, 0.0);
    let mut q = QFunction::zeros_for(mdp);
    let mut residual = f64::INFINITY;
    for k in 0..k_max {
        let next = spec.step(mdp, &q, None);
        residual = sup_diff(&next, &q);
        q = guard(next, k + 1, limit)?;
        if residual <= stop_tol {
            return Ok(IterationLimit {
                q,
                iterations: k + 1,
                residual,
                converged: true,
            });
        }
    }
    Ok(IterationLimit {
        q,
        iterations: k_max,
        residual,
        converged: false,
    })
}

/// `B_k(s) = max_a [Q_{k-1}(s,a) + Σ_{j=1}^{k-1} λ^j V_{k-1-j}(s)] / A_k` for
/// `k = 1..=K`, rebuilt from the stored `V` history.
///
/// Only defined for exact, zero-initialized runs of the Bellman, smooth, AL
/// and SAL operators.
pub fn b_aggregate(trace: &IterationTrace, spec: &OperatorSpec) -> Result<Vec<Vec<f64>>> {
    if !trace.is_exact() {
        return Err(Error::Aggregate("an exact (noise-free) trace"));
    }
    if spec.variant.is_soft() {
        return Err(Error::Aggregate("a hard-max operator"));
    }
    if trace.records[0].q.values().iter().any(|&v| v != 0.0) {
        return Err(Error::Aggregate("Q_0 = 0"));
    }
    let lambda = derived_constants(spec, 0.0).lambda;
    let history: Vec<Vec<f64>> = trace.records.iter().map(|r| r.q.state_values()).collect();
    let n_states = history[0].len();

    // tail[s] = Σ_{j=1}^{k-1} λ^j V_{k-1-j}(s), advanced by one step per k.
    let mut tail = vec![0.0; n_states];
    let mut out = Vec::with_capacity(trace.last_k());
    for k in 1..=trace.last_k() {
        if k >= 2 {
            for (t, v) in tail.iter_mut().zip(&history[k - 2]) {
                *t = lambda * (*t + v);
            }
        }
        let a = a_k(lambda, k);
        let prev = &trace.records[k - 1].q;
        let row: Vec<f64> = (0..n_states)
            .map(|s| {
                prev.row(s)
                    .iter()
                    .map(|&x| (x + tail[s]) / a)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

//! Finite MDPs, dense Q tables, policies and the exact reference solvers.
//!
//! Everything here is immutable once built. Value iteration and the linear
//! policy-evaluation solve are the oracles the rest of the crate checks
//! against, so both report failure instead of returning a loose answer.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParameterError, Result};

/// Allowed deviation of a transition or policy row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default stopping tolerance for [`solve_optimal_q`].
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default iteration cap for [`solve_optimal_q`].
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Residual ceiling for [`evaluate_policy_exact`].
pub const POLICY_EVAL_TOL: f64 = 1e-10;

/// Finite discounted MDP with dense transition tensor `P[s, a, s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    transitions: Array3<f64>,
    rewards: Array2<f64>,
    gamma: f64,
    r_max: f64,
    // Nonzero successors per (s, a), row-major in (s, a).
    successors: Vec<Vec<(usize, f64)>>,
}

impl TabularMdp {
    /// Validates and builds an MDP. `r_max` defaults to `max |R|`.
    pub fn new(transitions: Array3<f64>, rewards: Array2<f64>, gamma: f64, r_max: Option<f64>) -> Result<Self> {
        check_gamma(gamma)?;
        let (n_states, n_actions, n_next) = transitions.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if n_next != n_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {n_next} successor slots for {n_states} states"
            )));
        }
        if rewards.dim() != (n_states, n_actions) {
            return Err(Error::Shape {
                expected: (n_states, n_actions),
                got: rewards.dim(),
            });
        }

        let mut successors = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = 0.0;
                let mut row = Vec::new();
                for (next, &p) in transitions.slice(ndarray::s![s, a, ..]).iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidMdp(format!(
                            "P({next}|{s},{a}) = {p} is not a probability"
                        )));
                    }
                    sum += p;
                    if p > 0.0 {
                        row.push((next, p));
                    }
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!("transition row ({s},{a}) sums to {sum}")));
                }
                successors.push(row);
            }
        }

        let mut observed = 0.0f64;
        for &r in rewards.iter() {
            if !r.is_finite() {
                return Err(Error::InvalidMdp(format!("reward {r} is not finite")));
            }
            observed = observed.max(r.abs());
        }
        let r_max = match r_max {
            Some(bound) if !(bound.is_finite() && bound >= observed) => {
                return Err(Error::InvalidMdp(format!(
                    "r_max={bound} does not bound max |R| = {observed}"
                )))
            }
            Some(bound) => bound,
            None => observed,
        };

        Ok(Self {
            transitions,
            rewards,
            gamma,
            r_max,
            successors,
        })
    }

    pub fn n_states(&self) -> usize {
        self.rewards.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.rewards.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `r_max / (1 - gamma)`, the bound on every |Q*| and |Q^π|.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    pub fn transitions(&self) -> &Array3<f64> {
        &self.transitions
    }

    pub fn rewards(&self) -> &Array2<f64> {
        &self.rewards
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[[s, a]]
    }

    /// Nonzero `(s', P(s'|s,a))` pairs in increasing `s'`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions() + a]
    }

    /// `Σ_{s'} P(s'|s,a) values[s']`.
    pub fn expected_next(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.successors(s, a).iter().map(|&(next, p)| p * values[next]).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }
}

/// On-disk shape of an MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpDocument {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.n_states, doc.n_actions);
        if doc.rewards.len() != ns || doc.rewards.iter().any(|row| row.len() != na) {
            return Err(Error::Document(format!("rewards must be {ns}x{na}")));
        }
        let ragged = doc.transitions.len() != ns
            || doc
                .transitions
                .iter()
                .any(|per_a| per_a.len() != na || per_a.iter().any(|row| row.len() != ns));
        if ragged {
            return Err(Error::Document(format!("transitions must be {ns}x{na}x{ns}")));
        }
        let rewards =
            Array2::from_shape_vec((ns, na), doc.rewards.concat()).map_err(|e| Error::Document(e.to_string()))?;
        let flat: Vec<f64> = doc.transitions.into_iter().flatten().flatten().collect();
        let transitions = Array3::from_shape_vec((ns, na, ns), flat).map_err(|e| Error::Document(e.to_string()))?;
        TabularMdp::new(transitions, rewards, doc.gamma, doc.r_max)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let rewards = mdp.rewards.outer_iter().map(|row| row.to_vec()).collect();
        let transitions = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| mdp.transitions.slice(ndarray::s![s, a, ..]).to_vec())
                    .collect()
            })
            .collect();
        let observed = mdp.rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        MdpDocument {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma,
            r_max: (mdp.r_max != observed).then_some(mdp.r_max),
            rewards,
            transitions,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Discount(gamma))
    }
}

/// Deterministic chain. Action 0 moves left, action 1 moves right (both
/// clamped at the ends) and any further action stays put. The number of
/// actions is the row length of `rewards`.
pub fn build_chain_mdp(n_states: usize, gamma: f64, rewards: &[Vec<f64>]) -> Result<TabularMdp> {
    check_gamma(gamma)?;
    if n_states == 0 {
        return Err(Error::InvalidMdp("chain needs at least one state".into()));
    }
    if rewards.len() != n_states {
        return Err(Error::InvalidMdp(format!(
            "expected {n_states} reward rows, got {}",
            rewards.len()
        )));
    }
    let n_actions = rewards[0].len();
    if n_actions == 0 || rewards.iter().any(|row| row.len() != n_actions) {
        return Err(Error::InvalidMdp("reward rows must share a nonzero length".into()));
    }

    let mut transitions = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let next = match a {
                0 => s.saturating_sub(1),
                1 => (s + 1).min(n_states - 1),
                _ => s,
            };
            transitions[[s, a, next]] = 1.0;
        }
    }
    let rewards = Array2::from_shape_vec((n_states, n_actions), rewards.concat())
        .map_err(|e| Error::InvalidMdp(e.to_string()))?;
    TabularMdp::new(transitions, rewards, gamma, None)
}

/// Garnet-style random MDP: every `(s, a)` reaches exactly `branching`
/// distinct successors with normalized random weights, rewards are uniform
/// in `[-1, 1]` and `r_max` is fixed to 1.
pub fn build_random_mdp(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    seed: u64,
    gamma: f64,
) -> Result<TabularMdp> {
    check_gamma(gamma)?;
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidMdp("need at least one state and one action".into()));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::Branching { branching, n_states });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut targets = rand::seq::index::sample(&mut rng, n_states, branching).into_vec();
            targets.sort_unstable();
            // 1 - U[0,1) keeps every weight strictly positive.
            let weights: Vec<f64> = targets.iter().map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for (&next, w) in targets.iter().zip(&weights) {
                transitions[[s, a, next]] = w / total;
            }
        }
    }
    let rewards = Array2::from_shape_fn((n_states, n_actions), |_| rng.random_range(-1.0..=1.0));
    TabularMdp::new(transitions, rewards, gamma, Some(1.0))
}

/// Dense `Q(s, a)` table with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    values: Array2<f64>,
}

impl QFunction {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((s, a), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(s, a));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidMdp("ragged Q rows".into()));
        }
        let values = Array2::from_shape_vec((rows.len(), n_actions), rows.concat())
            .map_err(|e| Error::InvalidMdp(e.to_string()))?;
        Self::new(values)
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn zeros_for(mdp: &TabularMdp) -> Self {
        Self::zeros(mdp.n_states(), mdp.n_actions())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn n_states(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[[s, a]]
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.values.row(s)
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn state_values(&self) -> Vec<f64> {
        self.values
            .outer_iter()
            .map(|row| row.fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .collect()
    }

    /// Greedy action per state, ties to the lowest index.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.values.outer_iter().map(|row| argmax(row)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_∞`. Panics on shape mismatch.
    pub fn sup_distance(&self, other: &QFunction) -> f64 {
        assert_eq!(self.shape(), other.shape(), "Q shapes differ");
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Mean over states of the best minus second-best action value; a state
    /// with a single action contributes 0.
    pub fn mean_gap(&self) -> f64 {
        if self.n_actions() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .values
            .outer_iter()
            .map(|row| {
                let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for &v in row.iter() {
                    if v > best {
                        second = best;
                        best = v;
                    } else if v > second {
                        second = v;
                    }
                }
                best - second
            })
            .sum();
        total / self.n_states() as f64
    }

    pub(crate) fn ensure_shape(&self, mdp: &TabularMdp) -> Result<()> {
        let expected = (mdp.n_states(), mdp.n_actions());
        if self.shape() == expected {
            Ok(())
        } else {
            Err(Error::Shape {
                expected,
                got: self.shape(),
            })
        }
    }

    pub(crate) fn from_trusted(values: Array2<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// Stochastic policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    action_probs: Array2<f64>,
}

impl Policy {
    pub fn new(action_probs: Array2<f64>) -> Result<Self> {
        for (s, row) in action_probs.outer_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidPolicy(format!("row {s} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self { action_probs })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range at state {s}")));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self { action_probs: probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            action_probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn action_probs(&self) -> &Array2<f64> {
        &self.action_probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_probs[[s, a]]
    }

    pub(crate) fn ensure_shape(&self, mdp: &TabularMdp) -> Result<()> {
        let expected = (mdp.n_states(), mdp.n_actions());
        if self.action_probs.dim() == expected {
            Ok(())
        } else {
            Err(Error::Shape {
                expected,
                got: self.action_probs.dim(),
            })
        }
    }
}

pub fn greedy_policy(q: &QFunction) -> Policy {
    Policy::deterministic(&q.greedy_actions(), q.n_actions()).expect("greedy actions are in range")
}

/// Value iteration from `Q = 0` until `||TQ - Q||_∞ <= tol`, followed by an
/// exact evaluation of the resulting greedy policy.
pub fn solve_optimal_q(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<QFunction> {
    if !(tol > 0.0) {
        return Err(ParameterError::Tolerance { tol }.into());
    }
    let mut q = QFunction::zeros_for(mdp);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = crate::operators::apply_bellman_optimal(mdp, &q)?;
        residual = next.sup_distance(&q);
        q = next;
        if residual <= tol {
            return Ok(polish(mdp, q, tol));
        }
    }
    Err(Error::NotConverged {
        tol,
        iterations: max_iter,
        residual,
    })
}

// Value iteration leaves an error of up to gamma/(1-gamma) * tol. When the
// greedy policy of the VI answer is already optimal, its exact evaluation is
// Q* to solver precision; keep whichever of the two has the smaller residual.
fn polish(mdp: &TabularMdp, q: QFunction, tol: f64) -> QFunction {
    let Ok(exact) = evaluate_policy_exact(mdp, &greedy_policy(&q)) else {
        return q;
    };
    let Ok(backup) = crate::operators::apply_bellman_optimal(mdp, &exact) else {
        return q;
    };
    if backup.sup_distance(&exact) <= tol {
        exact
    } else {
        q
    }
}

/// `Q^π` by a direct LU solve of `(I - γ P Π) q = r` over all state-action pairs.
pub fn evaluate_policy_exact(mdp: &TabularMdp, policy: &Policy) -> Result<QFunction> {
    policy.ensure_shape(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let gamma = mdp.gamma();

    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for &(next, p) in mdp.successors(s, a) {
                for b in 0..na {
                    let pi = policy.prob(next, b);
                    if pi > 0.0 {
                        system[(row, next * na + b)] -= gamma * p * pi;
                    }
                }
            }
        }
    }
    let rhs = DVector::from_iterator(n, mdp.rewards().iter().copied());

    let lu = system.clone().lu();
    let mut solution = lu.solve(&rhs).ok_or(Error::PolicyEvaluation {
        residual: f64::INFINITY,
        limit: POLICY_EVAL_TOL,
    })?;
    // One refinement step against the original system.
    let correction = &rhs - &system * &solution;
    if let Some(delta) = lu.solve(&correction) {
        solution += delta;
    }

    let q = QFunction::new(
        Array2::from_shape_vec((ns, na), solution.iter().copied().collect())
            .expect("solution has n_states * n_actions entries"),
    )?;
    let residual = crate::operators::apply_bellman_policy(mdp, policy, &q)?.sup_distance(&q);
    if residual > POLICY_EVAL_TOL {
        return Err(Error::PolicyEvaluation {
            residual,
            limit: POLICY_EVAL_TOL,
        });
    }
    Ok(q)
}

//! Checks for the smoothing-advantage theory: closed-form fixed points,
//! action-gap laws, preservation of the action order, error-propagation
//! bounds and the convergence-rate series.

use serde::{Deserialize, Serialize};

use crate::error::{ParameterError, Result};
use crate::mdp::{QFunction, TabularMdp};
use crate::operators::{omega_upper_bound, DerivedConstants, OperatorSpec, MIN_SAL_MARGIN};

/// Gaps at or below this are treated as ties (ratio 0/0).
pub const TIE_TOL: f64 = 1e-9;

fn sal_params(omega: f64, alpha: f64) -> Result<(), ParameterError> {
    for (name, value) in [("omega", omega), ("alpha", alpha)] {
        if !value.is_finite() {
            return Err(ParameterError::NonFinite { name, value });
        }
    }
    if alpha < 0.0 {
        return Err(ParameterError::NegativeAlpha { alpha });
    }
    if alpha >= omega {
        return Err(ParameterError::AlphaNotBelowOmega { alpha, omega });
    }
    if omega - alpha < MIN_SAL_MARGIN {
        return Err(ParameterError::MarginTooSmall {
            gap: omega - alpha,
            margin: MIN_SAL_MARGIN,
        });
    }
    Ok(())
}

/// `Q̂*(s,a) = (ω Q*(s,a) - α V*(s)) / (ω - α)`.
pub fn sal_fixed_point_closed_form(q_star: &QFunction, omega: f64, alpha: f64) -> Result<QFunction> {
    sal_params(omega, alpha)?;
    let v_star = q_star.state_values();
    let values = ndarray::Array2::from_shape_fn(q_star.shape(), |(s, a)| {
        (omega * q_star.get(s, a) - alpha * v_star[s]) / (omega - alpha)
    });
    QFunction::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePreservation {
    pub max_agrees: bool,
    pub argmax_agrees: bool,
    pub order_agrees: bool,
}

impl StatePreservation {
    pub fn passed(&self) -> bool {
        self.max_agrees && self.argmax_agrees && self.order_agrees
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub states: Vec<StatePreservation>,
    /// Largest `|max_a Q̂(s,a) - max_a Q*(s,a)|` over states.
    pub max_value_error: f64,
}

impl PreservationReport {
    pub fn passed(&self) -> bool {
        self.states.iter().all(StatePreservation::passed)
    }

    pub fn failing_states(&self) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, st)| !st.passed())
            .map(|(s, _)| s)
            .collect()
    }
}

fn argmax_set(row: &[f64]) -> Vec<usize> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..row.len()).filter(|&a| row[a] >= max - TIE_TOL).collect()
}

/// Per-state comparison of `q_hat` against `q_star`: equal maxima within
/// `tol`, equal argmax sets and the same action ranking. Actions tied in
/// `q_star` (within [`TIE_TOL`]) may appear in any order.
pub fn verify_all_preserving(q_star: &QFunction, q_hat: &QFunction, tol: f64) -> Result<PreservationReport> {
    if q_star.shape() != q_hat.shape() {
        return Err(crate::error::Error::Shape {
            expected: q_star.shape(),
            got: q_hat.shape(),
        });
    }
    let mut max_value_error = 0.0f64;
    let states = (0..q_star.n_states())
        .map(|s| {
            let star = q_star.row(s).to_vec();
            let hat = q_hat.row(s).to_vec();
            let max_star = star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let max_hat = hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let err = (max_star - max_hat).abs();
            max_value_error = max_value_error.max(err);

            let mut order_agrees = true;
            for a in 0..star.len() {
                for b in 0..star.len() {
                    if star[a] > star[b] + TIE_TOL && hat[a] < hat[b] - TIE_TOL {
                        order_agrees = false;
                    }
                }
            }
            StatePreservation {
                max_agrees: err <= tol,
                argmax_agrees: argmax_set(&star) == argmax_set(&hat),
                order_agrees,
            }
        })
        .collect();
    Ok(PreservationReport {
        states,
        max_value_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub state: usize,
    pub action: usize,
    /// `V*(s) - Q*(s,a)`.
    pub gap_bellman: f64,
    /// `V*(s) - Q̂*(s,a)`.
    pub gap_operator: f64,
    /// `gap_operator / gap_bellman`, absent when `gap_bellman <= TIE_TOL`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
    /// `ω / (ω - α)`.
    pub expected_ratio: f64,
}

impl GapReport {
    pub fn degenerate_count(&self) -> usize {
        self.entries.iter().filter(|e| e.ratio.is_none()).count()
    }

    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter_map(|e| e.ratio)
    }

    /// Largest `|ratio - ω/(ω-α)|` over non-degenerate entries (0 if none).
    pub fn max_ratio_error(&self) -> f64 {
        self.ratios()
            .map(|r| (r - self.expected_ratio).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest gap, which must stay `>= -slack` everywhere.
    pub fn min_gap(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| [e.gap_bellman, e.gap_operator])
            .fold(f64::INFINITY, f64::min)
    }
}

fn gap_entries(q_star: &QFunction, q_hat: &QFunction, omega: f64, alpha: f64, anchor: &[f64]) -> Result<GapReport> {
    if q_star.shape() != q_hat.shape() {
        return Err(crate::error::Error::Shape {
            expected: q_star.shape(),
            got: q_hat.shape(),
        });
    }
    sal_params(omega, alpha)?;
    let v_star = q_star.state_values();
    let mut entries = Vec::with_capacity(q_star.n_states() * q_star.n_actions());
    for s in 0..q_star.n_states() {
        for a in 0..q_star.n_actions() {
            let gap_bellman = v_star[s] - q_star.get(s, a);
            let gap_operator = anchor[s] - q_hat.get(s, a);
            entries.push(GapEntry {
                state: s,
                action: a,
                gap_bellman,
                gap_operator,
                ratio: (gap_bellman > TIE_TOL).then(|| gap_operator / gap_bellman),
            });
        }
    }
    Ok(GapReport {
        entries,
        expected_ratio: omega / (omega - alpha),
    })
}

/// Action gaps of `q_hat` relative to the gaps of `q_star`; both are measured
/// against `V* = max_a Q*`.
pub fn gap_report(q_star: &QFunction, q_hat: &QFunction, omega: f64, alpha: f64) -> Result<GapReport> {
    gap_entries(q_star, q_hat, omega, alpha, &q_star.state_values())
}

/// Like [`gap_report`], but the operator gaps of `q_lim` are taken against its
/// own maxima, `max_a Q_lim(s,a) - Q_lim(s,a)`.
///
/// At the exact fixed point the two agree. For an iterate stopped on a small
/// residual the remaining error is mostly a per-state offset, which this form
/// cancels.
pub fn limit_gap_report(q_star: &QFunction, q_lim: &QFunction, omega: f64, alpha: f64) -> Result<GapReport> {
    gap_entries(q_star, q_lim, omega, alpha, &q_lim.state_values())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Consecutive `(ω, ω')` comparisons at fixed `α` times non-degenerate entries.
    pub omega_comparisons: usize,
    pub omega_violations: usize,
    pub alpha_comparisons: usize,
    pub alpha_violations: usize,
    /// Grid pairs with `ω <= 1` checked for `Gap(SAL) >= Gap(AL) >= Gap(T)`.
    pub chain_comparisons: usize,
    pub chain_violations: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.omega_violations == 0 && self.alpha_violations == 0 && self.chain_violations == 0
    }
}

fn closed_form_gaps(q_star: &QFunction, omega: f64, alpha: f64) -> Result<Vec<(f64, f64)>> {
    let q_hat = sal_fixed_point_closed_form(q_star, omega, alpha)?;
    let report = gap_report(q_star, &q_hat, omega, alpha)?;
    Ok(report.entries.iter().map(|e| (e.gap_bellman, e.gap_operator)).collect())
}

fn sorted_unique(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Closed-form gap monotonicity: strictly decreasing in `ω` at fixed `α`,
/// strictly increasing in `α` at fixed `ω`, and for `α < ω <= 1` the ordering
/// `Gap(SAL) >= Gap(AL) >= Gap(T)`. Only non-degenerate entries are compared
/// and only pairs with `ω - α >= MIN_SAL_MARGIN` enter.
pub fn gap_monotonicity_scan(q_star: &QFunction, omega_grid: &[f64], alpha_grid: &[f64]) -> Result<MonotonicityReport> {
    let omegas = sorted_unique(omega_grid);
    let alphas = sorted_unique(alpha_grid);
    let valid = |omega: f64, alpha: f64| alpha >= 0.0 && omega - alpha >= MIN_SAL_MARGIN;
    let mut report = MonotonicityReport::default();

    for &alpha in &alphas {
        let series: Vec<Vec<(f64, f64)>> = omegas
            .iter()
            .filter(|&&w| valid(w, alpha))
            .map(|&w| closed_form_gaps(q_star, w, alpha))
            .collect::<Result<_>>()?;
        for pair in series.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                if lo.0 > TIE_TOL {
                    report.omega_comparisons += 1;
                    if !(hi.1 < lo.1) {
                        report.omega_violations += 1;
                    }
                }
            }
        }
    }

    for &omega in &omegas {
        let series: Vec<Vec<(f64, f64)>> = alphas
            .iter()
            .filter(|&&a| valid(omega, a))
            .map(|&a| closed_form_gaps(q_star, omega, a))
            .collect::<Result<_>>()?;
        for pair in series.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                if lo.0 > TIE_TOL {
                    report.alpha_comparisons += 1;
                    if !(hi.1 > lo.1) {
                        report.alpha_violations += 1;
                    }
                }
            }
        }
    }

    for &omega in omegas.iter().filter(|&&w| w <= 1.0) {
        for &alpha in alphas.iter().filter(|&&a| valid(omega, a) && valid(1.0, a)) {
            let sal = closed_form_gaps(q_star, omega, alpha)?;
            let al = closed_form_gaps(q_star, 1.0, alpha)?;
            for (s, l) in sal.iter().zip(&al) {
                report.chain_comparisons += 1;
                if s.1 < l.1 - TIE_TOL || l.1 < l.0 - TIE_TOL {
                    report.chain_violations += 1;
                }
            }
        }
    }
    Ok(report)
}

fn bound_params(gamma: f64, omega: f64, alpha: f64, eps: f64) -> Result<(), ParameterError> {
    OperatorSpec::sal(omega, alpha).validate(gamma)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(ParameterError::NonFinite {
            name: "gamma",
            value: gamma,
        });
    }
    if !(eps >= 0.0) {
        return Err(ParameterError::NegativeEpsilon { epsilon: eps });
    }
    Ok(())
}

/// `Σ_{i=0}^{k} x^i y^{k-i}` by direct summation.
fn mixed_power_sum(x: f64, y: f64, k: usize) -> f64 {
    (0..=k).map(|i| x.powi(i as i32) * y.powi((k - i) as i32)).sum()
}

/// `partial[m] = Σ_{j=0}^{m-1} r^j` for `m = 0..=n`.
fn partial_geometric(r: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let (mut acc, mut power) = (0.0, 1.0);
    out.push(acc);
    for _ in 0..n {
        acc += power;
        power *= r;
        out.push(acc);
    }
    out
}

/// `Σ_{i=0}^{k-1} outer^i Σ_{j=0}^{k-1-i} inner^{k-1-i-j}`; the inner sum is a
/// geometric partial sum of length `k - i`.
fn accumulated_error_sum(outer: f64, inner: f64, k: usize) -> f64 {
    let partial = partial_geometric(inner, k);
    (0..k).map(|i| outer.powi(i as i32) * partial[k - i]).sum()
}

/// Right-hand side of the approximate-SAL error-propagation bound after `k`
/// iterations, with every `||ε_j||` replaced by `eps`.
///
/// The error term uses `|λ|` in place of `λ`, which makes it the triangle
/// inequality bound on `||Σ_j λ^{k-1-i-j} ε_j||` when `ω > 1 + α`.
pub fn error_bound_sal(k: usize, gamma: f64, omega: f64, alpha: f64, eps: f64, v_max: f64) -> Result<f64> {
    bound_params(gamma, omega, alpha, eps)?;
    let c = DerivedConstants::new(omega, alpha, gamma);
    let scale = 2.0 * gamma / (c.a_k(k + 1) * (1.0 - gamma));
    let rate = mixed_power_sum(c.xi, c.lambda, k) * v_max;
    let error = omega * accumulated_error_sum(c.xi, c.lambda.abs(), k) * eps;
    Ok(scale * (rate + error))
}

/// The advantage-learning specialization of the bound (`ω = 1`, so
/// `λ = α`, `ξ = γ`, `A_k = (1 - α^k)/(1 - α)`).
pub fn error_bound_al(k: usize, gamma: f64, alpha: f64, eps: f64, v_max: f64) -> Result<f64> {
    bound_params(gamma, 1.0, alpha, eps)?;
    let a_next = if alpha == 1.0 {
        (k + 1) as f64
    } else {
        (1.0 - alpha.powi(k as i32 + 1)) / (1.0 - alpha)
    };
    let scale = 2.0 * gamma / (a_next * (1.0 - gamma));
    let rate: f64 = (0..=k).map(|i| gamma.powi(i as i32) * alpha.powi((k - i) as i32)).sum();
    // Σ_{j=0}^{n-1} α^j in closed form.
    let geometric = |n: usize| {
        if alpha == 1.0 {
            n as f64
        } else {
            (1.0 - alpha.powi(n as i32)) / (1.0 - alpha)
        }
    };
    let error: f64 = (0..k).map(|i| gamma.powi(i as i32) * geometric(k - i)).sum();
    Ok(scale * (rate * v_max + error * eps))
}

/// Bound and rate quantities as functions of `k`. Operations that compute
/// only part of them leave the remaining vectors empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundSeries {
    pub k_values: Vec<usize>,
    pub sal_bound: Vec<f64>,
    pub al_bound: Vec<f64>,
    pub sal_eps: Vec<f64>,
    pub al_eps: Vec<f64>,
    pub rate_series_sal: Vec<f64>,
    pub rate_series_al: Vec<f64>,
}

/// Error-accumulation terms of the SAL and AL bounds without the `2γ/(1-γ)`
/// factor, for `k = 0..=k_max`. Requires `0 <= α < ω < 1`.
pub fn remark33_series(k_max: usize, gamma: f64, omega: f64, alpha: f64, eps: f64) -> Result<BoundSeries> {
    bound_params(gamma, omega, alpha, eps)?;
    if omega >= 1.0 {
        return Err(ParameterError::OmegaNotBelowOne { omega }.into());
    }
    let c = DerivedConstants::new(omega, alpha, gamma);
    let sal_partial = partial_geometric(c.lambda, k_max + 1);
    let al_partial = partial_geometric(alpha, k_max + 1);

    let mut series = BoundSeries::default();
    for k in 0..=k_max {
        // The i = k term has an empty inner sum.
        let sal_sum = (0..k).fold(0.0, |acc, i| acc + c.xi.powi(i as i32) * sal_partial[k - i]);
        let al_sum = (0..k).fold(0.0, |acc, i| acc + gamma.powi(i as i32) * al_partial[k - i]);
        let sal_norm = (1.0 - c.lambda) / (1.0 - c.lambda.powi(k as i32 + 1));
        let al_norm = (1.0 - alpha) / (1.0 - alpha.powi(k as i32 + 1));
        series.k_values.push(k);
        series.sal_eps.push(omega * sal_norm * sal_sum * eps);
        series.al_eps.push(al_norm * al_sum * eps);
    }
    Ok(series)
}

/// `Σ_{i=0}^{k} ξ^i λ^{k-i}` and `Σ_{i=0}^{k} γ^i α^{k-i}` for `k = 0..=k_max`.
pub fn rate_series(k_max: usize, gamma: f64, omega: f64, alpha: f64) -> Result<BoundSeries> {
    bound_params(gamma, omega, alpha, 0.0)?;
    let c = DerivedConstants::new(omega, alpha, gamma);
    let mut series = BoundSeries::default();
    for k in 0..=k_max {
        series.k_values.push(k);
        series.rate_series_sal.push(mixed_power_sum(c.xi, c.lambda, k));
        series.rate_series_al.push(mixed_power_sum(gamma, alpha, k));
    }
    Ok(series)
}

/// All bound quantities on one grid. The `ε` fields are filled only when
/// `ω < 1` and the AL bound only when `α < 1`.
pub fn bound_series(k_max: usize, gamma: f64, omega: f64, alpha: f64, eps: f64, v_max: f64) -> Result<BoundSeries> {
    let mut series = rate_series(k_max, gamma, omega, alpha)?;
    if omega < 1.0 {
        let eps_terms = remark33_series(k_max, gamma, omega, alpha, eps)?;
        series.sal_eps = eps_terms.sal_eps;
        series.al_eps = eps_terms.al_eps;
    }
    for k in 0..=k_max {
        series
            .sal_bound
            .push(error_bound_sal(k, gamma, omega, alpha, eps, v_max)?);
        if alpha < 1.0 {
            series.al_bound.push(error_bound_al(k, gamma, alpha, eps, v_max)?);
        }
    }
    Ok(series)
}

/// Outcome of running the two soft operators side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftEquivalenceReport {
    pub iterations: usize,
    /// Greedy policies coincided at every `k = 0..=iterations`.
    pub policies_agree: bool,
    pub first_disagreement: Option<usize>,
    /// Largest per-iteration `max - min` of `Q^{MVI}_k - Q^{GVI}_k`.
    pub max_spread: f64,
    pub spread_ok: bool,
}

/// Spread ceiling used by [`gvi_mvi_equivalence_check`].
pub const SPREAD_TOL: f64 = 1e-8;

/// Iterates G-VI and M-VI from `Q_0 = 0` for `k_max` steps and compares the
/// greedy policies and the shape of the difference at every step.
pub fn gvi_mvi_equivalence_check(
    mdp: &TabularMdp,
    alpha: f64,
    tau: f64,
    k_max: usize,
) -> Result<SoftEquivalenceReport> {
    let gvi = OperatorSpec::gvi(alpha, tau);
    let mvi = OperatorSpec::mvi(alpha, tau);
    gvi.validate(mdp.gamma())?;
    mvi.validate(mdp.gamma())?;

    let mut q_g = QFunction::zeros_for(mdp);
    let mut q_m = QFunction::zeros_for(mdp);
    let mut first_disagreement = None;
    let mut max_spread = 0.0f64;
    for k in 0..=k_max {
        if first_disagreement.is_none() && q_g.greedy_actions() != q_m.greedy_actions() {
            first_disagreement = Some(k);
        }
        let (lo, hi) = q_m
            .values()
            .iter()
            .zip(q_g.values().iter())
            .map(|(m, g)| m - g)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        max_spread = max_spread.max(hi - lo);
        if k < k_max {
            q_g = gvi.apply(mdp, &q_g)?;
            q_m = mvi.apply(mdp, &q_m)?;
        }
    }
    Ok(SoftEquivalenceReport {
        iterations: k_max,
        policies_agree: first_disagreement.is_none(),
        first_disagreement,
        max_spread,
        spread_ok: max_spread < SPREAD_TOL,
    })
}

/// Smooth-operator contraction modulus `|1 - ω| + ω γ`.
pub fn contraction_modulus(omega: f64, gamma: f64) -> f64 {
    DerivedConstants::new(omega, 0.0, gamma).xi
}

/// Whether `ω` lies in the admissible smoothing range `(0, 2/(1+γ))`.
pub fn omega_in_range(omega: f64, gamma: f64) -> bool {
    omega > 0.0 && omega < omega_upper_bound(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_chain_mdp, build_random_mdp, solve_optimal_q};
    use approx::assert_abs_diff_eq;

    fn pair(a0: f64, a1: f64) -> QFunction {
        QFunction::from_rows(&[vec![a0, a1]]).unwrap()
    }

    #[test]
    fn closed_form_cases() {
        let q_star = pair(2.0, 1.0);
        assert_eq!(sal_fixed_point_closed_form(&q_star, 0.7, 0.0).unwrap(), q_star);
        let q = sal_fixed_point_closed_form(&q_star, 0.95, 0.9).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.get(0, 1), -17.0, epsilon = 1e-12);
        let q = sal_fixed_point_closed_form(&q_star, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(0, 1), 0.0, epsilon = 1e-15);
        assert!(sal_fixed_point_closed_form(&q_star, 0.5, 0.5).is_err());
        assert!(sal_fixed_point_closed_form(&q_star, 0.5, 0.5 - 1e-9).is_err());
    }

    #[test]
    fn preservation_cases() {
        let mdp = build_random_mdp(10, 4, 3, 3, 0.9).unwrap();
        let q_star = solve_optimal_q(&mdp, 1e-12, 1_000_000).unwrap();
        assert!(verify_all_preserving(&q_star, &q_star, 1e-8).unwrap().passed());
        let q_hat = sal_fixed_point_closed_form(&q_star, 0.95, 0.9).unwrap();
        assert!(verify_all_preserving(&q_star, &q_hat, 1e-8).unwrap().passed());

        let swapped = QFunction::from_rows(&[vec![3.0, 1.0, 2.0], vec![3.0, 2.0, 1.0]]).unwrap();
        let star = QFunction::from_rows(&[vec![3.0, 2.0, 1.0], vec![3.0, 2.0, 1.0]]).unwrap();
        let report = verify_all_preserving(&star, &swapped, 1e-8).unwrap();
        assert_eq!(report.failing_states(), vec![0]);
        assert!(report.states[0].max_agrees && report.states[0].argmax_agrees);
        assert!(!report.states[0].order_agrees);
    }

    #[test]
    fn preservation_allows_permuted_ties() {
        let star = QFunction::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let hat = QFunction::from_rows(&[vec![1.0, 1.0 - 1e-10, -5.0]]).unwrap();
        assert!(verify_all_preserving(&star, &hat, 1e-8).unwrap().passed());
        let lost = QFunction::from_rows(&[vec![1.0, 0.5, -5.0]]).unwrap();
        assert!(!verify_all_preserving(&star, &lost, 1e-8).unwrap().states[0].argmax_agrees);
    }

    #[test]
    fn gap_ratio_cases() {
        let mdp = build_random_mdp(12, 4, 3, 4, 0.9).unwrap();
        let q_star = solve_optimal_q(&mdp, 1e-12, 1_000_000).unwrap();
        for (omega, alpha, expected) in [(1.0, 0.5, 2.0), (0.95, 0.9, 19.0), (0.4, 0.0, 1.0)] {
            let q_hat = sal_fixed_point_closed_form(&q_star, omega, alpha).unwrap();
            let report = gap_report(&q_star, &q_hat, omega, alpha).unwrap();
            assert_abs_diff_eq!(report.expected_ratio, expected, epsilon = 1e-12);
            assert!(report.max_ratio_error() <= 1e-6);
            assert_eq!(report.degenerate_count(), 12, "one greedy action per state");
            assert!(report.min_gap() >= -1e-9);
        }
    }

    #[test]
    fn limit_gaps_ignore_per_state_offsets() {
        let q_star = QFunction::from_rows(&[vec![2.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let q_hat = sal_fixed_point_closed_form(&q_star, 0.5, 0.3).unwrap();
        let exact = gap_report(&q_star, &q_hat, 0.5, 0.3).unwrap();
        assert_eq!(limit_gap_report(&q_star, &q_hat, 0.5, 0.3).unwrap(), exact);

        let shifted = QFunction::from_rows(&[
            vec![q_hat.get(0, 0) + 1e-3, q_hat.get(0, 1) + 1e-3],
            vec![q_hat.get(1, 0) - 2e-3, q_hat.get(1, 1) - 2e-3],
        ])
        .unwrap();
        let limit = limit_gap_report(&q_star, &shifted, 0.5, 0.3).unwrap();
        assert!(limit.max_ratio_error() <= 1e-12);
        assert!(gap_report(&q_star, &shifted, 0.5, 0.3).unwrap().max_ratio_error() > 1e-4);
    }

    #[test]
    fn monotonicity_grid_arithmetic() {
        let ratio = |w: f64, a: f64| w / (w - a);
        let by_omega: Vec<f64> = [0.3, 0.5, 0.9].iter().map(|&w| ratio(w, 0.2)).collect();
        assert_abs_diff_eq!(by_omega[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(by_omega[1], 5.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(by_omega[2], 9.0 / 7.0, epsilon = 1e-12);
        let by_alpha: Vec<f64> = [0.2, 0.3, 0.5].iter().map(|&a| ratio(0.9, a)).collect();
        assert_abs_diff_eq!(by_alpha[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(by_alpha[2], 2.25, epsilon = 1e-12);
        assert!(ratio(0.5, 0.3) >= ratio(1.0, 0.3) && ratio(1.0, 0.3) >= 1.0);

        let mdp = build_random_mdp(10, 4, 3, 8, 0.95).unwrap();
        let q_star = solve_optimal_q(&mdp, 1e-12, 1_000_000).unwrap();
        let grid = [0.2, 0.3, 0.5, 0.9];
        let report = gap_monotonicity_scan(&q_star, &grid, &grid).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.omega_comparisons > 0 && report.alpha_comparisons > 0);
        assert!(report.chain_comparisons > 0);
    }

    // Triple-loop oracle, written straight from the bound's double sum.
    fn brute_bound(k: usize, gamma: f64, omega: f64, alpha: f64, eps: f64, v_max: f64) -> f64 {
        let lambda = 1.0 - omega + alpha;
        let xi = (1.0 - omega).abs() + omega * gamma;
        let mut a_next = 0.0;
        for j in 0..=k {
            a_next += lambda.powi(j as i32);
        }
        let mut first = 0.0;
        for i in 0..=k {
            first += xi.powi(i as i32) * lambda.powi((k - i) as i32);
        }
        let mut second = 0.0;
        for i in 0..k {
            let mut inner = 0.0;
            for j in 0..=(k - 1 - i) {
                inner += lambda.abs().powi((k - 1 - i - j) as i32) * eps;
            }
            second += xi.powi(i as i32) * inner;
        }
        2.0 * gamma / (a_next * (1.0 - gamma)) * first * v_max + 2.0 * gamma * omega / (a_next * (1.0 - gamma)) * second
    }

    #[test]
    fn error_bound_matches_brute_force() {
        for &(gamma, omega, alpha) in &[(0.99, 0.95, 0.9), (0.9, 0.5, 0.2), (0.5, 1.2, 1.1), (0.5, 1.3, 0.1)] {
            for k in [0, 1, 2, 7, 40] {
                let got = error_bound_sal(k, gamma, omega, alpha, 0.3, 10.0).unwrap();
                let want = brute_bound(k, gamma, omega, alpha, 0.3, 10.0);
                assert_abs_diff_eq!(got, want, epsilon = 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn error_bound_special_cases() {
        let (gamma, v_max) = (0.9, 10.0);
        assert_abs_diff_eq!(
            error_bound_sal(0, gamma, 1.0, 0.0, 0.0, v_max).unwrap(),
            2.0 * gamma * v_max / (1.0 - gamma),
            epsilon = 1e-12
        );
        for k in [1, 5, 30] {
            let want = 2.0 * gamma.powi(k as i32 + 1) * v_max / (1.0 - gamma);
            assert_abs_diff_eq!(
                error_bound_sal(k, gamma, 1.0, 0.0, 0.0, v_max).unwrap(),
                want,
                epsilon = 1e-12
            );
        }
        let big = error_bound_sal(50, 0.99, 0.95, 0.9, 1.0, 100.0).unwrap();
        assert!(big.is_finite() && big > 0.0);
        assert!(error_bound_sal(3, 0.9, 0.5, 0.6, 0.1, 1.0).is_err());
    }

    #[test]
    fn al_bound_is_omega_one_specialization() {
        for alpha in [0.0, 0.2, 0.5, 0.9] {
            for k in [0, 1, 3, 20, 200] {
                let al = error_bound_al(k, 0.95, alpha, 0.1, 20.0).unwrap();
                let sal = error_bound_sal(k, 0.95, 1.0, alpha, 0.1, 20.0).unwrap();
                assert_abs_diff_eq!(al, sal, epsilon = 1e-10 * al.max(1.0));
            }
        }
        // α = 0: 2γ^{k+1} V/(1-γ) + 2γ/(1-γ) Σ_{i<k} γ^i ε.
        let (gamma, eps, v_max): (f64, f64, f64) = (0.8, 0.05, 5.0);
        for k in [0, 4, 12] {
            let tail: f64 = (0..k).map(|i| gamma.powi(i)).sum::<f64>() * eps;
            let want = 2.0 * gamma.powi(k + 1) * v_max / (1.0 - gamma) + 2.0 * gamma / (1.0 - gamma) * tail;
            assert_abs_diff_eq!(
                error_bound_al(k as usize, gamma, 0.0, eps, v_max).unwrap(),
                want,
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            error_bound_al(0, gamma, 0.4, 0.0, v_max).unwrap(),
            2.0 * gamma * v_max / (1.0 - gamma),
            epsilon = 1e-12
        );
    }

    fn brute_eps_terms(k: usize, gamma: f64, omega: f64, alpha: f64, eps: f64) -> (f64, f64) {
        let lambda = 1.0 - omega + alpha;
        let xi = (1.0 - omega).abs() + omega * gamma;
        let (mut sal, mut al) = (0.0, 0.0);
        for i in 0..=k {
            // Inner index runs j = 0..=k-1-i, empty when i = k.
            for j in 0..(k - i) {
                sal += xi.powi(i as i32) * lambda.powi((k - 1 - i - j) as i32) * eps;
                al += gamma.powi(i as i32) * alpha.powi((k - 1 - i - j) as i32) * eps;
            }
        }
        let sal = omega * (1.0 - lambda) / (1.0 - lambda.powi(k as i32 + 1)) * sal;
        let al = (1.0 - alpha) / (1.0 - alpha.powi(k as i32 + 1)) * al;
        (sal, al)
    }

    #[test]
    fn eps_series_match_brute_force() {
        let series = remark33_series(60, 0.99, 0.95, 0.9, 1.0).unwrap();
        for k in 0..=60 {
            let (sal, al) = brute_eps_terms(k, 0.99, 0.95, 0.9, 1.0);
            assert_abs_diff_eq!(series.sal_eps[k], sal, epsilon = 1e-11 * sal.max(1.0));
            assert_abs_diff_eq!(series.al_eps[k], al, epsilon = 1e-11 * al.max(1.0));
        }
        assert_eq!((series.sal_eps[0], series.al_eps[0]), (0.0, 0.0));
        let zero = remark33_series(30, 0.99, 0.95, 0.9, 0.0).unwrap();
        assert!(zero.sal_eps.iter().chain(&zero.al_eps).all(|&x| x == 0.0));
        assert!(remark33_series(10, 0.5, 1.2, 1.1, 1.0).is_err());
    }

    #[test]
    fn rate_series_cases() {
        let s = rate_series(100, 0.99, 0.95, 0.9).unwrap();
        assert_eq!((s.rate_series_sal[0], s.rate_series_al[0]), (1.0, 1.0));
        assert!(s.rate_series_sal[100] >= s.rate_series_al[100]);
        assert!(s.rate_series_al[100] >= 0.99f64.powi(100));
        assert_abs_diff_eq!(0.99f64.powi(100), 0.366, epsilon = 1e-3);

        let s = rate_series(40, 0.9, 1.0, 0.0).unwrap();
        for k in 0..=40 {
            assert_abs_diff_eq!(s.rate_series_sal[k], 0.9f64.powi(k as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn full_series_fills_every_field() {
        let s = bound_series(20, 0.9, 0.5, 0.3, 0.1, 10.0).unwrap();
        for v in [
            &s.sal_bound,
            &s.al_bound,
            &s.sal_eps,
            &s.al_eps,
            &s.rate_series_sal,
            &s.rate_series_al,
        ] {
            assert_eq!(v.len(), 21);
            assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
        let extended = bound_series(20, 0.5, 1.2, 1.1, 0.1, 2.0).unwrap();
        assert!(extended.sal_eps.is_empty() && extended.al_bound.is_empty());
        assert_eq!(extended.sal_bound.len(), 21);
    }

    #[test]
    fn soft_equivalence_single_action_is_exact() {
        let mdp = build_random_mdp(5, 1, 2, 1, 0.9).unwrap();
        let report = gvi_mvi_equivalence_check(&mdp, 0.5, 0.03, 50).unwrap();
        assert!(report.policies_agree);
        assert_eq!(report.max_spread, 0.0);
    }

    #[test]
    fn soft_equivalence_on_random_mdp() {
        let mdp = build_random_mdp(10, 4, 3, 17, 0.99).unwrap();
        let report = gvi_mvi_equivalence_check(&mdp, 0.5, 0.03, 200).unwrap();
        assert!(report.policies_agree, "{report:?}");
        assert!(report.spread_ok, "{report:?}");
    }

    #[test]
    fn soft_iterates_approach_al_for_tiny_tau() {
        let mdp = build_random_mdp(10, 4, 3, 5, 0.9).unwrap();
        let al = OperatorSpec::al(0.5);
        let (mut q_al, mut q_g, mut q_m) = (
            QFunction::zeros_for(&mdp),
            QFunction::zeros_for(&mdp),
            QFunction::zeros_for(&mdp),
        );
        for _ in 0..100 {
            q_al = al.apply(&mdp, &q_al).unwrap();
            q_g = OperatorSpec::gvi(0.5, 1e-8).apply(&mdp, &q_g).unwrap();
            q_m = OperatorSpec::mvi(0.5, 1e-8).apply(&mdp, &q_m).unwrap();
            assert!(q_g.sup_distance(&q_al) <= 1e-6);
            assert!(q_m.sup_distance(&q_al) <= 1e-6);
        }
    }

    #[test]
    fn contraction_modulus_range() {
        let gamma = 0.5;
        let upper = omega_upper_bound(gamma);
        for i in 1..=100 {
            let omega = upper * i as f64 / 101.0;
            assert!(omega_in_range(omega, gamma));
            assert!(contraction_modulus(omega, gamma) < 1.0);
        }
        assert!(contraction_modulus(upper * (1.0 + 1e-9), gamma) >= 1.0);
        assert_eq!(contraction_modulus(1.0, gamma), gamma);
        let single = build_chain_mdp(1, 0.5, &[vec![1.0]]).unwrap();
        assert_eq!(single.v_max(), 2.0);
    }
}

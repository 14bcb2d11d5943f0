//! Bellman-operator variants as pure `QFunction -> QFunction` maps.
//!
//! The free `apply_*` functions enforce each operator's parameter domain.
//! [`OperatorSpec`] bundles a variant with its parameters, validates it
//! against a discount, and can bypass the theory gates when built with
//! [`OperatorSpec::allow_unsafe`].

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ParameterError, Result};
use crate::mdp::{Policy, QFunction, TabularMdp};

/// Smallest accepted `omega - alpha` for the smoothing advantage operator.
pub const MIN_SAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorVariant {
    BellmanOptimal,
    SmoothBellman,
    /// Advantage learning.
    Al,
    /// Smoothing advantage learning.
    Sal,
    /// Generalized value iteration (normalized mellowmax).
    Gvi,
    /// Munchausen value iteration (unnormalized log-sum-exp).
    Mvi,
}

impl OperatorVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::BellmanOptimal => "bellman",
            Self::SmoothBellman => "smooth",
            Self::Al => "al",
            Self::Sal => "sal",
            Self::Gvi => "gvi",
            Self::Mvi => "mvi",
        }
    }

    pub fn is_soft(self) -> bool {
        matches!(self, Self::Gvi | Self::Mvi)
    }
}

impl fmt::Display for OperatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OperatorVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "bellman" | "bellman-optimal" => Self::BellmanOptimal,
            "smooth" | "smooth-bellman" => Self::SmoothBellman,
            "al" => Self::Al,
            "sal" => Self::Sal,
            "gvi" | "g-vi" => Self::Gvi,
            "mvi" | "m-vi" => Self::Mvi,
            other => return Err(format!("unknown operator variant `{other}`")),
        })
    }
}

/// An operator variant with its coefficients.
///
/// Coefficients a variant does not use are ignored: `omega` only matters for
/// the smooth variants, `alpha` for the advantage variants and `tau` for the
/// soft ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub variant: OperatorVariant,
    pub alpha: f64,
    pub omega: f64,
    pub tau: f64,
    #[serde(default)]
    pub unsafe_params: bool,
}

impl OperatorSpec {
    fn with(variant: OperatorVariant, alpha: f64, omega: f64, tau: f64) -> Self {
        Self {
            variant,
            alpha,
            omega,
            tau,
            unsafe_params: false,
        }
    }

    pub fn bellman() -> Self {
        Self::with(OperatorVariant::BellmanOptimal, 0.0, 1.0, 1.0)
    }

    pub fn smooth(omega: f64) -> Self {
        Self::with(OperatorVariant::SmoothBellman, 0.0, omega, 1.0)
    }

    pub fn al(alpha: f64) -> Self {
        Self::with(OperatorVariant::Al, alpha, 1.0, 1.0)
    }

    pub fn sal(omega: f64, alpha: f64) -> Self {
        Self::with(OperatorVariant::Sal, alpha, omega, 1.0)
    }

    pub fn gvi(alpha: f64, tau: f64) -> Self {
        Self::with(OperatorVariant::Gvi, alpha, 1.0, tau)
    }

    pub fn mvi(alpha: f64, tau: f64) -> Self {
        Self::with(OperatorVariant::Mvi, alpha, 1.0, tau)
    }

    /// Skip the hypothesis gates (`alpha < 1`, `alpha < omega`,
    /// `omega < 2/(1+gamma)`). Finiteness and sign checks still apply.
    pub fn allow_unsafe(mut self) -> Self {
        self.unsafe_params = true;
        self
    }

    /// Smoothing coefficient actually applied (1 for non-smooth variants).
    pub fn effective_omega(&self) -> f64 {
        match self.variant {
            OperatorVariant::SmoothBellman | OperatorVariant::Sal => self.omega,
            _ => 1.0,
        }
    }

    /// Advantage coefficient actually applied (0 for non-advantage variants).
    pub fn effective_alpha(&self) -> f64 {
        match self.variant {
            OperatorVariant::BellmanOptimal | OperatorVariant::SmoothBellman => 0.0,
            _ => self.alpha,
        }
    }

    pub fn validate(&self, gamma: f64) -> Result<(), ParameterError> {
        let (omega, alpha) = (self.effective_omega(), self.effective_alpha());
        finite("alpha", alpha)?;
        finite("omega", omega)?;
        if alpha < 0.0 {
            return Err(ParameterError::NegativeAlpha { alpha });
        }
        match self.variant {
            OperatorVariant::BellmanOptimal => Ok(()),
            OperatorVariant::SmoothBellman => check_omega(omega, gamma, self.unsafe_params),
            OperatorVariant::Al => check_alpha_below_one("AL", alpha, self.unsafe_params),
            OperatorVariant::Sal => {
                check_omega(omega, gamma, self.unsafe_params)?;
                if self.unsafe_params {
                    Ok(())
                } else {
                    check_sal_margin(omega, alpha)
                }
            }
            OperatorVariant::Gvi | OperatorVariant::Mvi => {
                finite("tau", self.tau)?;
                if self.tau <= 0.0 {
                    return Err(ParameterError::TauNotPositive { tau: self.tau });
                }
                let name = if self.variant == OperatorVariant::Gvi {
                    "G-VI"
                } else {
                    "M-VI"
                };
                check_alpha_below_one(name, alpha, self.unsafe_params)
            }
        }
    }

    /// Validates against `mdp.gamma()` and applies the operator once.
    pub fn apply(&self, mdp: &TabularMdp, q: &QFunction) -> Result<QFunction> {
        self.validate(mdp.gamma())?;
        q.ensure_shape(mdp)?;
        QFunction::from_trusted(self.step(mdp, q, None))
    }

    /// Unchecked application; `noise` is added to the backup term before the
    /// smoothing weight is applied, i.e. `ω [TQ + ε]`.
    pub(crate) fn step(&self, mdp: &TabularMdp, q: &QFunction, noise: Option<&Array2<f64>>) -> Array2<f64> {
        match self.variant {
            OperatorVariant::BellmanOptimal => bellman_kernel(mdp, q, noise),
            OperatorVariant::SmoothBellman => smooth_kernel(mdp, q, self.omega, noise),
            OperatorVariant::Al => al_kernel(mdp, q, self.alpha, noise),
            OperatorVariant::Sal => sal_kernel(mdp, q, self.omega, self.alpha, noise),
            OperatorVariant::Gvi => soft_kernel(mdp, q, self.alpha, self.tau, false, noise),
            OperatorVariant::Mvi => soft_kernel(mdp, q, self.alpha, self.tau, true, noise),
        }
    }
}

fn finite(name: &'static str, value: f64) -> Result<(), ParameterError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ParameterError::NonFinite { name, value })
    }
}

/// Upper end of the admissible smoothing range, `2 / (1 + gamma)`.
pub fn omega_upper_bound(gamma: f64) -> f64 {
    2.0 / (1.0 + gamma)
}

fn check_omega(omega: f64, gamma: f64, allow_unsafe: bool) -> Result<(), ParameterError> {
    if omega <= 0.0 {
        return Err(ParameterError::OmegaNotPositive { omega });
    }
    let upper = omega_upper_bound(gamma);
    if omega >= upper && !allow_unsafe {
        return Err(ParameterError::OmegaAboveRange { omega, gamma, upper });
    }
    Ok(())
}

fn check_sal_margin(omega: f64, alpha: f64) -> Result<(), ParameterError> {
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

fn check_alpha_below_one(variant: &'static str, alpha: f64, allow_unsafe: bool) -> Result<(), ParameterError> {
    if alpha >= 1.0 && !allow_unsafe {
        Err(ParameterError::AlphaAboveOne { variant, alpha })
    } else {
        Ok(())
    }
}

fn backup(mdp: &TabularMdp, q: &QFunction, next_values: &[f64], s: usize, a: usize) -> f64 {
    debug_assert_eq!(q.n_states(), next_values.len());
    mdp.reward(s, a) + mdp.gamma() * mdp.expected_next(s, a, next_values)
}

fn noise_at(noise: Option<&Array2<f64>>, s: usize, a: usize) -> f64 {
    noise.map_or(0.0, |e| e[[s, a]])
}

fn bellman_kernel(mdp: &TabularMdp, q: &QFunction, noise: Option<&Array2<f64>>) -> Array2<f64> {
    let v = q.state_values();
    Array2::from_shape_fn(q.shape(), |(s, a)| match noise {
        None => backup(mdp, q, &v, s, a),
        Some(_) => backup(mdp, q, &v, s, a) + noise_at(noise, s, a),
    })
}

fn smooth_kernel(mdp: &TabularMdp, q: &QFunction, omega: f64, noise: Option<&Array2<f64>>) -> Array2<f64> {
    let tq = bellman_kernel(mdp, q, noise);
    Array2::from_shape_fn(q.shape(), |(s, a)| (1.0 - omega) * q.get(s, a) + omega * tq[[s, a]])
}

fn al_kernel(mdp: &TabularMdp, q: &QFunction, alpha: f64, noise: Option<&Array2<f64>>) -> Array2<f64> {
    let v = q.state_values();
    let tq = bellman_kernel(mdp, q, noise);
    Array2::from_shape_fn(q.shape(), |(s, a)| tq[[s, a]] + alpha * (q.get(s, a) - v[s]))
}

fn sal_kernel(mdp: &TabularMdp, q: &QFunction, omega: f64, alpha: f64, noise: Option<&Array2<f64>>) -> Array2<f64> {
    let v = q.state_values();
    let tq = bellman_kernel(mdp, q, noise);
    Array2::from_shape_fn(q.shape(), |(s, a)| {
        let smoothed = (1.0 - omega) * q.get(s, a) + omega * tq[[s, a]];
        smoothed + alpha * (q.get(s, a) - v[s])
    })
}

fn soft_kernel(
    mdp: &TabularMdp,
    q: &QFunction,
    alpha: f64,
    tau: f64,
    unnormalized: bool,
    noise: Option<&Array2<f64>>,
) -> Array2<f64> {
    let soft: Vec<f64> = q
        .values()
        .outer_iter()
        .map(|row| {
            let row = row.to_vec();
            if unnormalized {
                log_sum_exp(&row, tau)
            } else {
                mellowmax(&row, tau)
            }
        })
        .collect();
    Array2::from_shape_fn(q.shape(), |(s, a)| {
        let backup = backup(mdp, q, &soft, s, a) + noise_at(noise, s, a);
        backup + alpha * (q.get(s, a) - soft[s])
    })
}

/// `τ ln( (1/|A|) Σ_a exp(q_a / τ) )`, evaluated with a max shift.
///
/// # Panics
/// On an empty row or a non-positive `tau`.
pub fn mellowmax(row: &[f64], tau: f64) -> f64 {
    log_sum_exp(row, tau) - tau * (row.len() as f64).ln()
}

/// `τ ln Σ_a exp(q_a / τ)`, the unnormalized variant.
///
/// # Panics
/// On an empty row or a non-positive `tau`.
pub fn log_sum_exp(row: &[f64], tau: f64) -> f64 {
    assert!(!row.is_empty(), "soft maximum of an empty row");
    assert!(tau > 0.0, "temperature must be positive");
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| ((x - max) / tau).exp()).sum();
    max + tau * sum.ln()
}

/// `(TQ)(s,a) = R(s,a) + γ Σ P(s'|s,a) max_a' Q(s',a')`.
pub fn apply_bellman_optimal(mdp: &TabularMdp, q: &QFunction) -> Result<QFunction> {
    q.ensure_shape(mdp)?;
    QFunction::from_trusted(bellman_kernel(mdp, q, None))
}

/// `(T^π Q)(s,a) = R(s,a) + γ Σ P(s'|s,a) π(a'|s') Q(s',a')`.
pub fn apply_bellman_policy(mdp: &TabularMdp, policy: &Policy, q: &QFunction) -> Result<QFunction> {
    q.ensure_shape(mdp)?;
    policy.ensure_shape(mdp)?;
    let v: Vec<f64> = (0..q.n_states())
        .map(|s| q.row(s).iter().enumerate().map(|(a, &x)| policy.prob(s, a) * x).sum())
        .collect();
    QFunction::from_trusted(Array2::from_shape_fn(q.shape(), |(s, a)| backup(mdp, q, &v, s, a)))
}

/// `(1 - ω) Q + ω TQ` for `0 < ω < 2/(1+γ)`.
pub fn apply_smooth_bellman(mdp: &TabularMdp, q: &QFunction, omega: f64) -> Result<QFunction> {
    OperatorSpec::smooth(omega).apply(mdp, q)
}

/// `TQ + α (Q - V)` with `V(s) = max_a Q(s,a)`. Only `alpha >= 0` is enforced
/// here; the `alpha < 1` theory gate lives in [`OperatorSpec::validate`].
pub fn apply_al(mdp: &TabularMdp, q: &QFunction, alpha: f64) -> Result<QFunction> {
    OperatorSpec::al(alpha).allow_unsafe().apply(mdp, q)
}

/// `(1 - ω) Q + ω TQ + α (Q - V)` for `0 <= α < ω < 2/(1+γ)`.
pub fn apply_sal(mdp: &TabularMdp, q: &QFunction, omega: f64, alpha: f64) -> Result<QFunction> {
    OperatorSpec::sal(omega, alpha).apply(mdp, q)
}

pub fn apply_gvi(mdp: &TabularMdp, q: &QFunction, alpha: f64, tau: f64) -> Result<QFunction> {
    OperatorSpec::gvi(alpha, tau).apply(mdp, q)
}

pub fn apply_mvi(mdp: &TabularMdp, q: &QFunction, alpha: f64, tau: f64) -> Result<QFunction> {
    OperatorSpec::mvi(alpha, tau).apply(mdp, q)
}

/// Constants of the unrolled SAL recursion and its error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `1 - ω + α`.
    pub lambda: f64,
    /// `|1 - ω| + ω γ`, the contraction modulus of the smooth operator.
    pub xi: f64,
}

impl DerivedConstants {
    pub fn new(omega: f64, alpha: f64, gamma: f64) -> Self {
        Self {
            lambda: 1.0 - omega + alpha,
            xi: (1.0 - omega).abs() + omega * gamma,
        }
    }

    /// `A_k = 1 + λ + … + λ^{k-1} = (1 - λ^k)/(1 - λ)`, with `A_k = k` at `λ = 1`.
    pub fn a_k(&self, k: usize) -> f64 {
        a_k(self.lambda, k)
    }
}

pub(crate) fn a_k(lambda: f64, k: usize) -> f64 {
    if lambda == 1.0 {
        k as f64
    } else {
        (1.0 - lambda.powi(k as i32)) / (1.0 - lambda)
    }
}

pub fn derived_constants(spec: &OperatorSpec, gamma: f64) -> DerivedConstants {
    DerivedConstants::new(spec.effective_omega(), spec.effective_alpha(), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::mdp::{build_chain_mdp, build_random_mdp, evaluate_policy_exact, greedy_policy, solve_optimal_q};
    use approx::assert_abs_diff_eq;

    fn loop_single() -> TabularMdp {
        build_chain_mdp(1, 0.5, &[vec![1.0]]).unwrap()
    }

    fn loop_pair() -> TabularMdp {
        build_chain_mdp(1, 0.5, &[vec![1.0, 0.0]]).unwrap()
    }

    fn pair_q(a0: f64, a1: f64) -> QFunction {
        QFunction::from_rows(&[vec![a0, a1]]).unwrap()
    }

    fn random_q(mdp: &TabularMdp, seed: u64) -> QFunction {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        QFunction::new(Array2::from_shape_fn((mdp.n_states(), mdp.n_actions()), |_| {
            rng.random_range(-5.0..5.0)
        }))
        .unwrap()
    }

    #[test]
    fn bellman_from_zero_is_reward() {
        let tq = apply_bellman_optimal(&loop_single(), &QFunction::zeros(1, 1)).unwrap();
        assert_eq!(tq.get(0, 0), 1.0);
    }

    #[test]
    fn bellman_fixes_optimal_q() {
        let mdp = build_random_mdp(10, 3, 3, 2, 0.9).unwrap();
        let q_star = solve_optimal_q(&mdp, 1e-12, 1_000_000).unwrap();
        let tq = apply_bellman_optimal(&mdp, &q_star).unwrap();
        assert!(tq.sup_distance(&q_star) <= 1e-12);
    }

    #[test]
    fn bellman_shift_by_constant() {
        let mdp = build_random_mdp(6, 3, 2, 4, 0.8).unwrap();
        let q = random_q(&mdp, 1);
        let shifted = QFunction::new(q.values() + 2.5).unwrap();
        let a = apply_bellman_optimal(&mdp, &q).unwrap();
        let b = apply_bellman_optimal(&mdp, &shifted).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert_abs_diff_eq!(y - x, 0.8 * 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn bellman_shape_mismatch() {
        assert!(matches!(
            apply_bellman_optimal(&loop_pair(), &QFunction::zeros(1, 1)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn policy_operator_cases() {
        let mdp = build_random_mdp(7, 3, 3, 9, 0.9).unwrap();
        let q = random_q(&mdp, 3);
        let greedy = apply_bellman_policy(&mdp, &greedy_policy(&q), &q).unwrap();
        assert_eq!(greedy, apply_bellman_optimal(&mdp, &q).unwrap());

        let out = apply_bellman_policy(&loop_pair(), &Policy::uniform(1, 2), &QFunction::zeros(1, 2)).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.0, 0.0]);

        let pi = Policy::uniform(7, 3);
        let q_pi = evaluate_policy_exact(&mdp, &pi).unwrap();
        assert!(apply_bellman_policy(&mdp, &pi, &q_pi).unwrap().sup_distance(&q_pi) <= 1e-12);
    }

    #[test]
    fn smooth_cases() {
        let mdp = build_random_mdp(8, 3, 3, 5, 0.9).unwrap();
        let q = random_q(&mdp, 2);
        assert_eq!(
            apply_smooth_bellman(&mdp, &q, 1.0).unwrap(),
            apply_bellman_optimal(&mdp, &q).unwrap()
        );
        let q_star = solve_optimal_q(&mdp, 1e-12, 1_000_000).unwrap();
        for omega in [0.1, 0.5, 1.0, 1.04] {
            let out = apply_smooth_bellman(&mdp, &q_star, omega).unwrap();
            assert!(out.sup_distance(&q_star) <= 1e-12);
        }
        let half = apply_smooth_bellman(&loop_single(), &QFunction::zeros(1, 1), 0.5).unwrap();
        assert_eq!(half.get(0, 0), 0.5);
    }

    #[test]
    fn smooth_rejects_out_of_range() {
        let q = QFunction::zeros(1, 1);
        // 2/(1+0.5) = 1.333...
        assert!(apply_smooth_bellman(&loop_single(), &q, 1.34).is_err());
        assert!(apply_smooth_bellman(&loop_single(), &q, 0.0).is_err());
        assert!(apply_smooth_bellman(&loop_single(), &q, 1.33).is_ok());
    }

    #[test]
    fn al_cases() {
        let mdp = build_random_mdp(8, 4, 3, 6, 0.9).unwrap();
        let q = random_q(&mdp, 4);
        assert_eq!(
            apply_al(&mdp, &q, 0.0).unwrap(),
            apply_bellman_optimal(&mdp, &q).unwrap()
        );

        let tq = apply_bellman_optimal(&mdp, &q).unwrap();
        let out = apply_al(&mdp, &q, 0.7).unwrap();
        for (s, a) in q.greedy_actions().into_iter().enumerate() {
            assert_eq!(out.get(s, a), tq.get(s, a));
        }

        // TQ*(a1) = 0 + 0.5 * 2 = 1; advantage 0.5 * (1 - 2) = -0.5.
        let out = apply_al(&loop_pair(), &pair_q(2.0, 1.0), 0.5).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(0, 1), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sal_cases() {
        let mdp = build_random_mdp(8, 4, 3, 7, 0.9).unwrap();
        let q = random_q(&mdp, 5);
        for alpha in [0.0, 0.3, 0.9] {
            let a = apply_sal(&mdp, &q, 1.0, alpha).unwrap();
            let b = apply_al(&mdp, &q, alpha).unwrap();
            assert!(a.sup_distance(&b) <= 1e-15);
        }
        for omega in [0.3, 0.95, 1.05] {
            let a = apply_sal(&mdp, &q, omega, 0.0).unwrap();
            let b = apply_smooth_bellman(&mdp, &q, omega).unwrap();
            assert!(a.sup_distance(&b) <= 1e-15);
        }
        let bellman = apply_sal(&mdp, &q, 1.0, 0.0).unwrap();
        assert!(bellman.sup_distance(&apply_bellman_optimal(&mdp, &q).unwrap()) <= 1e-15);

        // 0.05 * 1 + 0.95 * 1 + 0.9 * (1 - 2) = 0.1.
        let out = apply_sal(&loop_pair(), &pair_q(2.0, 1.0), 0.95, 0.9).unwrap();
        assert_abs_diff_eq!(out.get(0, 1), 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(0, 0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sal_parameter_gates() {
        let mdp = loop_pair();
        let q = pair_q(0.0, 0.0);
        let err = apply_sal(&mdp, &q, 0.5, 0.9).unwrap_err();
        assert!(err.to_string().contains("alpha must be < omega"), "{err}");
        assert!(matches!(
            apply_sal(&mdp, &q, 0.5, 0.5 - 1e-7),
            Err(Error::Parameter(ParameterError::MarginTooSmall { .. }))
        ));
        assert!(apply_sal(&mdp, &q, 1.2, 1.1).is_ok());
        let unsafe_spec = OperatorSpec::sal(0.5, 0.9).allow_unsafe();
        assert!(unsafe_spec.apply(&mdp, &q).is_ok());
        let err = OperatorSpec::sal(1.5, 0.1).validate(0.99).unwrap_err();
        assert!(err.to_string().contains("omega ≥ 2/(1+gamma) = 1.005"), "{err}");
    }

    #[test]
    fn mellowmax_values() {
        for tau in [1e-3, 0.03, 1.0, 50.0] {
            assert_abs_diff_eq!(mellowmax(&[3.25; 4], tau), 3.25, epsilon = 1e-12);
        }
        // ln((e + 1) / 2) evaluated at high precision: 0.62011450695827752...
        assert_abs_diff_eq!(mellowmax(&[1.0, 0.0], 1.0), 0.620_114_506_958_277_5, epsilon = 1e-15);
        assert!((mellowmax(&[1.0, 0.0], 1e-6) - 1.0).abs() <= 1e-5);
        assert!(mellowmax(&[1000.0, -1000.0], 1e-8).is_finite());
    }

    #[test]
    fn gvi_cases() {
        let mdp = build_random_mdp(6, 3, 3, 8, 0.9).unwrap();
        let q = random_q(&mdp, 6);
        for alpha in [0.0, 0.5, 0.9] {
            let soft = apply_gvi(&mdp, &q, alpha, 1e-8).unwrap();
            assert!(soft.sup_distance(&apply_al(&mdp, &q, alpha).unwrap()) <= 1e-6);
        }
        let out = apply_gvi(&loop_single(), &QFunction::zeros(1, 1), 0.0, 0.03).unwrap();
        assert_eq!(out.get(0, 0), 1.0);

        assert!(matches!(
            apply_gvi(&mdp, &q, 1.0, 0.03),
            Err(Error::Parameter(ParameterError::AlphaAboveOne { .. }))
        ));
        assert!(OperatorSpec::gvi(1.0, 0.03).allow_unsafe().apply(&mdp, &q).is_ok());
        assert!(apply_gvi(&mdp, &q, 0.5, 0.0).is_err());
    }

    #[test]
    fn mvi_cases() {
        let single_action = build_random_mdp(5, 1, 2, 3, 0.9).unwrap();
        let q = random_q(&single_action, 7);
        assert_eq!(
            apply_mvi(&single_action, &q, 0.4, 0.03).unwrap(),
            apply_gvi(&single_action, &q, 0.4, 0.03).unwrap()
        );

        let mdp = build_random_mdp(6, 3, 3, 8, 0.9).unwrap();
        let q = random_q(&mdp, 8);
        let soft = apply_mvi(&mdp, &q, 0.5, 1e-8).unwrap();
        assert!(soft.sup_distance(&apply_al(&mdp, &q, 0.5).unwrap()) <= 1e-6);

        // The two soft maxima differ by τ ln|A| in every state, so one
        // application differs by (γ - α) τ ln|A| in every entry.
        let g = apply_gvi(&mdp, &q, 0.5, 0.03).unwrap();
        let m = apply_mvi(&mdp, &q, 0.5, 0.03).unwrap();
        let offset = (0.9 - 0.5) * 0.03 * 3f64.ln();
        for (x, y) in g.values().iter().zip(m.values().iter()) {
            assert_abs_diff_eq!(y - x, offset, epsilon = 1e-12);
        }
        assert_eq!(greedy_policy(&g), greedy_policy(&m));
    }

    #[test]
    fn derived_constant_cases() {
        let c = derived_constants(&OperatorSpec::bellman(), 0.9);
        assert_eq!((c.lambda, c.xi), (0.0, 0.9));
        let c = derived_constants(&OperatorSpec::sal(0.95, 0.9), 0.99);
        assert_abs_diff_eq!(c.lambda, 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(c.xi, 0.9905, epsilon = 1e-15);
        let c = derived_constants(&OperatorSpec::sal(1.2, 1.1), 0.5);
        assert_abs_diff_eq!(c.lambda, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(c.xi, 0.8, epsilon = 1e-15);
        assert!(1.2 < omega_upper_bound(0.5));
    }

    #[test]
    fn a_k_matches_explicit_sum() {
        for lambda in [-0.7, 0.0, 0.5, 0.95, 1.0] {
            let c = DerivedConstants { lambda, xi: 0.0 };
            assert_eq!(c.a_k(0), 0.0);
            let mut sum = 0.0;
            for k in 1..=50 {
                sum += lambda.powi(k as i32 - 1);
                assert_abs_diff_eq!(c.a_k(k), sum, epsilon = 1e-12 * sum.abs().max(1.0));
            }
        }
    }
}

use std::collections::BTreeMap;

use gapforge_core::analysis::{gap_monotonicity_scan, limit_gap_report, GapReport, MonotonicityReport, TIE_TOL};
use gapforge_core::{iterate_limit, OperatorSpec};

use super::{instance, sci, Instance, SuiteError, SuiteOutput, SuiteResult};
use crate::config::ExperimentConfig;
use crate::manifest::Check;
use crate::output::Table;

/// Measured gaps `V*(s) - Q_lim(s,a)` of one operator run.
struct Measured {
    variant: &'static str,
    omega: f64,
    alpha: f64,
    report: GapReport,
}

fn limit_gaps(
    config: &ExperimentConfig,
    inst: &Instance,
    spec: OperatorSpec,
    omega: f64,
    alpha: f64,
) -> SuiteResult<GapReport> {
    let limit = iterate_limit(&inst.mdp, &spec, config.tol.limit, config.k_max)?;
    Ok(limit_gap_report(&inst.q_star, &limit.q, omega, alpha)?)
}

fn sal_runs(config: &ExperimentConfig, inst: &Instance) -> SuiteResult<Vec<Measured>> {
    config
        .pairs()
        .into_iter()
        .map(|(omega, alpha)| {
            Ok(Measured {
                variant: "sal",
                omega,
                alpha,
                report: limit_gaps(config, inst, config.sal(omega, alpha), omega, alpha)?,
            })
        })
        .collect()
}

fn al_runs(config: &ExperimentConfig, inst: &Instance) -> SuiteResult<Vec<Measured>> {
    let mut alphas: Vec<f64> = config.pairs().iter().map(|p| p.1).filter(|&a| a < 1.0).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
        .into_iter()
        .map(|alpha| {
            Ok(Measured {
                variant: "al",
                omega: 1.0,
                alpha,
                report: limit_gaps(config, inst, config.gate(OperatorSpec::al(alpha)), 1.0, alpha)?,
            })
        })
        .collect()
}

struct ChainCount {
    comparisons: usize,
    violations: usize,
    worst: f64,
}

impl Default for ChainCount {
    fn default() -> Self {
        Self {
            comparisons: 0,
            violations: 0,
            worst: f64::INFINITY,
        }
    }
}

/// `Gap(SAL) >= Gap(AL) >= Gap(T)` entrywise for every SAL run with `ω <= 1`.
fn chain(sal: &[Measured], al: &[Measured], slack: f64) -> ChainCount {
    let mut count = ChainCount::default();
    for run in sal.iter().filter(|r| r.omega <= 1.0) {
        let Some(al_run) = al.iter().find(|r| r.alpha == run.alpha) else {
            continue;
        };
        for (s, l) in run.report.entries.iter().zip(&al_run.report.entries) {
            count.comparisons += 1;
            let margin = (s.gap_operator - l.gap_operator).min(l.gap_operator - l.gap_bellman);
            count.worst = count.worst.min(margin);
            if margin < -slack {
                count.violations += 1;
            }
        }
    }
    count
}

pub(crate) fn run_gaps(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let seeds = config.seeds();
    let per_seed = config.execution().try_map(&seeds, |&seed| {
        let inst = instance(config, seed)?;
        let sal = sal_runs(config, &inst)?;
        let al = al_runs(config, &inst)?;
        Ok::<_, SuiteError>((seed, sal, al))
    })?;

    let mut table = Table::new(
        "gaps.csv",
        &[
            "seed",
            "variant",
            "omega",
            "alpha",
            "expected_ratio",
            "non_degenerate",
            "degenerate",
            "min_ratio",
            "max_ratio",
            "max_ratio_error",
            "min_gap",
        ],
    );
    let tol = config.tol.gap_ratio;
    let slack = config.tol.gap_slack;
    let mut ratio = BTreeMap::<&str, (usize, usize, f64)>::new();
    let (mut neg_fail, mut runs) = (0, 0);
    let mut chains = ChainCount::default();
    for (seed, sal, al) in &per_seed {
        for m in sal.iter().chain(al) {
            let r = &m.report;
            let err = r.max_ratio_error();
            let entry = ratio.entry(m.variant).or_default();
            entry.0 += usize::from(!(err <= tol));
            entry.1 += 1;
            entry.2 = entry.2.max(err);
            runs += 1;
            neg_fail += usize::from(r.min_gap() < -slack);
            let non_degenerate = r.ratios().count();
            table.push(vec![
                (*seed).into(),
                m.variant.into(),
                m.omega.into(),
                m.alpha.into(),
                r.expected_ratio.into(),
                non_degenerate.into(),
                r.degenerate_count().into(),
                r.ratios().reduce(f64::min).into(),
                r.ratios().reduce(f64::max).into(),
                err.into(),
                r.min_gap().into(),
            ]);
        }
        let c = chain(sal, al, slack);
        chains.comparisons += c.comparisons;
        chains.violations += c.violations;
        chains.worst = chains.worst.min(c.worst);
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    for (variant, name, what) in [
        ("sal", "gap-ratio", "omega/(omega-alpha)"),
        ("al", "al-gap-ratio", "1/(1-alpha)"),
    ] {
        let (fail, total, worst) = ratio.get(variant).copied().unwrap_or_default();
        out.checks.push(Check::tally(
            name,
            fail,
            total,
            format!("max |ratio - {what}| = {} (tol {})", sci(worst), sci(tol)),
        ));
    }
    out.checks.push(Check::tally(
        "gap-chain",
        chains.violations,
        chains.comparisons,
        format!(
            "Gap(SAL) >= Gap(AL) >= Gap(T); worst margin {} (slack {})",
            sci(chains.worst),
            sci(slack)
        ),
    ));
    out.checks.push(Check::tally(
        "gaps-nonnegative",
        neg_fail,
        runs,
        format!("slack {}", sci(slack)),
    ));
    Ok(out)
}

/// Monotonicity of measured gaps across the grid: decreasing in `ω` at fixed
/// `α`, increasing in `α` at fixed `ω`, strictly, on non-degenerate entries.
fn measured_scan(runs: &[Measured]) -> MonotonicityReport {
    let mut report = MonotonicityReport::default();
    let mut by_alpha = BTreeMap::<u64, Vec<&Measured>>::new();
    let mut by_omega = BTreeMap::<u64, Vec<&Measured>>::new();
    for r in runs {
        by_alpha.entry(r.alpha.to_bits()).or_default().push(r);
        by_omega.entry(r.omega.to_bits()).or_default().push(r);
    }
    for group in by_alpha.values_mut() {
        group.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        for w in group.windows(2) {
            for (lo, hi) in w[0].report.entries.iter().zip(&w[1].report.entries) {
                if lo.gap_bellman > TIE_TOL {
                    report.omega_comparisons += 1;
                    report.omega_violations += usize::from(!(hi.gap_operator < lo.gap_operator));
                }
            }
        }
    }
    for group in by_omega.values_mut() {
        group.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        for w in group.windows(2) {
            for (lo, hi) in w[0].report.entries.iter().zip(&w[1].report.entries) {
                if lo.gap_bellman > TIE_TOL {
                    report.alpha_comparisons += 1;
                    report.alpha_violations += usize::from(!(hi.gap_operator > lo.gap_operator));
                }
            }
        }
    }
    report
}

fn grid_values(pairs: &[(f64, f64)], pick: impl Fn(&(f64, f64)) -> f64) -> Vec<f64> {
    let mut v: Vec<f64> = pairs.iter().map(pick).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub(crate) fn run_scan(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let seeds = config.seeds();
    let pairs = config.pairs();
    let omegas = grid_values(&pairs, |p| p.0);
    let alphas = grid_values(&pairs, |p| p.1);
    let per_seed = config.execution().try_map(&seeds, |&seed| {
        let inst = instance(config, seed)?;
        let closed = gap_monotonicity_scan(&inst.q_star, &omegas, &alphas)?;
        let measured = measured_scan(&sal_runs(config, &inst)?);
        Ok::<_, SuiteError>((seed, closed, measured))
    })?;

    let mut table = Table::new(
        "gap_scan.csv",
        &[
            "seed",
            "source",
            "omega_comparisons",
            "omega_violations",
            "alpha_comparisons",
            "alpha_violations",
            "chain_comparisons",
            "chain_violations",
        ],
    );
    let mut totals = BTreeMap::<&str, MonotonicityReport>::new();
    for (seed, closed, measured) in &per_seed {
        for (source, r) in [("closed-form", closed), ("measured", measured)] {
            let t = totals.entry(source).or_default();
            t.omega_comparisons += r.omega_comparisons;
            t.omega_violations += r.omega_violations;
            t.alpha_comparisons += r.alpha_comparisons;
            t.alpha_violations += r.alpha_violations;
            t.chain_comparisons += r.chain_comparisons;
            t.chain_violations += r.chain_violations;
            let chain_cols = if source == "measured" {
                [None, None]
            } else {
                [Some(r.chain_comparisons), Some(r.chain_violations)]
            };
            table.push(vec![
                (*seed).into(),
                source.into(),
                r.omega_comparisons.into(),
                r.omega_violations.into(),
                r.alpha_comparisons.into(),
                r.alpha_violations.into(),
                chain_cols[0].into(),
                chain_cols[1].into(),
            ]);
        }
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    for (source, t) in &totals {
        out.checks.push(Check::tally(
            &format!("gap-decreases-in-omega-{source}"),
            t.omega_violations,
            t.omega_comparisons,
            "",
        ));
        out.checks.push(Check::tally(
            &format!("gap-increases-in-alpha-{source}"),
            t.alpha_violations,
            t.alpha_comparisons,
            "",
        ));
    }
    if let Some(t) = totals.get("closed-form") {
        out.checks.push(Check::tally(
            "gap-chain-closed-form",
            t.chain_violations,
            t.chain_comparisons,
            "",
        ));
    }
    Ok(out)
}

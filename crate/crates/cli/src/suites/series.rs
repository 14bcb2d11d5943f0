use gapforge_core::analysis::{bound_series, rate_series, remark33_series};

use super::{gamma_and_v_max, sci, SuiteOutput, SuiteResult};
use crate::config::ExperimentConfig;
use crate::manifest::Check;
use crate::output::{Cell, Table};

fn at(v: &[f64], k: usize) -> Cell {
    v.get(k).copied().into()
}

pub(crate) fn run_bounds(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let (gamma, v_max) = gamma_and_v_max(config)?;
    let mut table = Table::new(
        "bounds.csv",
        &[
            "omega",
            "alpha",
            "epsilon",
            "k",
            "sal_bound",
            "al_bound",
            "sal_eps",
            "al_eps",
            "rate_sal",
            "rate_al",
        ],
    );
    let tol = config.tol.ordering;
    let (mut bad_values, mut values) = (0, 0);
    let (mut order_fail, mut order_total, mut worst) = (0, 0, f64::INFINITY);
    let (mut zero_fail, mut zero_total) = (0, 0);
    for (omega, alpha) in config.pairs() {
        for &eps in &config.noise.epsilons {
            let s = bound_series(config.k_max, gamma, omega, alpha, eps, v_max)?;
            for k in 0..=config.k_max {
                table.push(vec![
                    omega.into(),
                    alpha.into(),
                    eps.into(),
                    k.into(),
                    at(&s.sal_bound, k),
                    at(&s.al_bound, k),
                    at(&s.sal_eps, k),
                    at(&s.al_eps, k),
                    at(&s.rate_series_sal, k),
                    at(&s.rate_series_al, k),
                ]);
            }
            for v in [
                &s.sal_bound,
                &s.al_bound,
                &s.sal_eps,
                &s.al_eps,
                &s.rate_series_sal,
                &s.rate_series_al,
            ] {
                values += v.len();
                bad_values += v.iter().filter(|x| !(x.is_finite() && **x >= 0.0)).count();
            }
            if !s.sal_eps.is_empty() {
                zero_total += 1;
                zero_fail += usize::from(s.sal_eps[0] != 0.0 || s.al_eps[0] != 0.0);
                for (sal, al) in s.sal_eps.iter().zip(&s.al_eps) {
                    order_total += 1;
                    let diff = al - sal;
                    worst = worst.min(diff);
                    order_fail += usize::from(!(diff >= -tol));
                }
            }
        }
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    out.checks
        .push(Check::tally("bounds-finite-nonnegative", bad_values, values, ""));
    out.checks.push(Check::tally(
        "sal-eps-below-al-eps",
        order_fail,
        order_total,
        format!("min AL(eps) - SAL(eps) = {} (tol {})", sci(worst), sci(tol)),
    ));
    out.checks
        .push(Check::tally("eps-series-empty-at-k0", zero_fail, zero_total, ""));
    Ok(out)
}

pub(crate) fn run_figure2(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let (gamma, _) = gamma_and_v_max(config)?;
    let (omega, alpha) = config.pairs()[0];
    let eps = config.noise.epsilons[0];
    let s = remark33_series(config.k_max, gamma, omega, alpha, eps)?;

    let mut table = Table::new("figure2.csv", &["k", "al_eps", "sal_eps", "diff"]);
    let tol = config.tol.ordering;
    let (mut fail, mut worst) = (0, f64::INFINITY);
    for (k, (sal, al)) in s.sal_eps.iter().zip(&s.al_eps).enumerate() {
        let diff = al - sal;
        worst = worst.min(diff);
        fail += usize::from(!(diff >= -tol));
        table.push(vec![k.into(), (*al).into(), (*sal).into(), diff.into()]);
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    out.checks.push(Check::tally(
        "figure2-al-minus-sal-nonnegative",
        fail,
        s.sal_eps.len(),
        format!("min diff = {} (tol {})", sci(worst), sci(tol)),
    ));
    out.checks.push(Check::new(
        "figure2-zero-at-k0",
        s.sal_eps[0] == 0.0 && s.al_eps[0] == 0.0,
        format!("SAL(eps)_0 = {}, AL(eps)_0 = {}", s.sal_eps[0], s.al_eps[0]),
    ));
    Ok(out)
}

pub(crate) fn run_rates(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let (gamma, _) = gamma_and_v_max(config)?;
    let mut table = Table::new(
        "rates.csv",
        &["omega", "alpha", "k", "rate_sal", "rate_al", "gamma_pow"],
    );
    let (mut fail, mut total, mut skipped) = (0, 0, 0);
    for (omega, alpha) in config.pairs() {
        let s = rate_series(config.k_max, gamma, omega, alpha)?;
        for k in 0..=config.k_max {
            let floor = gamma.powi(k as i32);
            let (sal, al) = (s.rate_series_sal[k], s.rate_series_al[k]);
            table.push(vec![
                omega.into(),
                alpha.into(),
                k.into(),
                sal.into(),
                al.into(),
                floor.into(),
            ]);
            if omega <= 1.0 {
                total += 1;
                fail += usize::from(!(sal >= al && al >= floor));
            }
        }
        skipped += usize::from(omega > 1.0);
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    let note = if skipped > 0 {
        format!(
            "sum xi^i lambda^(k-i) >= sum gamma^i alpha^(k-i) >= gamma^k; {skipped} pairs with omega > 1 not asserted"
        )
    } else {
        "sum xi^i lambda^(k-i) >= sum gamma^i alpha^(k-i) >= gamma^k".to_owned()
    };
    out.checks.push(Check::tally("rate-chain", fail, total, note));
    Ok(out)
}

use gapforge_core::analysis::{sal_fixed_point_closed_form, verify_all_preserving};
use gapforge_core::iteration::b_aggregate;
use gapforge_core::{iterate, iterate_limit, NoiseModel};
use serde::Serialize;

use super::{instance, pair_label, sci, Instance, SuiteOutput, SuiteResult};
use crate::config::ExperimentConfig;
use crate::manifest::Check;
use crate::output::{Cell, Table};

/// `B_K` has to be this close to `V*` once the traced run converged.
const B_LIMIT_TOL: f64 = 1e-6;

struct PairResult {
    seed: u64,
    omega: f64,
    alpha: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
    max_error: f64,
    max_value_error: f64,
    preserving: bool,
}

fn solve_pairs(config: &ExperimentConfig, inst: &Instance) -> SuiteResult<Vec<PairResult>> {
    config
        .pairs()
        .into_iter()
        .map(|(omega, alpha)| {
            let spec = config.sal(omega, alpha);
            let limit = iterate_limit(&inst.mdp, &spec, config.tol.limit, config.k_max)?;
            let closed = sal_fixed_point_closed_form(&inst.q_star, omega, alpha)?;
            let report = verify_all_preserving(&inst.q_star, &limit.q, config.tol.fixed_point)?;
            Ok(PairResult {
                seed: inst.seed,
                omega,
                alpha,
                iterations: limit.iterations,
                converged: limit.converged,
                residual: limit.residual,
                max_error: limit.q.sup_distance(&closed),
                max_value_error: report.max_value_error,
                preserving: report.passed(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Snapshot {
    k: usize,
    q: Vec<Vec<f64>>,
}

/// Full traces of the first MDP: one CSV per pair plus optional snapshots.
fn traces(config: &ExperimentConfig, inst: &Instance, out: &mut SuiteOutput) -> SuiteResult<Check> {
    let v_star = inst.q_star.state_values();
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for (omega, alpha) in config.pairs() {
        let spec = config.sal(omega, alpha);
        let trace = iterate(&inst.mdp, &spec, &NoiseModel::none(), config.k_max, config.tol.limit)?;
        let b = b_aggregate(&trace, &spec)?;
        let label = pair_label(omega, alpha);
        let mut table = Table::new(
            format!("trace_{label}.csv"),
            &[
                "k",
                "residual",
                "bellman_residual",
                "mean_gap",
                "noise_norm",
                "max_b_error",
            ],
        );
        for rec in &trace.records {
            let b_error = (rec.k >= 1).then(|| {
                b[rec.k - 1]
                    .iter()
                    .zip(&v_star)
                    .map(|(b, v)| (b - v).abs())
                    .fold(0.0, f64::max)
            });
            table.push(vec![
                rec.k.into(),
                rec.residual.into(),
                rec.bellman_residual.into(),
                rec.mean_gap.into(),
                rec.noise_norm.into(),
                Cell::from(b_error),
            ]);
        }
        if let (true, Some(last)) = (trace.converged, b.last()) {
            checked += 1;
            let err = last.iter().zip(&v_star).map(|(b, v)| (b - v).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
        out.tables.push(table);

        let stride = config.output.snapshot_stride;
        if stride > 0 {
            let snaps: Vec<Snapshot> = trace
                .records
                .iter()
                .filter(|r| r.k % stride == 0 || r.k == trace.last_k())
                .map(|r| Snapshot {
                    k: r.k,
                    q: r.q.values().rows().into_iter().map(|row| row.to_vec()).collect(),
                })
                .collect();
            let text = serde_json::to_string(&snaps).expect("snapshots serialize");
            out.json.push((format!("snapshots_{label}.json"), text));
        }
    }
    // Runs cut off by k_max say nothing about the limit.
    Ok(Check::new(
        "b-aggregate-limit",
        worst <= B_LIMIT_TOL,
        format!(
            "max |B_K - V*| = {} over {checked} converged traces of seed {} (tol {})",
            sci(worst),
            inst.seed,
            sci(B_LIMIT_TOL)
        ),
    ))
}

pub(crate) fn run(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let seeds = config.seeds();
    let per_seed = config.execution().try_map(&seeds, |&seed| {
        let inst = instance(config, seed)?;
        let results = solve_pairs(config, &inst)?;
        Ok::<_, super::SuiteError>((inst, results))
    })?;

    let mut out = SuiteOutput::default();
    let mut table = Table::new(
        "fixed_point.csv",
        &[
            "seed",
            "omega",
            "alpha",
            "iterations",
            "converged",
            "residual",
            "max_error",
            "max_value_error",
            "all_preserving",
        ],
    );
    let tol = config.tol.fixed_point;
    let (mut law_fail, mut value_fail, mut order_fail, mut total) = (0, 0, 0, 0);
    let (mut worst_err, mut worst_value) = (0.0f64, 0.0f64);
    for (_, results) in &per_seed {
        for r in results {
            total += 1;
            law_fail += usize::from(!(r.max_error <= tol));
            value_fail += usize::from(!(r.max_value_error <= tol));
            order_fail += usize::from(!r.preserving);
            worst_err = worst_err.max(r.max_error);
            worst_value = worst_value.max(r.max_value_error);
            table.push(vec![
                r.seed.into(),
                r.omega.into(),
                r.alpha.into(),
                r.iterations.into(),
                r.converged.into(),
                r.residual.into(),
                r.max_error.into(),
                r.max_value_error.into(),
                r.preserving.into(),
            ]);
        }
    }
    out.tables.push(table);
    out.checks.push(Check::tally(
        "fixed-point-law",
        law_fail,
        total,
        format!("max |Q_lim - closed form| = {} (tol {})", sci(worst_err), sci(tol)),
    ));
    out.checks.push(Check::tally(
        "optimality-preserving",
        value_fail,
        total,
        format!("max |max Q_lim - V*| = {} (tol {})", sci(worst_value), sci(tol)),
    ));
    out.checks.push(Check::tally(
        "all-preserving",
        order_fail,
        total,
        "argmax sets and action order",
    ));

    if config.output.traces {
        if let Some((inst, _)) = per_seed.first() {
            let check = traces(config, inst, &mut out)?;
            out.checks.push(check);
        }
    }
    Ok(out)
}

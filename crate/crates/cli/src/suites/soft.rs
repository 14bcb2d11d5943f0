use gapforge_core::analysis::{gvi_mvi_equivalence_check, SPREAD_TOL};

use super::{load_mdp, sci, SuiteError, SuiteOutput, SuiteResult};
use crate::config::ExperimentConfig;
use crate::manifest::Check;
use crate::output::Table;

pub(crate) fn run(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let seeds = config.seeds();
    let alphas = config.alphas();
    let tau = config.operator.tau;
    let per_seed = config.execution().try_map(&seeds, |&seed| {
        let mdp = load_mdp(config, seed)?;
        let reports = alphas
            .iter()
            .map(|&alpha| gvi_mvi_equivalence_check(&mdp, alpha, tau, config.k_max))
            .collect::<Result<Vec<_>, _>>()?;
        Ok::<_, SuiteError>((seed, reports))
    })?;

    let mut table = Table::new(
        "gvi_mvi.csv",
        &[
            "seed",
            "alpha",
            "tau",
            "iterations",
            "policies_agree",
            "first_disagreement",
            "max_spread",
        ],
    );
    let (mut disagree, mut spread_fail, mut total, mut worst) = (0, 0, 0, 0.0f64);
    for (seed, reports) in &per_seed {
        for (&alpha, r) in alphas.iter().zip(reports) {
            total += 1;
            disagree += usize::from(!r.policies_agree);
            spread_fail += usize::from(!r.spread_ok);
            worst = worst.max(r.max_spread);
            table.push(vec![
                (*seed).into(),
                alpha.into(),
                tau.into(),
                r.iterations.into(),
                r.policies_agree.into(),
                r.first_disagreement.into(),
                r.max_spread.into(),
            ]);
        }
    }

    let mut out = SuiteOutput::default();
    out.tables.push(table);
    out.checks.push(Check::tally(
        "gvi-mvi-greedy-agreement",
        disagree,
        total,
        "identical greedy policy at every iteration",
    ));
    out.checks.push(Check::tally(
        "gvi-mvi-difference-spread",
        spread_fail,
        total,
        format!("max spread of Q_MVI - Q_GVI = {} (tol {})", sci(worst), sci(SPREAD_TOL)),
    ));
    Ok(out)
}

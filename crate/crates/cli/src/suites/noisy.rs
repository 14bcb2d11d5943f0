use std::collections::HashMap;

use gapforge_core::analysis::{error_bound_al, error_bound_sal};
use gapforge_core::mdp::evaluate_policy_exact;
use gapforge_core::{iterate, NoiseKind, NoiseModel, OperatorSpec, OperatorVariant};

use super::{instance, load_mdp, sci, Instance, SuiteError, SuiteOutput, SuiteResult};
use crate::config::ExperimentConfig;
use crate::manifest::Check;
use crate::output::Table;

/// One operator/noise combination, shared by every seed.
struct RunPlan {
    variant: OperatorVariant,
    spec: OperatorSpec,
    omega: f64,
    alpha: f64,
    kind: NoiseKind,
    epsilon: f64,
    /// Bound at `k = 0..=k_max`.
    bounds: Vec<f64>,
}

fn plans(config: &ExperimentConfig, gamma: f64, v_max: f64) -> SuiteResult<Vec<RunPlan>> {
    let mut ops = Vec::new();
    for &variant in &config.operator.variants {
        match variant {
            OperatorVariant::Sal => {
                for (w, a) in config.pairs() {
                    ops.push((variant, config.sal(w, a), w, a));
                }
            }
            OperatorVariant::Al => {
                for a in config.alphas() {
                    ops.push((variant, config.gate(OperatorSpec::al(a)), 1.0, a));
                }
            }
            _ => unreachable!("variants are validated"),
        }
    }
    let mut out = Vec::new();
    for (variant, spec, omega, alpha) in ops {
        for &kind in &config.noise.kinds {
            for &epsilon in &config.noise.epsilons {
                let bounds = (0..=config.k_max)
                    .map(|k| match variant {
                        OperatorVariant::Al => error_bound_al(k, gamma, alpha, epsilon, v_max),
                        _ => error_bound_sal(k, gamma, omega, alpha, epsilon, v_max),
                    })
                    .collect::<Result<_, _>>()?;
                out.push(RunPlan {
                    variant,
                    spec,
                    omega,
                    alpha,
                    kind,
                    epsilon,
                    bounds,
                });
            }
        }
    }
    Ok(out)
}

struct RunResult {
    max_loss: f64,
    final_loss: f64,
    min_slack: f64,
    violations: usize,
    noise_overruns: usize,
    policies: usize,
    /// `(loss, bound)` per `k`; kept for the first seed only.
    curve: Vec<(f64, f64)>,
}

/// `||Q* - Q^{π}||_∞` by exact evaluation, cached per greedy action vector.
struct LossCache<'a> {
    inst: &'a Instance,
    losses: HashMap<Vec<usize>, f64>,
}

impl LossCache<'_> {
    fn loss(&mut self, actions: &[usize]) -> SuiteResult<f64> {
        if let Some(&l) = self.losses.get(actions) {
            return Ok(l);
        }
        let policy = gapforge_core::Policy::deterministic(actions, self.inst.mdp.n_actions())?;
        let q_pi = evaluate_policy_exact(&self.inst.mdp, &policy)?;
        let l = self.inst.q_star.sup_distance(&q_pi);
        self.losses.insert(actions.to_vec(), l);
        Ok(l)
    }
}

fn run_seed(config: &ExperimentConfig, plans: &[RunPlan], seed: u64, keep_curve: bool) -> SuiteResult<Vec<RunResult>> {
    let inst = instance(config, seed)?;
    let mut cache = LossCache {
        inst: &inst,
        losses: HashMap::new(),
    };
    let mut results = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        // Distinct noise streams per MDP and per plan.
        let noise_seed = config
            .noise
            .seed
            .wrapping_add(seed.wrapping_mul(1_000_003))
            .wrapping_add(i as u64);
        let noise = NoiseModel::new(plan.kind, plan.epsilon, noise_seed).with_reference(inst.q_star.clone());
        let trace = iterate(&inst.mdp, &plan.spec, &noise, config.k_max, 0.0)?;

        let mut r = RunResult {
            max_loss: 0.0,
            final_loss: 0.0,
            min_slack: f64::INFINITY,
            violations: 0,
            noise_overruns: 0,
            policies: 0,
            curve: Vec::new(),
        };
        let mut seen = std::collections::HashSet::new();
        for rec in &trace.records {
            let loss = cache.loss(&rec.greedy_actions)?;
            let bound = plan.bounds[rec.k];
            seen.insert(rec.greedy_actions.clone());
            r.max_loss = r.max_loss.max(loss);
            r.final_loss = loss;
            r.min_slack = r.min_slack.min(bound - loss);
            r.violations += usize::from(!(loss <= bound));
            r.noise_overruns += usize::from(!(rec.noise_norm <= plan.epsilon));
            if keep_curve {
                r.curve.push((loss, bound));
            }
        }
        r.policies = seen.len();
        results.push(r);
    }
    Ok(results)
}

pub(crate) fn run(config: &ExperimentConfig) -> SuiteResult<SuiteOutput> {
    let seeds = config.seeds();
    let first = load_mdp(config, seeds[0])?;
    let (gamma, v_max) = (first.gamma(), first.v_max());
    let plans = plans(config, gamma, v_max)?;

    let per_seed = config.execution().try_map(&seeds, |&seed| {
        Ok::<_, SuiteError>((seed, run_seed(config, &plans, seed, seed == seeds[0])?))
    })?;

    let mut runs = Table::new(
        "noisy_vi.csv",
        &[
            "seed",
            "variant",
            "omega",
            "alpha",
            "kind",
            "epsilon",
            "k_max",
            "policies",
            "max_loss",
            "final_loss",
            "final_bound",
            "min_slack",
            "violations",
        ],
    );
    let mut curves = Table::new(
        "noisy_vi_curves.csv",
        &[
            "seed", "variant", "omega", "alpha", "kind", "epsilon", "k", "loss", "bound",
        ],
    );
    let mut per_kind: Vec<(NoiseKind, usize, usize, f64)> =
        config.noise.kinds.iter().map(|&k| (k, 0, 0, f64::INFINITY)).collect();
    let mut overruns = 0;
    for (seed, results) in &per_seed {
        for (plan, r) in plans.iter().zip(results) {
            runs.push(vec![
                (*seed).into(),
                plan.variant.name().into(),
                plan.omega.into(),
                plan.alpha.into(),
                plan.kind.name().into(),
                plan.epsilon.into(),
                config.k_max.into(),
                r.policies.into(),
                r.max_loss.into(),
                r.final_loss.into(),
                plan.bounds[config.k_max].into(),
                r.min_slack.into(),
                r.violations.into(),
            ]);
            for (k, (loss, bound)) in r.curve.iter().enumerate() {
                curves.push(vec![
                    (*seed).into(),
                    plan.variant.name().into(),
                    plan.omega.into(),
                    plan.alpha.into(),
                    plan.kind.name().into(),
                    plan.epsilon.into(),
                    k.into(),
                    (*loss).into(),
                    (*bound).into(),
                ]);
            }
            let entry = per_kind.iter_mut().find(|e| e.0 == plan.kind).expect("kind planned");
            entry.1 += usize::from(r.violations > 0);
            entry.2 += 1;
            entry.3 = entry.3.min(r.min_slack);
            overruns += r.noise_overruns;
        }
    }

    let mut out = SuiteOutput::default();
    out.tables.push(runs);
    out.tables.push(curves);
    for (kind, fail, total, slack) in per_kind {
        out.checks.push(Check::tally(
            &format!("bound-domination-{}", kind.name()),
            fail,
            total,
            format!("||Q* - Q^pi_k|| <= bound at every k; min slack {}", sci(slack)),
        ));
    }
    out.checks.push(Check::new(
        "noise-budget",
        overruns == 0,
        format!("{overruns} iterations with ||eps_k|| above epsilon"),
    ));
    Ok(out)
}

//! End-to-end model-based evaluation and optimization: fit a model by a loss,
//! then evaluate the target (OPE) or plan in the fitted model (OPO).

use serde::{Deserialize, Serialize};

use crate::classes::{enumerate_adversaries, solve_tabular, FunctionClassHandle};
use crate::error::Result;
use crate::losses::{AdversaryPair, LossContext, LossKind};
use crate::mdp::{
    behavior_distribution, density_ratio, evaluate_policy, Dataset, generate_dataset, solve_occupancy,
    solve_value_function, Policy, TabularMdp, TransitionModel,
};
use crate::minimax::{minimize_finite, DEFAULT_RESOLUTION};
use crate::planner::{plan_optimal, DEFAULT_TOL};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelClass {
    Grid(Vec<TransitionModel>),
    /// Count-based conditional; every `(s, a)` must be observed.
    TabularClosedForm,
}

/// Whether the exact objects of the error bounds are added to the adversary class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realizability {
    Agnostic,
    ExactInjected,
}

/// Source of the loss expectations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Exact behavior law `D(s, a) P*(s' | s, a)`.
    Exact,
    Empirical { n_transitions: usize, episode_length: usize },
}

impl Sampling {
    pub fn n_transitions(&self) -> Option<usize> {
        match self {
            Self::Exact => None,
            Self::Empirical { n_transitions, .. } => Some(*n_transitions),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpeProblem<'a> {
    pub mdp: &'a TabularMdp,
    pub behavior: &'a Policy,
    pub target: &'a Policy,
    pub model_class: &'a ModelClass,
    pub adversaries: &'a FunctionClassHandle,
    pub loss_kind: LossKind,
    pub realizability: Realizability,
    pub sampling: Sampling,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpeReport {
    pub j_true: f64,
    pub j_model: f64,
    pub abs_error: f64,
    /// `gamma * max_k |L(pair_k, P_hat)|` over the (possibly injected) class.
    pub bound: f64,
    /// `None` when the behavior and target values coincide.
    pub log_relative_mse: Option<f64>,
    pub loss_kind: LossKind,
    pub chosen: Option<usize>,
    pub seed: u64,
    pub n_transitions: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpoReport {
    pub j_optimal: f64,
    pub j_planned: f64,
    pub suboptimality: f64,
    /// `2 gamma * max_k |L(pair_k, P_hat)|`.
    pub bound: f64,
    pub loss_kind: LossKind,
    pub chosen: Option<usize>,
    pub seed: u64,
    pub n_transitions: Option<usize>,
}

/// `log((J_hat - J)^2 / (J_b - J)^2)`.
pub fn log_relative_mse(j_model: f64, j_true: f64, j_behavior: f64) -> Option<f64> {
    let denom = (j_behavior - j_true).powi(2);
    if denom == 0.0 {
        return None;
    }
    Some(((j_model - j_true).powi(2) / denom).ln())
}

/// Fails with the first `(s, a)` that `target` reaches but the data never covers.
pub fn check_support(mdp: &TabularMdp, target: &Policy, behavior: &Policy) -> Result<()> {
    let data_sa = behavior_distribution(mdp, behavior)?;
    density_ratio(&solve_occupancy(mdp, target, mdp.transition())?, &data_sa).map(|_| ())
}

struct Fitted {
    model: TransitionModel,
    chosen: Option<usize>,
}

fn context(mdp: &TabularMdp, behavior: &Policy, sampling: Sampling, seed: u64) -> Result<(LossContext, Option<Dataset>)> {
    match sampling {
        Sampling::Exact => Ok((LossContext::exact(mdp, behavior)?, None)),
        Sampling::Empirical {
            n_transitions,
            episode_length,
        } => {
            let data = generate_dataset(mdp, behavior, n_transitions, episode_length, seed)?;
            Ok((LossContext::empirical(&data), Some(data)))
        }
    }
}

fn injected_class(base: &FunctionClassHandle, extra: Vec<AdversaryPair>) -> Result<FunctionClassHandle> {
    let mut pairs = enumerate_adversaries(base, DEFAULT_RESOLUTION)?;
    pairs.extend(extra);
    FunctionClassHandle::finite_grid(pairs)
}

fn fit(
    ctx: &LossContext,
    data: Option<&Dataset>,
    mdp: &TabularMdp,
    class: &ModelClass,
    adversaries: &FunctionClassHandle,
    loss_kind: LossKind,
) -> Result<Fitted> {
    match class {
        ModelClass::Grid(grid) => {
            let sel = minimize_finite(ctx, grid, adversaries, loss_kind)?;
            Ok(Fitted {
                model: grid[sel.chosen].clone(),
                chosen: Some(sel.chosen),
            })
        }
        ModelClass::TabularClosedForm => {
            let model = match data {
                Some(d) => solve_tabular(d, mdp.n_states(), mdp.n_actions())?,
                // the exact conditional of D P* is P* itself on the support
                None => mdp.transition().clone(),
            };
            Ok(Fitted { model, chosen: None })
        }
    }
}

/// `max_k |L(pair_k, model)|` with the RKHS closed form where applicable.
pub fn inner_max(ctx: &LossContext, adversaries: &FunctionClassHandle, model: &TransitionModel) -> Result<f64> {
    match adversaries {
        FunctionClassHandle::LinearSpan(_) => Ok(f64::INFINITY),
        _ => Ok(minimize_finite(ctx, std::slice::from_ref(model), adversaries, LossKind::Mml)?.inner_max),
    }
}

fn grid_models<'a>(class: &'a ModelClass, fitted: &'a TransitionModel) -> Vec<&'a TransitionModel> {
    match class {
        ModelClass::Grid(g) => g.iter().collect(),
        ModelClass::TabularClosedForm => vec![fitted],
    }
}

pub fn run_ope(problem: &OpeProblem<'_>) -> Result<OpeReport> {
    let OpeProblem {
        mdp,
        behavior,
        target,
        model_class,
        adversaries,
        loss_kind,
        realizability,
        sampling,
        seed,
    } = problem.clone();
    check_support(mdp, target, behavior)?;
    let (ctx, data) = context(mdp, behavior, sampling, seed)?;
    let truth = mdp.transition();
    let data_sa = behavior_distribution(mdp, behavior)?;
    let w_true = density_ratio(&solve_occupancy(mdp, target, truth)?, &data_sa)?;

    let injected = |models: &[&TransitionModel]| -> Result<FunctionClassHandle> {
        let mut extra = Vec::new();
        for m in models {
            extra.push(AdversaryPair::new(w_true.clone(), solve_value_function(mdp, target, m)?)?);
        }
        injected_class(adversaries, extra)
    };

    let (fitted, class) = match (realizability, model_class) {
        (Realizability::Agnostic, _) => (fit(&ctx, data.as_ref(), mdp, model_class, adversaries, loss_kind)?, adversaries.clone()),
        (Realizability::ExactInjected, ModelClass::Grid(grid)) => {
            let class = injected(&grid.iter().collect::<Vec<_>>())?;
            (fit(&ctx, data.as_ref(), mdp, model_class, &class, loss_kind)?, class)
        }
        (Realizability::ExactInjected, ModelClass::TabularClosedForm) => {
            let f = fit(&ctx, data.as_ref(), mdp, model_class, adversaries, loss_kind)?;
            let class = injected(&grid_models(model_class, &f.model))?;
            (f, class)
        }
    };

    let j_true = evaluate_policy(mdp, target, truth)?;
    let j_model = evaluate_policy(mdp, target, &fitted.model)?;
    let j_behavior = evaluate_policy(mdp, behavior, truth)?;
    let bound = mdp.gamma() * inner_max(&ctx, &class, &fitted.model)?;
    Ok(OpeReport {
        j_true,
        j_model,
        abs_error: (j_model - j_true).abs(),
        bound,
        log_relative_mse: log_relative_mse(j_model, j_true, j_behavior),
        loss_kind,
        chosen: fitted.chosen,
        seed,
        n_transitions: sampling.n_transitions(),
    })
}

#[derive(Clone, Debug)]
pub struct OpoProblem<'a> {
    pub mdp: &'a TabularMdp,
    pub behavior: &'a Policy,
    pub model_class: &'a ModelClass,
    pub adversaries: &'a FunctionClassHandle,
    pub loss_kind: LossKind,
    pub realizability: Realizability,
    pub sampling: Sampling,
    pub seed: u64,
}

pub fn run_opo(problem: &OpoProblem<'_>) -> Result<OpoReport> {
    let OpoProblem {
        mdp,
        behavior,
        model_class,
        adversaries,
        loss_kind,
        realizability,
        sampling,
        seed,
    } = problem.clone();
    let (ctx, data) = context(mdp, behavior, sampling, seed)?;
    let truth = mdp.transition();
    let data_sa = behavior_distribution(mdp, behavior)?;
    let planned_in = |m: &TransitionModel| -> Result<Policy> { plan_optimal(&mdp.with_transition(m.clone())?, m, DEFAULT_TOL) };
    let pi_star = planned_in(truth)?;
    check_support(mdp, &pi_star, behavior)?;

    // for each model P: (w*_{pi*}, V^P_{pi*}) and (w*_{pi_P}, V^P_{pi_P})
    let injected = |models: &[&TransitionModel]| -> Result<FunctionClassHandle> {
        let w_star = density_ratio(&solve_occupancy(mdp, &pi_star, truth)?, &data_sa)?;
        let mut extra = Vec::new();
        for m in models {
            let pi_m = planned_in(m)?;
            let w_m = density_ratio(&solve_occupancy(mdp, &pi_m, truth)?, &data_sa)?;
            extra.push(AdversaryPair::new(w_star.clone(), solve_value_function(mdp, &pi_star, m)?)?);
            extra.push(AdversaryPair::new(w_m, solve_value_function(mdp, &pi_m, m)?)?);
        }
        injected_class(adversaries, extra)
    };

    let (fitted, class) = match (realizability, model_class) {
        (Realizability::Agnostic, _) => (fit(&ctx, data.as_ref(), mdp, model_class, adversaries, loss_kind)?, adversaries.clone()),
        (Realizability::ExactInjected, ModelClass::Grid(grid)) => {
            let class = injected(&grid.iter().collect::<Vec<_>>())?;
            (fit(&ctx, data.as_ref(), mdp, model_class, &class, loss_kind)?, class)
        }
        (Realizability::ExactInjected, ModelClass::TabularClosedForm) => {
            let f = fit(&ctx, data.as_ref(), mdp, model_class, adversaries, loss_kind)?;
            let class = injected(&grid_models(model_class, &f.model))?;
            (f, class)
        }
    };

    let pi_hat = planned_in(&fitted.model)?;
    let j_optimal = evaluate_policy(mdp, &pi_star, truth)?;
    let j_planned = evaluate_policy(mdp, &pi_hat, truth)?;
    let bound = 2.0 * mdp.gamma() * inner_max(&ctx, &class, &fitted.model)?;
    Ok(OpoReport {
        j_optimal,
        j_planned,
        suboptimality: j_optimal - j_planned,
        bound,
        loss_kind,
        chosen: fitted.chosen,
        seed,
        n_transitions: sampling.n_transitions(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::TabularBall;
    use crate::error::Error;
    use crate::rng::seeded;

    fn setup(seed: u64) -> (TabularMdp, Policy, Policy, ModelClass) {
        let mut rng = seeded(seed);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
        let target = Policy::random(3, 2, &mut rng);
        let mut grid: Vec<_> = (0..3).map(|_| TransitionModel::random(3, 2, &mut rng)).collect();
        grid.push(mdp.transition().clone());
        (mdp, Policy::uniform(3, 2), target, ModelClass::Grid(grid))
    }

    #[test]
    fn truth_in_grid_gives_zero_error() {
        let (mdp, behavior, target, class) = setup(1);
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(3, 2, 1.0).unwrap());
        let r = run_ope(&OpeProblem {
            mdp: &mdp,
            behavior: &behavior,
            target: &target,
            model_class: &class,
            adversaries: &ball,
            loss_kind: LossKind::Mml,
            realizability: Realizability::ExactInjected,
            sampling: Sampling::Exact,
            seed: 0,
        })
        .unwrap();
        assert_eq!(r.chosen, Some(3));
        assert!(r.abs_error < 1e-12 && r.bound < 1e-12);
    }

    #[test]
    fn on_policy_metric_is_undefined() {
        let (mdp, behavior, _, class) = setup(2);
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(3, 2, 1.0).unwrap());
        let r = run_ope(&OpeProblem {
            mdp: &mdp,
            behavior: &behavior,
            target: &behavior,
            model_class: &class,
            adversaries: &ball,
            loss_kind: LossKind::Mml,
            realizability: Realizability::Agnostic,
            sampling: Sampling::Exact,
            seed: 0,
        })
        .unwrap();
        assert_eq!(r.log_relative_mse, None);
    }

    #[test]
    fn bounds_hold_when_realizable() {
        for seed in 10..20 {
            let (mdp, behavior, target, _) = setup(seed);
            let mut rng = seeded(seed + 100);
            let grid = ModelClass::Grid((0..4).map(|_| TransitionModel::random(3, 2, &mut rng)).collect());
            let ball = FunctionClassHandle::TabularBall(TabularBall::new(3, 2, 1.0).unwrap());
            let ope = run_ope(&OpeProblem {
                mdp: &mdp,
                behavior: &behavior,
                target: &target,
                model_class: &grid,
                adversaries: &ball,
                loss_kind: LossKind::Mml,
                realizability: Realizability::ExactInjected,
                sampling: Sampling::Exact,
                seed,
            })
            .unwrap();
            assert!(ope.abs_error <= ope.bound + 1e-8);
            let opo = run_opo(&OpoProblem {
                mdp: &mdp,
                behavior: &behavior,
                model_class: &grid,
                adversaries: &ball,
                loss_kind: LossKind::Mml,
                realizability: Realizability::ExactInjected,
                sampling: Sampling::Exact,
                seed,
            })
            .unwrap();
            assert!(opo.suboptimality >= -1e-12);
            assert!(opo.suboptimality <= opo.bound + 1e-8);
        }
    }

    #[test]
    fn uncovered_target_is_rejected() {
        let (mdp, _, _, class) = setup(3);
        let behavior = Policy::deterministic(2, &[0, 0, 0]).unwrap();
        let target = Policy::deterministic(2, &[1, 1, 1]).unwrap();
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(3, 2, 1.0).unwrap());
        let err = run_ope(&OpeProblem {
            mdp: &mdp,
            behavior: &behavior,
            target: &target,
            model_class: &class,
            adversaries: &ball,
            loss_kind: LossKind::Mml,
            realizability: Realizability::Agnostic,
            sampling: Sampling::Exact,
            seed: 0,
        })
        .unwrap_err();
        assert!(matches!(err, Error::Support { .. }));
    }
}

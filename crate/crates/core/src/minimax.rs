//! Outer minimization over a finite model grid with the inner maximization
//! over an adversary class, and the misspecification gap.

use rayon::prelude::*;

use crate::classes::{enumerate_adversaries, FunctionClassHandle};
use crate::error::{Error, Result};
use crate::losses::{AdversaryPair, LossContext, LossKind, VamlNorm};
use crate::mdp::TransitionModel;
use crate::rkhs::{rkhs_max_mml_sq_in, ModelExpectation};

/// Ball resolution used when a minimax search enumerates a `TabularBall`.
pub const DEFAULT_RESOLUTION: u32 = 2;

/// What attained the inner maximum at the chosen model.
#[derive(Clone, Debug, PartialEq)]
pub enum InnerArgmax {
    Pair(AdversaryPair),
    /// Closed-form maximizer inside an RKHS ball or a pointwise VAML supremum.
    ClosedForm,
    /// MLE has no adversary.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSelection {
    pub chosen: usize,
    pub inner_max: f64,
    /// Inner maximum per grid model, in grid order.
    pub per_model_inner_max: Vec<f64>,
    pub adversary_argmax: InnerArgmax,
}

struct Inner {
    value: f64,
    argmax: Option<usize>,
}

/// `max_k |L(pair_k, model)|`, first index wins ties.
fn max_abs(ctx: &LossContext, pairs: &[AdversaryPair], model: &TransitionModel) -> Inner {
    let mut best = Inner {
        value: 0.0,
        argmax: None,
    };
    for (k, p) in pairs.iter().enumerate() {
        let v = ctx.mml_unchecked(p, model).abs();
        if best.argmax.is_none() || v > best.value {
            best = Inner {
                value: v,
                argmax: Some(k),
            };
        }
    }
    best
}

enum Prepared<'a> {
    Pairs(Vec<AdversaryPair>),
    Handle(&'a FunctionClassHandle),
}

/// Picks the model with the smallest inner maximum; ties go to the lowest index.
pub fn minimize_finite(
    ctx: &LossContext,
    model_grid: &[TransitionModel],
    adversaries: &FunctionClassHandle,
    loss_kind: LossKind,
) -> Result<ModelSelection> {
    minimize_finite_at(ctx, model_grid, adversaries, loss_kind, DEFAULT_RESOLUTION)
}

pub fn minimize_finite_at(
    ctx: &LossContext,
    model_grid: &[TransitionModel],
    adversaries: &FunctionClassHandle,
    loss_kind: LossKind,
    resolution: u32,
) -> Result<ModelSelection> {
    if model_grid.is_empty() {
        return Err(Error::Empty("model grid"));
    }
    for m in model_grid {
        ctx.check_model(m)?;
    }
    let prepared = match (loss_kind, adversaries) {
        (LossKind::Mml, FunctionClassHandle::RkhsUnitBall(_)) => Prepared::Handle(adversaries),
        (LossKind::Mml, FunctionClassHandle::LinearSpan(_)) => {
            return Err(Error::Unsupported(
                "MML inner maximum over an unbounded linear span".into(),
            ))
        }
        (LossKind::Mml, _) => {
            let pairs = enumerate_adversaries(adversaries, resolution)?;
            for p in &pairs {
                ctx.check_pair(p)?;
            }
            Prepared::Pairs(pairs)
        }
        (LossKind::VamlL2 | LossKind::VamlL1 | LossKind::Mle, _) => Prepared::Handle(adversaries),
        (kind, _) => {
            return Err(Error::Unsupported(format!("minimax over {kind} loss")));
        }
    };

    let results: Vec<Result<Inner>> = model_grid
        .par_iter()
        .map(|model| inner(ctx, model, &prepared, loss_kind))
        .collect();
    let inners: Vec<Inner> = results.into_iter().collect::<Result<_>>()?;

    let mut chosen = 0;
    for (i, r) in inners.iter().enumerate() {
        if r.value.is_nan() {
            return Err(Error::Numerical(format!("inner maximum at model {i} is NaN")));
        }
        if r.value < inners[chosen].value {
            chosen = i;
        }
    }
    let adversary_argmax = match (&prepared, loss_kind) {
        (_, LossKind::Mle) => InnerArgmax::None,
        (Prepared::Pairs(pairs), _) => match inners[chosen].argmax {
            Some(k) => InnerArgmax::Pair(pairs[k].clone()),
            None => InnerArgmax::None,
        },
        (Prepared::Handle(_), _) => InnerArgmax::ClosedForm,
    };
    Ok(ModelSelection {
        chosen,
        inner_max: inners[chosen].value,
        per_model_inner_max: inners.iter().map(|r| r.value).collect(),
        adversary_argmax,
    })
}

fn inner(
    ctx: &LossContext,
    model: &TransitionModel,
    prepared: &Prepared<'_>,
    loss_kind: LossKind,
) -> Result<Inner> {
    let closed = |value| Inner {
        value,
        argmax: None,
    };
    match (loss_kind, prepared) {
        (LossKind::Mml, Prepared::Pairs(pairs)) => Ok(max_abs(ctx, pairs, model)),
        (LossKind::Mml, Prepared::Handle(FunctionClassHandle::RkhsUnitBall(k))) => {
            Ok(closed(rkhs_max_mml_sq_in(ctx, k, model, ModelExpectation::Exact)?.sqrt()))
        }
        (LossKind::VamlL2, Prepared::Handle(h)) => Ok(closed(ctx.vaml(h, model, VamlNorm::L2)?)),
        (LossKind::VamlL1, Prepared::Handle(h)) => Ok(closed(ctx.vaml(h, model, VamlNorm::L1)?)),
        (LossKind::Mle, _) => Ok(closed(ctx.mle(model)?)),
        _ => Err(Error::Unsupported("loss and class combination".into())),
    }
}

/// `max_P max_t min_h |L(t - h, P)|` with `targets[i]` the exact objects for `model_grid[i]`.
///
/// A single target per model gives the OPE gap; two per model give the OPO gap.
pub fn misspec_gap(
    ctx: &LossContext,
    model_grid: &[TransitionModel],
    restricted_class: &FunctionClassHandle,
    targets: &[Vec<AdversaryPair>],
) -> Result<f64> {
    if model_grid.is_empty() {
        return Err(Error::Empty("model grid"));
    }
    if targets.len() != model_grid.len() {
        return Err(Error::Dimension(format!(
            "{} target families for {} models",
            targets.len(),
            model_grid.len()
        )));
    }
    let restricted = enumerate_adversaries(restricted_class, DEFAULT_RESOLUTION)?;
    if restricted.is_empty() {
        return Err(Error::Empty("restricted class"));
    }
    let mut gap: f64 = 0.0;
    for (model, family) in model_grid.iter().zip(targets) {
        let class_losses: Vec<f64> = restricted
            .iter()
            .map(|h| ctx.mml(h, model))
            .collect::<Result<_>>()?;
        for t in family {
            // bilinearity: L(t - h) = L(t) - L(h)
            let lt = ctx.mml(t, model)?;
            let closest = class_losses
                .iter()
                .map(|lh| (lt - lh).abs())
                .fold(f64::INFINITY, f64::min);
            gap = gap.max(closest);
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{solve_tabular, TabularBall};
    use crate::mdp::{generate_dataset, Policy, TabularMdp, ValueFunction, WeightFunction};
    use crate::rng::seeded;

    fn instance(seed: u64) -> (TabularMdp, LossContext, Vec<TransitionModel>) {
        let mut rng = seeded(seed);
        let mdp = TabularMdp::random(2, 2, 0.9, &mut rng);
        let ctx = LossContext::exact(&mdp, &Policy::uniform(2, 2)).unwrap();
        let mut grid: Vec<_> = (0..4).map(|_| TransitionModel::random(2, 2, &mut rng)).collect();
        grid.insert(2, mdp.transition().clone());
        (mdp, ctx, grid)
    }

    #[test]
    fn truth_in_grid_wins_with_zero() {
        let (_, ctx, grid) = instance(1);
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(2, 2, 1.0).unwrap());
        let sel = minimize_finite(&ctx, &grid, &ball, LossKind::Mml).unwrap();
        assert_eq!(sel.chosen, 2);
        assert!(sel.inner_max < 1e-12);
        assert_eq!(sel.inner_max, sel.per_model_inner_max[sel.chosen]);
    }

    #[test]
    fn per_model_values_match_nested_loops() {
        let (_, ctx, grid) = instance(2);
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(2, 2, 1.0).unwrap());
        let sel = minimize_finite(&ctx, &grid, &ball, LossKind::Mml).unwrap();
        let pairs = enumerate_adversaries(&ball, DEFAULT_RESOLUTION).unwrap();
        for (model, &got) in grid.iter().zip(&sel.per_model_inner_max) {
            let mut best: f64 = 0.0;
            for p in &pairs {
                best = best.max(ctx.mml(p, model).unwrap().abs());
            }
            assert_eq!(best, got);
        }
    }

    #[test]
    fn singleton_grid_and_ties() {
        let mut rng = seeded(3);
        let mdp = TabularMdp::random(2, 1, 0.9, &mut rng);
        let data = generate_dataset(&mdp, &Policy::uniform(2, 1), 100, 10, 4).unwrap();
        let ctx = LossContext::empirical(&data);
        let counts = solve_tabular(&data, 2, 1).unwrap();
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(2, 1, 1.0).unwrap());
        let sel = minimize_finite(&ctx, std::slice::from_ref(&counts), &ball, LossKind::Mml).unwrap();
        assert_eq!(sel.chosen, 0);
        let twice = vec![counts.clone(), counts];
        assert_eq!(minimize_finite(&ctx, &twice, &ball, LossKind::Mle).unwrap().chosen, 0);
        assert!(minimize_finite(&ctx, &[], &ball, LossKind::Mml).is_err());
    }

    #[test]
    fn zero_probability_models_rank_last_under_mle() {
        let (mdp, ctx, _) = instance(4);
        let blocked = TransitionModel::deterministic(2, 2, &[0, 0, 0, 0]).unwrap();
        let grid = vec![blocked, mdp.transition().clone()];
        let ball = FunctionClassHandle::TabularBall(TabularBall::new(2, 2, 1.0).unwrap());
        let sel = minimize_finite(&ctx, &grid, &ball, LossKind::Mle).unwrap();
        assert_eq!(sel.chosen, 1);
        assert_eq!(sel.per_model_inner_max[0], f64::INFINITY);
    }

    #[test]
    fn gap_cases() {
        let (mdp, ctx, grid) = instance(5);
        let target = AdversaryPair::new(
            WeightFunction::new(2, 2, vec![1.0, 0.5, -1.0, 2.0]).unwrap(),
            ValueFunction::new(vec![3.0, -1.0]),
        )
        .unwrap();
        let targets = vec![vec![target.clone()]; grid.len()];
        let containing = FunctionClassHandle::FiniteGrid(vec![AdversaryPair::zero(2, 2), target.clone()]);
        assert_eq!(misspec_gap(&ctx, &grid, &containing, &targets).unwrap(), 0.0);
        let zero = FunctionClassHandle::FiniteGrid(vec![AdversaryPair::zero(2, 2)]);
        let expected = grid
            .iter()
            .map(|m| ctx.mml(&target, m).unwrap().abs())
            .fold(0.0, f64::max);
        assert_eq!(misspec_gap(&ctx, &grid, &zero, &targets).unwrap(), expected);
        let _ = mdp;
    }
}

//! Confidence interval for the target value from the signed CI loss
//! `E[w r] - gamma L(w, V, P)` over finite model and adversary grids.
//!
//! Unlike the MML minimax, no absolute value is taken: the upper end is
//! `min_P max_k` and the lower end `max_P min_k` of the signed loss.

use rayon::prelude::*;

use crate::classes::{enumerate_adversaries, FunctionClassHandle};
use crate::error::{Error, Result};
use crate::losses::{AdversaryPair, LossContext};
use crate::mdp::{Dataset, TransitionModel};
use crate::minimax::DEFAULT_RESOLUTION;

#[derive(Clone, Debug, PartialEq)]
pub struct CiResult {
    pub lower: f64,
    pub upper: f64,
    /// Filled in by callers that know the true value.
    pub j_true: Option<f64>,
    pub midpoint: f64,
    pub gap: f64,
    /// Model attaining the upper end.
    pub argmin_model: usize,
    /// Model attaining the lower end.
    pub argmax_model: usize,
}

impl CiResult {
    pub fn with_truth(mut self, j_true: f64) -> Self {
        self.j_true = Some(j_true);
        self
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.lower - tol <= value && value <= self.upper + tol
    }
}

/// `E_n[w r] - gamma * mml_loss` on logged records.
pub fn ci_loss(data: &Dataset, gamma: f64, adversary: &AdversaryPair, model: &TransitionModel) -> Result<f64> {
    ci_loss_in(&LossContext::empirical(data), gamma, adversary, model)
}

pub fn ci_loss_in(ctx: &LossContext, gamma: f64, adversary: &AdversaryPair, model: &TransitionModel) -> Result<f64> {
    let l = ctx.mml(adversary, model)?;
    Ok(ctx.weighted_reward(&adversary.w) - gamma * l)
}

pub fn ci_bounds(
    ctx: &LossContext,
    gamma: f64,
    model_grid: &[TransitionModel],
    adversaries: &FunctionClassHandle,
) -> Result<CiResult> {
    match adversaries {
        FunctionClassHandle::RkhsUnitBall(_) | FunctionClassHandle::LinearSpan(_) => Err(Error::Unsupported(
            format!("CI bounds need an enumerable class, got {}", adversaries.label()),
        )),
        _ => ci_bounds_pairs(ctx, gamma, model_grid, &enumerate_adversaries(adversaries, DEFAULT_RESOLUTION)?),
    }
}

pub fn ci_bounds_pairs(
    ctx: &LossContext,
    gamma: f64,
    model_grid: &[TransitionModel],
    pairs: &[AdversaryPair],
) -> Result<CiResult> {
    if model_grid.is_empty() {
        return Err(Error::Empty("model grid"));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("adversary grid"));
    }
    let rows: Vec<Result<(f64, f64)>> = model_grid
        .par_iter()
        .map(|model| {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for p in pairs {
                let v = ci_loss_in(ctx, gamma, p, model)?;
                hi = hi.max(v);
                lo = lo.min(v);
            }
            Ok((hi, lo))
        })
        .collect();
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let (mut argmin_model, mut argmax_model) = (0, 0);
    for (i, (hi, lo)) in rows.iter().enumerate() {
        if hi.is_nan() || lo.is_nan() {
            return Err(Error::Numerical(format!("CI loss at model {i} is NaN")));
        }
        if *hi < rows[argmin_model].0 {
            argmin_model = i;
        }
        if *lo > rows[argmax_model].1 {
            argmax_model = i;
        }
    }
    let upper = rows[argmin_model].0;
    let lower = rows[argmax_model].1;
    Ok(CiResult {
        lower,
        upper,
        j_true: None,
        midpoint: 0.5 * (upper + lower),
        gap: upper - lower,
        argmin_model,
        argmax_model,
    })
}

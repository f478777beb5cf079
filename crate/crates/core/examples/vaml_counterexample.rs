//! Two states, one action: the per-sample VAML objective prefers a deterministic wrong model.

use mmllab::classes::FunctionClassHandle;
use mmllab::losses::{AdversaryPair, LossContext, LossKind};
use mmllab::mdp::{TabularMdp, TransitionModel, ValueFunction, WeightFunction};
use mmllab::minimax::minimize_finite;

fn main() -> mmllab::Result<()> {
    let row = |a: f64| vec![a, 1.0 - a, a, 1.0 - a];
    let alphas: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let grid = alphas.iter().map(|&a| TransitionModel::new(2, 1, row(a))).collect::<mmllab::Result<Vec<_>>>()?;
    let pairs = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        .iter()
        .map(|&(x, y)| AdversaryPair::new(WeightFunction::constant(2, 1, 1.0), ValueFunction::new(vec![x, y])))
        .collect::<mmllab::Result<Vec<_>>>()?;
    let class = FunctionClassHandle::finite_grid(pairs)?;
    for alpha_star in [0.3, 0.7] {
        let mdp = TabularMdp::new(TransitionModel::new(2, 1, row(alpha_star))?, vec![0.0, 0.0], 1.0, 0.9, vec![0.5, 0.5])?;
        let ctx = LossContext::from_distribution(&mdp, &[0.5, 0.5])?;
        let vaml = minimize_finite(&ctx, &grid, &class, LossKind::VamlL1)?;
        let mml = minimize_finite(&ctx, &grid, &class, LossKind::Mml)?;
        println!(
            "alpha* = {alpha_star}: vaml picks {:.2}, mml picks {:.2}",
            alphas[vaml.chosen], alphas[mml.chosen]
        );
    }
    Ok(())
}

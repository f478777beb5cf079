//! Error added when the adversary class cannot represent the exact weight and value.

use mmllab::classes::FunctionClassHandle;
use mmllab::losses::{AdversaryPair, LossContext};
use mmllab::mdp::{density_ratio, solve_occupancy, solve_value_function, Policy, TabularMdp, TransitionModel, ValueFunction, WeightFunction};
use mmllab::minimax::misspec_gap;
use mmllab::rng::seeded;
use rand::Rng as _;

fn main() -> mmllab::Result<()> {
    let mut rng = seeded(21);
    let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
    let (behavior, target) = (Policy::uniform(3, 2), Policy::random(3, 2, &mut rng));
    let ctx = LossContext::exact(&mdp, &behavior)?;
    let data_sa = ctx.sa_mass().to_vec();
    let grid: Vec<_> = (0..4).map(|_| TransitionModel::random(3, 2, &mut rng)).collect();
    let w_true = density_ratio(&solve_occupancy(&mdp, &target, mdp.transition())?, &data_sa)?;
    let v_true = solve_value_function(&mdp, &target, mdp.transition())?;
    let targets = grid
        .iter()
        .map(|m| {
            let w = density_ratio(&solve_occupancy(&mdp, &target, m)?, &data_sa)?;
            Ok(vec![
                AdversaryPair::new(w_true.clone(), solve_value_function(&mdp, &target, m)?)?,
                AdversaryPair::new(w, v_true.clone())?,
            ])
        })
        .collect::<mmllab::Result<Vec<_>>>()?;
    let pool = (0..10)
        .map(|_| {
            let w = WeightFunction::new(3, 2, (0..6).map(|_| rng.random::<f64>() * 2.0).collect())?;
            AdversaryPair::new(w, ValueFunction::new((0..3).map(|_| rng.random::<f64>() * 10.0).collect()))
        })
        .collect::<mmllab::Result<Vec<_>>>()?;
    // nested classes: the gap can only shrink as pairs are added
    for size in [1, 3, 10] {
        let class = FunctionClassHandle::finite_grid(pool[..size].to_vec())?;
        println!("restricted class of {size:>2} pairs: gap {:.4}", misspec_gap(&ctx, &grid, &class, &targets)?);
    }
    Ok(())
}

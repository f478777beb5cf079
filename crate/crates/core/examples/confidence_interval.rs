//! Interval on the target value from a model grid and exact adversary pairs.

use mmllab::ci::ci_bounds_pairs;
use mmllab::losses::{AdversaryPair, LossContext};
use mmllab::mdp::{density_ratio, evaluate_policy, solve_occupancy, solve_value_function, Policy, TabularMdp, TransitionModel};
use mmllab::rng::seeded;

fn main() -> mmllab::Result<()> {
    let mut rng = seeded(8);
    let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
    let (behavior, target) = (Policy::uniform(3, 2), Policy::random(3, 2, &mut rng));
    let ctx = LossContext::exact(&mdp, &behavior)?;
    let data_sa = ctx.sa_mass().to_vec();
    let mut grid: Vec<_> = (0..4).map(|_| TransitionModel::random(3, 2, &mut rng)).collect();
    grid.push(mdp.transition().clone());
    let v_true = solve_value_function(&mdp, &target, mdp.transition())?;
    let pairs = grid
        .iter()
        .map(|m| AdversaryPair::new(density_ratio(&solve_occupancy(&mdp, &target, m)?, &data_sa)?, v_true.clone()))
        .collect::<mmllab::Result<Vec<_>>>()?;
    let j = evaluate_policy(&mdp, &target, mdp.transition())?;
    let ci = ci_bounds_pairs(&ctx, mdp.gamma(), &grid, &pairs)?.with_truth(j);
    println!("[{:.4}, {:.4}] contains J = {j:.4}: {}", ci.lower, ci.upper, ci.contains(j, 1e-9));
    Ok(())
}

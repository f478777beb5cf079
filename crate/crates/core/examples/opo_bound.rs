//! Planning in the min-max model stays within twice the worst scaled loss of optimal.

use mmllab::classes::{FunctionClassHandle, TabularBall};
use mmllab::losses::LossKind;
use mmllab::mdp::{Policy, TabularMdp, TransitionModel};
use mmllab::ope::{run_ope, run_opo, ModelClass, OpeProblem, OpoProblem, Realizability, Sampling};
use mmllab::rng::seeded;

fn main() -> mmllab::Result<()> {
    let mut rng = seeded(3);
    let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
    let behavior = Policy::uniform(4, 2);
    let target = Policy::random(4, 2, &mut rng);
    let grid = ModelClass::Grid((0..6).map(|_| TransitionModel::random(4, 2, &mut rng)).collect());
    let adversaries = FunctionClassHandle::TabularBall(TabularBall::new(4, 2, 1.0)?);
    for loss_kind in [LossKind::Mml, LossKind::Mle] {
        let ope = run_ope(&OpeProblem {
            mdp: &mdp,
            behavior: &behavior,
            target: &target,
            model_class: &grid,
            adversaries: &adversaries,
            loss_kind,
            realizability: Realizability::ExactInjected,
            sampling: Sampling::Exact,
            seed: 0,
        })?;
        let opo = run_opo(&OpoProblem {
            mdp: &mdp,
            behavior: &behavior,
            model_class: &grid,
            adversaries: &adversaries,
            loss_kind,
            realizability: Realizability::ExactInjected,
            sampling: Sampling::Exact,
            seed: 0,
        })?;
        println!(
            "{:<4} ope |error| {:.4} <= {:.4}   opo suboptimality {:.4} <= {:.4}",
            loss_kind.as_str(),
            ope.abs_error,
            ope.bound,
            opo.suboptimality,
            opo.bound
        );
    }
    Ok(())
}

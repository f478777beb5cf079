//! Squared MML maximum over an RKHS unit ball for the true and a random model.

use mmllab::mdp::{generate_dataset, Policy, TabularMdp, TransitionModel};
use mmllab::rkhs::{rkhs_max_mml_sq, rkhs_max_vaml, Embedding, KernelSpec, ModelExpectation};
use mmllab::rng::seeded;

fn main() -> mmllab::Result<()> {
    let mut rng = seeded(9);
    let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
    let data = generate_dataset(&mdp, &Policy::uniform(4, 2), 200, 10, 9)?;
    let kernel = KernelSpec::product(Embedding::index(4), Embedding::index(2), 1.0, 1.0, 1.0)?;
    let wrong = TransitionModel::random(4, 2, &mut rng);
    for (name, model) in [("truth", mdp.transition()), ("random", &wrong)] {
        println!(
            "{name:<6} max L^2 = {:.6}  vaml = {:.6}",
            rkhs_max_mml_sq(&data, &kernel, model, ModelExpectation::Exact)?,
            rkhs_max_vaml(&data, &kernel, model, ModelExpectation::Exact)?
        );
    }
    Ok(())
}

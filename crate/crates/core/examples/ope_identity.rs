//! Both forms of the evaluation-error identity on a random MDP and model.

use mmllab::losses::{ope_error_identity, IdentityVariant};
use mmllab::mdp::{Policy, TabularMdp, TransitionModel};
use mmllab::rng::seeded;

fn main() -> mmllab::Result<()> {
    let mut rng = seeded(1);
    let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
    let target = Policy::random(5, 3, &mut rng);
    let behavior = Policy::uniform(5, 3);
    let model = TransitionModel::random(5, 3, &mut rng);
    for variant in [IdentityVariant::TrueWeightModelValue, IdentityVariant::ModelWeightTrueValue] {
        let (error, scaled_loss) = ope_error_identity(&mdp, &target, &behavior, &model, variant)?;
        println!("{variant:?}: J(P) - J* = {error:+.12}  gamma * L = {scaled_loss:+.12}");
    }
    Ok(())
}

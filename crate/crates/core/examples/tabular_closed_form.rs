//! The count-based closed form and the general linear solve agree on the tabular span.

use mmllab::classes::{solve_linear_closed_form, solve_tabular, LinearClass};
use mmllab::losses::LossContext;
use mmllab::mdp::{generate_dataset, Policy, TabularMdp};
use mmllab::rng::seeded;

fn main() -> mmllab::Result<()> {
    let mdp = TabularMdp::random(3, 2, 0.9, &mut seeded(5));
    let data = generate_dataset(&mdp, &Policy::uniform(3, 2), 400, 20, 5)?;
    let counts = solve_tabular(&data, 3, 2)?;
    let alpha = solve_linear_closed_form(&data, &LinearClass::tabular(3, 2))?;
    let gap = counts.as_slice().iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |count estimate - linear solve| = {gap:.2e}");
    let ctx = LossContext::empirical(&data);
    println!("empirical NLL: counts {:.6}  truth {:.6}", ctx.mle(&counts)?, ctx.mle(mdp.transition())?);
    Ok(())
}

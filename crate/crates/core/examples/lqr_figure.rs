//! Model selection on the scalar linear-quadratic grid as the grid widens.

use mmllab::losses::LossKind;
use mmllab::lqr::{figure_system, lqr_model_selection, LqrSelectionConfig};

fn main() -> mmllab::Result<()> {
    let system = figure_system();
    println!("loss     M  chosen  ope_error   linear_reward_error");
    for kind in [LossKind::Mml, LossKind::Mle, LossKind::VamlL2] {
        let rows = lqr_model_selection(&system, &LqrSelectionConfig::figure(kind, 19))?;
        for r in rows {
            println!(
                "{:<7} {:>2}  {:>6}  {:.6}   {:.6}",
                kind.as_str(),
                r.m,
                r.chosen,
                r.ope_error,
                r.linear_reward_error
            );
        }
    }
    Ok(())
}

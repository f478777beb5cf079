//! Pessimistic planning over an ensemble fitted by MML or MLE on the ladder fixture.

use mmllab::losses::LossKind;
use mmllab::mdp::{load_model_grid, Policy, TabularMdp};
use mmllab::morel::{run_opo_morel, value_adversaries, AlphaRule, MemberClass, MorelConfig, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PENALTY};

fn main() -> mmllab::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mdp = TabularMdp::load(format!("{dir}/six_state_ladder.json"))?;
    let grid = load_model_grid(format!("{dir}/six_state_ladder_grid.json"))?;
    let behavior = Policy::uniform(6, 2);
    let adversaries = value_adversaries(&mdp, &grid, &behavior)?;
    for seed in 0..5 {
        let mut line = format!("seed {seed}:");
        for loss_kind in [LossKind::Mml, LossKind::Mle] {
            let config = MorelConfig {
                member_class: MemberClass::Grid { models: grid.clone(), adversaries: adversaries.clone() },
                loss_kind,
                ensemble_size: DEFAULT_ENSEMBLE_SIZE,
                n_transitions: 16,
                episode_length: 8,
                penalty: DEFAULT_PENALTY,
                alpha: AlphaRule::Median,
                seed,
            };
            let report = run_opo_morel(&mdp, &behavior, &config)?;
            line += &format!("  {} J = {:.4} ({} flagged)", loss_kind.as_str(), report.j_policy, report.n_flagged);
        }
        println!("{line}");
    }
    Ok(())
}

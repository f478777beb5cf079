//! Noisy adversary evaluations: OPE error of the MML choice as noise grows.

use mmllab::losses::LossKind;
use mmllab::lqr::{figure_system, lqr_model_selection, LqrSelectionConfig};

fn main() -> mmllab::Result<()> {
    let system = figure_system();
    let seeds = 5;
    for eps in [0.0, 0.5, 1.0, 2.0] {
        let mut mean = [0.0; 18];
        for seed in 0..seeds {
            let mut config = LqrSelectionConfig::figure(LossKind::Mml, 19);
            config.v_noise_eps = eps;
            config.seed = seed;
            for (i, row) in lqr_model_selection(&system, &config)?.iter().enumerate() {
                mean[i] += row.ope_error / seeds as f64;
            }
        }
        let cells: Vec<String> = mean.iter().map(|e| format!("{e:.4}")).collect();
        println!("eps={eps:<4} M=2..19: {}", cells.join(" "));
    }
    Ok(())
}

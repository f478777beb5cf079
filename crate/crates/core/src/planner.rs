//! Exact planning in a tabular model.

use crate::error::{invalid, Error, Result};
use crate::mdp::{solve_value_function, Policy, TabularMdp, TransitionModel};

/// Sup-norm residual at which value iteration stops.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 10_000_000;
const MAX_IMPROVEMENTS: usize = 10_000;

fn q_value(mdp: &TabularMdp, model: &TransitionModel, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.reward(s, a) + mdp.gamma() * model.expect(s, a, v)
}

/// First action with the largest Q value.
fn greedy(mdp: &TabularMdp, model: &TransitionModel, v: &[f64]) -> Vec<usize> {
    (0..mdp.n_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = q_value(mdp, model, v, s, 0);
            for a in 1..mdp.n_actions() {
                let q = q_value(mdp, model, v, s, a);
                if q > best_q {
                    best = a;
                    best_q = q;
                }
            }
            best
        })
        .collect()
}

/// Value iteration in `model` to residual `tol`, then a greedy policy.
///
/// The greedy policy is polished by exact policy iteration so that a loose
/// `tol` cannot leave it suboptimal near ties; an action only replaces the
/// incumbent when it is better by more than round-off.
pub fn plan_optimal(mdp: &TabularMdp, model: &TransitionModel, tol: f64) -> Result<Policy> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance", format!("{tol} must be positive")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if model.n_states() != ns || model.n_actions() != na {
        return Err(Error::Dimension("planning model shape".into()));
    }
    let mut v = vec![0.0; ns];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| q_value(mdp, model, &v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("value iteration did not converge".into()));
    }
    let mut actions = greedy(mdp, model, &v);
    let planning = mdp.with_transition(model.clone())?;
    for _ in 0..MAX_IMPROVEMENTS {
        let policy = Policy::deterministic(na, &actions)?;
        let v = solve_value_function(&planning, &policy, model)?;
        let v = v.values();
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            let mut best_q = q_value(mdp, model, v, s, *current);
            for a in 0..na {
                let q = q_value(mdp, model, v, s, a);
                if q > best_q + 1e-12 * best_q.abs().max(1.0) {
                    *current = a;
                    best_q = q;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(policy);
        }
    }
    Err(Error::Numerical("policy improvement did not settle".into()))
}

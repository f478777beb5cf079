use nalgebra::{DMatrix, DVector};

use super::{OccupancyMeasure, Policy, TabularMdp, TransitionModel, ValueFunction, WeightFunction};
use crate::error::{Error, Result};

fn check_dims(mdp: &TabularMdp, policy: &Policy, model: &TransitionModel) -> Result<()> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, mdp is {ns}x{na}",
            policy.n_states(),
            policy.n_actions()
        )));
    }
    if model.n_states() != ns || model.n_actions() != na {
        return Err(Error::Dimension(format!(
            "model is {}x{}, mdp is {ns}x{na}",
            model.n_states(),
            model.n_actions()
        )));
    }
    Ok(())
}

/// State-to-state kernel `P_pi` and reward vector `r_pi`.
fn policy_dynamics(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
) -> (DMatrix<f64>, DVector<f64>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            r[s] += pa * mdp.reward(s, a);
            for (x, q) in model.row(s, a).iter().enumerate() {
                p[(s, x)] += pa * q;
            }
        }
    }
    (p, r)
}

/// Solves `(I - gamma P_pi) V = r_pi`.
pub fn solve_value_function(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
) -> Result<ValueFunction> {
    check_dims(mdp, policy, model)?;
    let (p, r) = policy_dynamics(mdp, policy, model);
    let ns = mdp.n_states();
    let system = DMatrix::identity(ns, ns) - p * mdp.gamma();
    let v = system
        .lu()
        .solve(&r)
        .ok_or(Error::Singular("value function"))?;
    Ok(ValueFunction::new(v.iter().copied().collect()))
}

/// Solves the state marginal `mu = d0 + gamma P_pi^T mu`, then `d(s, a) = mu(s) pi(a|s)`.
pub fn solve_occupancy(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
) -> Result<OccupancyMeasure> {
    check_dims(mdp, policy, model)?;
    let (p, _) = policy_dynamics(mdp, policy, model);
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let system = DMatrix::identity(ns, ns) - p.transpose() * mdp.gamma();
    let d0 = DVector::from_column_slice(mdp.d0());
    let mu = system
        .lu()
        .solve(&d0)
        .ok_or(Error::Singular("occupancy"))?;
    let mut mass = Vec::with_capacity(ns * na);
    for s in 0..ns {
        // round-off can leave a tiny negative marginal
        let m = mu[s].max(0.0);
        mass.extend(policy.row(s).iter().map(|pa| m * pa));
    }
    OccupancyMeasure::new(ns, na, mass)
}

/// `J(pi, P) = E_{d0}[V]`; the occupancy form `sum d * r` is cross-checked in debug builds.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy, model: &TransitionModel) -> Result<f64> {
    let v = solve_value_function(mdp, policy, model)?;
    let j: f64 = mdp.d0().iter().zip(v.values()).map(|(p, v)| p * v).sum();
    #[cfg(debug_assertions)]
    {
        let d = solve_occupancy(mdp, policy, model)?;
        let alt: f64 = d.mass().iter().zip(mdp.reward_mean()).map(|(d, r)| d * r).sum();
        debug_assert!(
            (j - alt).abs() <= 1e-9 * j.abs().max(1.0),
            "value form {j} vs occupancy form {alt}"
        );
    }
    Ok(j)
}

/// Behavior data law `D(s, a)`: the behavior occupancy under `P*` scaled to mass 1.
pub fn behavior_distribution(mdp: &TabularMdp, behavior: &Policy) -> Result<Vec<f64>> {
    let d = solve_occupancy(mdp, behavior, mdp.transition())?;
    let scale = 1.0 - mdp.gamma();
    Ok(d.mass().iter().map(|m| m * scale).collect())
}

/// `w = d / data_sa` on the support of `data_sa`, zero off it.
pub fn density_ratio(occupancy: &OccupancyMeasure, data_sa: &[f64]) -> Result<WeightFunction> {
    let (ns, na) = (occupancy.n_states(), occupancy.n_actions());
    if data_sa.len() != ns * na {
        return Err(Error::Dimension("data distribution".into()));
    }
    let mut values = Vec::with_capacity(ns * na);
    for (i, (&d, &q)) in occupancy.mass().iter().zip(data_sa).enumerate() {
        if q > 0.0 {
            values.push(d / q);
        } else if d > 0.0 {
            return Err(Error::Support {
                state: i / na,
                action: i % na,
                occupancy: d,
            });
        } else {
            values.push(0.0);
        }
    }
    WeightFunction::new(ns, na, values)
}

/// `max_s |V(s) - r_pi(s) - gamma (P_pi V)(s)|`.
pub fn bellman_residual(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
    v: &ValueFunction,
) -> Result<f64> {
    check_dims(mdp, policy, model)?;
    let (p, r) = policy_dynamics(mdp, policy, model);
    let v = DVector::from_column_slice(v.values());
    let res = &v - r - p * &v * mdp.gamma();
    Ok(res.amax())
}

/// `max_{s,a} |d(s,a) - d0(s)pi(a|s) - gamma sum d(s~,a~) P(s|s~,a~) pi(a|s)|`.
pub fn occupancy_residual(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
    d: &OccupancyMeasure,
) -> Result<f64> {
    check_dims(mdp, policy, model)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut inflow = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            for (x, q) in model.row(s, a).iter().enumerate() {
                inflow[x] += d.get(s, a) * q;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let rhs = (mdp.d0()[s] + mdp.gamma() * inflow[s]) * policy.prob(s, a);
            worst = worst.max((d.get(s, a) - rhs).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn chain(gamma: f64) -> TabularMdp {
        let p = TransitionModel::deterministic(2, 1, &[1, 1]).unwrap();
        TabularMdp::new(p, vec![0.0, 1.0], 1.0, gamma, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn chain_values() {
        let mdp = chain(0.5);
        let pi = Policy::uniform(2, 1);
        let v = solve_value_function(&mdp, &pi, mdp.transition()).unwrap();
        assert!((v.get(0) - 1.0).abs() < 1e-12);
        assert!((v.get(1) - 2.0).abs() < 1e-12);
        assert!((evaluate_policy(&mdp, &pi, mdp.transition()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_state_geometric() {
        let p = TransitionModel::deterministic(1, 1, &[0]).unwrap();
        let mdp = TabularMdp::new(p, vec![1.0], 1.0, 0.5, vec![1.0]).unwrap();
        let v = solve_value_function(&mdp, &Policy::uniform(1, 1), mdp.transition()).unwrap();
        assert!((v.get(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_is_myopic() {
        let mut rng = seeded(11);
        let mdp = TabularMdp::random(3, 2, 0.0, &mut rng);
        let pi = Policy::random(3, 2, &mut rng);
        let v = solve_value_function(&mdp, &pi, mdp.transition()).unwrap();
        let d = solve_occupancy(&mdp, &pi, mdp.transition()).unwrap();
        for s in 0..3 {
            let r: f64 = (0..2).map(|a| pi.prob(s, a) * mdp.reward(s, a)).sum();
            assert!((v.get(s) - r).abs() < 1e-15);
            for a in 0..2 {
                assert!((d.get(s, a) - mdp.d0()[s] * pi.prob(s, a)).abs() < 1e-15);
            }
        }
    }

    /// Truncated power series `sum_{t <= horizon} gamma^t d_t`.
    fn occupancy_series(mdp: &TabularMdp, pi: &Policy, horizon: usize) -> Vec<f64> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut state = mdp.d0().to_vec();
        let mut total = vec![0.0; ns * na];
        let mut discount = 1.0;
        for _ in 0..=horizon {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let m = state[s] * pi.prob(s, a);
                    total[s * na + a] += discount * m;
                    for x in 0..ns {
                        next[x] += m * mdp.transition().prob(s, a, x);
                    }
                }
            }
            state = next;
            discount *= mdp.gamma();
        }
        total
    }

    #[test]
    fn chain_occupancy_matches_series() {
        let mdp = chain(0.5);
        let pi = Policy::uniform(2, 1);
        let d = solve_occupancy(&mdp, &pi, mdp.transition()).unwrap();
        let series = occupancy_series(&mdp, &pi, 60);
        assert!((d.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((d.get(1, 0) - 1.0).abs() < 1e-12);
        for (a, b) in d.mass().iter().zip(&series) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn random_occupancy_matches_series() {
        let mut rng = seeded(5);
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 2, 0.7, &mut rng);
            let pi = Policy::random(4, 2, &mut rng);
            let d = solve_occupancy(&mdp, &pi, mdp.transition()).unwrap();
            // 0.7^120 is far below 1e-9
            for (a, b) in d.mass().iter().zip(&occupancy_series(&mdp, &pi, 120)) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((d.total() - 1.0 / 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_reward_value() {
        let mut rng = seeded(2);
        let p = TransitionModel::random(3, 2, &mut rng);
        let mdp = TabularMdp::new(p, vec![0.3; 6], 1.0, 0.9, vec![0.2, 0.3, 0.5]).unwrap();
        let j = evaluate_policy(&mdp, &Policy::uniform(3, 2), mdp.transition()).unwrap();
        assert!((j - 3.0).abs() < 1e-12);
    }

    #[test]
    fn density_ratio_conventions() {
        let d = OccupancyMeasure::new(1, 2, vec![2.0, 0.0]).unwrap();
        let w = density_ratio(&d, &[1.0, 0.0]).unwrap();
        assert_eq!(w.values(), &[2.0, 0.0]);
        let err = density_ratio(&d, &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Support { state: 0, action: 0, .. }));
        let scaled = OccupancyMeasure::new(1, 2, vec![0.25 / 0.1, 0.75 / 0.1]).unwrap();
        let w = density_ratio(&scaled, &[0.25, 0.75]).unwrap();
        assert!(w.values().iter().all(|v| (v - 10.0).abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mdp = chain(0.5);
        let pi = Policy::uniform(3, 1);
        assert!(matches!(
            solve_value_function(&mdp, &pi, mdp.transition()),
            Err(Error::Dimension(_))
        ));
    }
}

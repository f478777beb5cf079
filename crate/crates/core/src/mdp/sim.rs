use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use super::{Dataset, Policy, TabularMdp, Transition, TransitionModel};
use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, Rng};

/// Precomputed categorical samplers for one `(mdp, policy, model)` triple.
struct Sampler {
    start: WeightedIndex<f64>,
    actions: Vec<WeightedIndex<f64>>,
    next: Vec<WeightedIndex<f64>>,
    n_actions: usize,
}

impl Sampler {
    fn new(mdp: &TabularMdp, policy: &Policy, model: &TransitionModel) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        if policy.n_states() != ns || policy.n_actions() != na {
            return Err(Error::Dimension("policy shape differs from mdp".into()));
        }
        if model.n_states() != ns || model.n_actions() != na {
            return Err(Error::Dimension("model shape differs from mdp".into()));
        }
        let cat = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::Numerical(format!("categorical sampler: {e}")))
        };
        Ok(Self {
            start: cat(mdp.d0())?,
            actions: (0..ns).map(|s| cat(policy.row(s))).collect::<Result<_>>()?,
            next: (0..ns * na)
                .map(|sa| cat(model.row(sa / na, sa % na)))
                .collect::<Result<_>>()?,
            n_actions: na,
        })
    }

    fn start(&self, rng: &mut Rng) -> usize {
        self.start.sample(rng)
    }

    fn step(&self, s: usize, rng: &mut Rng) -> (usize, usize) {
        let a = self.actions[s].sample(rng);
        let x = self.next[s * self.n_actions + a].sample(rng);
        (a, x)
    }
}

/// Mean discounted return over rollouts and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `J_{T,m}`: average over `n_rollouts` of `sum_{t=0}^{horizon} gamma^t r_t`.
pub fn monte_carlo_estimate(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if horizon == 0 || n_rollouts == 0 {
        return Err(invalid("rollout budget", "horizon and n_rollouts must be positive"));
    }
    let sampler = Sampler::new(mdp, policy, model)?;
    let mut rng = seeded(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_rollouts {
        let mut s = sampler.start(&mut rng);
        let (mut ret, mut discount) = (0.0, 1.0);
        for _ in 0..=horizon {
            let (a, x) = sampler.step(s, &mut rng);
            ret += discount * mdp.reward(s, a);
            discount *= mdp.gamma();
            s = x;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let m = n_rollouts as f64;
    let mean = sum / m;
    let var = if n_rollouts > 1 {
        ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / m).sqrt(),
    })
}

pub fn monte_carlo_return(
    mdp: &TabularMdp,
    policy: &Policy,
    model: &TransitionModel,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<f64> {
    monte_carlo_estimate(mdp, policy, model, horizon, n_rollouts, seed).map(|e| e.mean)
}

/// Logs `n_transitions` steps of `behavior` in `mdp`, restarting from `d0`
/// every `episode_length` steps.
pub fn generate_dataset(
    mdp: &TabularMdp,
    behavior: &Policy,
    n_transitions: usize,
    episode_length: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_transitions == 0 || episode_length == 0 {
        return Err(invalid("dataset size", "n_transitions and episode_length must be positive"));
    }
    let sampler = Sampler::new(mdp, behavior, mdp.transition())?;
    let mut rng = seeded(seed);
    let mut records = Vec::with_capacity(n_transitions);
    let mut episode = 0u64;
    'outer: loop {
        let mut s = sampler.start(&mut rng);
        for _ in 0..episode_length {
            let (a, x) = sampler.step(s, &mut rng);
            records.push(Transition {
                s,
                a,
                s_next: x,
                r: mdp.reward(s, a),
                episode,
            });
            if records.len() == n_transitions {
                break 'outer;
            }
            s = x;
        }
        episode += 1;
    }
    Dataset::new(mdp.n_states(), mdp.n_actions(), records)
}

//! Pessimistic-MDP optimization from a bootstrap ensemble: pairs where the
//! members disagree are redirected to an absorbing state that pays a penalty
//! on every step.

use rayon::prelude::*;

use crate::classes::{solve_tabular_or, FunctionClassHandle};
use crate::error::{invalid, Error, Result};
use crate::losses::{AdversaryPair, LossContext, LossKind};
use crate::mdp::{
    evaluate_policy, generate_dataset, solve_value_function, Dataset, Policy, TabularMdp, TransitionModel,
    WeightFunction, PROB_TOL,
};
use crate::minimax::minimize_finite;
use crate::planner::{plan_optimal, DEFAULT_TOL};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_PENALTY: f64 = -100.0;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 4;

/// Disagreement threshold rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaRule {
    /// Median over records and members of `TV(P_j(.|s,a), delta_{s'}) = 1 - P_j(s'|s,a)`.
    Median,
    /// `f64::INFINITY` disables flagging.
    Fixed(f64),
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PessimisticMdp {
    /// Ensemble-mean dynamics over the original states.
    pub base: TabularMdp,
    /// Row-major `[s * n_actions + a]` flags.
    pub usad: Vec<bool>,
    pub halt_penalty: f64,
    pub alpha: f64,
    /// Equal to the number of original states.
    pub absorbing_state: usize,
    /// Disagreement `max_i TV(P_i, mean)` per pair.
    pub disagreement: Vec<f64>,
    augmented: TabularMdp,
}

impl PessimisticMdp {
    /// Dynamics over `n_states + 1` states, the last one absorbing.
    pub fn augmented(&self) -> &TabularMdp {
        &self.augmented
    }

    pub fn n_flagged(&self) -> usize {
        self.usad.iter().filter(|f| **f).count()
    }

    pub fn is_flagged(&self, s: usize, a: usize) -> bool {
        self.usad[s * self.base.n_actions() + a]
    }

    /// Extends `policy` to the absorbing state with the uniform row.
    pub fn extend_policy(&self, policy: &Policy) -> Result<Policy> {
        let na = self.base.n_actions();
        if policy.n_states() != self.absorbing_state || policy.n_actions() != na {
            return Err(Error::Dimension("policy shape differs from the base dynamics".into()));
        }
        let mut probs = policy.as_slice().to_vec();
        probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        Policy::new(self.absorbing_state + 1, na, probs)
    }

    pub fn value(&self, policy: &Policy) -> Result<f64> {
        let extended = self.extend_policy(policy)?;
        evaluate_policy(&self.augmented, &extended, self.augmented.transition())
    }

    /// Optimal policy of the pessimistic MDP restricted to the original states.
    pub fn plan(&self) -> Result<Policy> {
        let full = plan_optimal(&self.augmented, self.augmented.transition(), DEFAULT_TOL)?;
        let na = self.base.n_actions();
        let actions: Vec<usize> = (0..self.absorbing_state)
            .map(|s| (0..na).find(|&a| full.prob(s, a) == 1.0).unwrap_or(0))
            .collect();
        Policy::deterministic(na, &actions)
    }
}

/// Mean of the ensemble rows.
pub fn ensemble_mean(ensemble: &[TransitionModel]) -> Result<TransitionModel> {
    let first = ensemble.first().ok_or(Error::Empty("ensemble"))?;
    let (ns, na) = (first.n_states(), first.n_actions());
    let mut probs = vec![0.0; ns * na * ns];
    for m in ensemble {
        if m.n_states() != ns || m.n_actions() != na {
            return Err(Error::Dimension("ensemble members differ in shape".into()));
        }
        for (p, q) in probs.iter_mut().zip(m.as_slice()) {
            *p += q;
        }
    }
    let e = ensemble.len() as f64;
    for p in &mut probs {
        *p /= e;
    }
    TransitionModel::new(ns, na, probs)
}

/// Median of `1 - P_j(s'|s,a)` over records and members; even counts average the middle pair.
pub fn median_alpha(ensemble: &[TransitionModel], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut residuals: Vec<f64> = data
        .records()
        .iter()
        .flat_map(|t| ensemble.iter().map(move |m| 1.0 - m.prob(t.s, t.a, t.s_next)))
        .collect();
    if residuals.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    residuals.sort_by(f64::total_cmp);
    let n = residuals.len();
    Ok(if n % 2 == 1 {
        residuals[n / 2]
    } else {
        0.5 * (residuals[n / 2 - 1] + residuals[n / 2])
    })
}

/// Flags `(s, a)` when `max_i TV(P_i, mean) >= alpha`; disagreement within round-off is never flagged.
pub fn build_pessimistic_mdp(
    ensemble: &[TransitionModel],
    data: &Dataset,
    penalty: f64,
    mdp: &TabularMdp,
    alpha_rule: AlphaRule,
) -> Result<PessimisticMdp> {
    if ensemble.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !penalty.is_finite() {
        return Err(invalid("penalty", format!("{penalty} is not finite")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mean = ensemble_mean(ensemble)?;
    if mean.n_states() != ns || mean.n_actions() != na {
        return Err(Error::Dimension("ensemble and reward table differ in shape".into()));
    }
    let alpha = match alpha_rule {
        AlphaRule::Median => median_alpha(ensemble, data)?,
        AlphaRule::Fixed(a) if a.is_nan() => return Err(invalid("alpha", "NaN")),
        AlphaRule::Fixed(a) => a,
    };
    let mut disagreement = Vec::with_capacity(ns * na);
    let mut usad = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let d = ensemble
                .iter()
                .map(|m| total_variation(m.row(s, a), mean.row(s, a)))
                .fold(0.0, f64::max);
            disagreement.push(d);
            usad.push(d > PROB_TOL && d >= alpha);
        }
    }

    let halt = ns;
    let n_aug = ns + 1;
    let mut probs = Vec::with_capacity(n_aug * na * n_aug);
    let mut rewards = Vec::with_capacity(n_aug * na);
    for s in 0..ns {
        for a in 0..na {
            if usad[s * na + a] {
                probs.extend(std::iter::repeat_n(0.0, ns));
                probs.push(1.0);
                rewards.push(penalty);
            } else {
                probs.extend_from_slice(mean.row(s, a));
                probs.push(0.0);
                rewards.push(mdp.reward(s, a));
            }
        }
    }
    for _ in 0..na {
        probs.extend(std::iter::repeat_n(0.0, ns));
        probs.push(1.0);
        rewards.push(penalty);
    }
    let mut d0 = mdp.d0().to_vec();
    d0.push(0.0);
    let augmented = TabularMdp::new(
        TransitionModel::new(n_aug, na, probs)?,
        rewards,
        mdp.r_max().max(penalty.abs()),
        mdp.gamma(),
        d0,
    )?;
    Ok(PessimisticMdp {
        base: mdp.with_transition(mean)?,
        usad,
        halt_penalty: penalty,
        alpha,
        absorbing_state: halt,
        disagreement,
        augmented,
    })
}

/// Pairs `(w, V)` with `w` constant or an action indicator and `V` the value of each
/// grid model under its own planned policy and under `behavior`.
pub fn value_adversaries(mdp: &TabularMdp, models: &[TransitionModel], behavior: &Policy) -> Result<FunctionClassHandle> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut weights = vec![WeightFunction::constant(ns, na, 1.0)];
    for a in 0..na {
        let w = (0..ns * na).map(|i| if i % na == a { 1.0 } else { 0.0 }).collect();
        weights.push(WeightFunction::new(ns, na, w)?);
    }
    let mut pairs = Vec::new();
    for m in models {
        let planned = plan_optimal(&mdp.with_transition(m.clone())?, m, DEFAULT_TOL)?;
        for policy in [&planned, behavior] {
            let v = solve_value_function(mdp, policy, m)?;
            for w in &weights {
                pairs.push(AdversaryPair::new(w.clone(), v.clone())?);
            }
        }
    }
    FunctionClassHandle::finite_grid(pairs)
}

/// How each ensemble member is fit to its resample.
#[derive(Clone, Debug)]
pub enum MemberClass {
    Grid {
        models: Vec<TransitionModel>,
        adversaries: FunctionClassHandle,
    },
    /// Counts; pairs missing from a resample take a member-specific random row.
    Tabular,
}

#[derive(Clone, Debug)]
pub struct MorelConfig {
    pub member_class: MemberClass,
    pub loss_kind: LossKind,
    pub ensemble_size: usize,
    pub n_transitions: usize,
    pub episode_length: usize,
    pub penalty: f64,
    pub alpha: AlphaRule,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorelReport {
    pub j_policy: f64,
    pub j_behavior: f64,
    pub j_optimal: f64,
    pub alpha: f64,
    pub n_flagged: usize,
    pub policy: Policy,
    /// Grid index picked by each member, when fitting over a grid.
    pub member_choices: Vec<Option<usize>>,
}

/// Fits `ensemble_size` members on bootstrap resamples of `data`.
pub fn fit_ensemble(
    data: &Dataset,
    class: &MemberClass,
    loss_kind: LossKind,
    ensemble_size: usize,
    seed: u64,
) -> Result<Vec<(TransitionModel, Option<usize>)>> {
    if ensemble_size == 0 {
        return Err(Error::Empty("ensemble"));
    }
    let (ns, na) = (data.n_states(), data.n_actions());
    (0..ensemble_size)
        .into_par_iter()
        .map(|member| {
            let mut rng = seeded(derive_seed(seed, &[member as u64, 1]));
            let sample = data.bootstrap(&mut rng);
            match class {
                MemberClass::Grid {
                    models,
                    adversaries,
                } => {
                    let sel = minimize_finite(&LossContext::empirical(&sample), models, adversaries, loss_kind)?;
                    Ok((models[sel.chosen].clone(), Some(sel.chosen)))
                }
                MemberClass::Tabular => {
                    let fallback = TransitionModel::random(ns, na, &mut rng);
                    Ok((solve_tabular_or(&sample, &fallback)?, None))
                }
            }
        })
        .collect()
}

pub fn run_opo_morel(mdp: &TabularMdp, behavior: &Policy, config: &MorelConfig) -> Result<MorelReport> {
    let data = generate_dataset(mdp, behavior, config.n_transitions, config.episode_length, config.seed)?;
    run_opo_morel_on(mdp, behavior, &data, config)
}

pub fn run_opo_morel_on(mdp: &TabularMdp, behavior: &Policy, data: &Dataset, config: &MorelConfig) -> Result<MorelReport> {
    let fitted = fit_ensemble(data, &config.member_class, config.loss_kind, config.ensemble_size, config.seed)?;
    let (ensemble, member_choices): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let pessimistic = build_pessimistic_mdp(&ensemble, data, config.penalty, mdp, config.alpha)?;
    let policy = pessimistic.plan()?;
    let truth = mdp.transition();
    let optimal = plan_optimal(mdp, truth, DEFAULT_TOL)?;
    Ok(MorelReport {
        j_policy: evaluate_policy(mdp, &policy, truth)?,
        j_behavior: evaluate_policy(mdp, behavior, truth)?,
        j_optimal: evaluate_policy(mdp, &optimal, truth)?,
        alpha: pessimistic.alpha,
        n_flagged: pessimistic.n_flagged(),
        policy,
        member_choices,
    })
}

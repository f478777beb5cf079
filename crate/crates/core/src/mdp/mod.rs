//! Tabular MDPs, policies, models and the exact objects solved on them.
//!
//! Tables are stored row-major: `(s, a)` at `s * n_actions + a` and
//! `(s, a, s')` at `(s * n_actions + a) * n_states + s'`.

mod io;
mod sim;
mod solve;

pub use io::{load_model_grid, model_grid_to_json, MdpDocument, ModelGridDocument};
pub use sim::{generate_dataset, monte_carlo_estimate, monte_carlo_return, MonteCarloEstimate};
pub use solve::{
    behavior_distribution, bellman_residual, density_ratio, evaluate_policy, occupancy_residual,
    solve_occupancy, solve_value_function,
};

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Row sums of stochastic tables must be within this of 1.
pub const PROB_TOL: f64 = 1e-12;

fn check_distribution(what: &'static str, row: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(what, format!("entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(what, format!("row sums to {sum}")));
    }
    Ok(())
}

fn random_simplex(rng: &mut Rng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Candidate dynamics `P(s' | s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionModel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("transition model", "empty state or action space"));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            )));
        }
        for row in probs.chunks(n_states) {
            check_distribution("transition model", row)?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for per_state in rows {
            if per_state.len() != n_actions {
                return Err(Error::Dimension("ragged transition actions".into()));
            }
            for row in per_state {
                if row.len() != n_states {
                    return Err(Error::Dimension("ragged transition rows".into()));
                }
                probs.extend_from_slice(row);
            }
        }
        Self::new(n_states, n_actions, probs)
    }

    /// Rows drawn uniformly from the simplex.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let probs = (0..n_states * n_actions)
            .flat_map(|_| random_simplex(rng, n_states))
            .collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Every `(s, a)` moves to `next[s * n_actions + a]` with probability 1.
    pub fn deterministic(n_states: usize, n_actions: usize, next: &[usize]) -> Result<Self> {
        if next.len() != n_states * n_actions {
            return Err(Error::Dimension("deterministic successor table".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions * n_states];
        for (sa, &x) in next.iter().enumerate() {
            if x >= n_states {
                return Err(Error::Index(format!("successor {x} of pair {sa}")));
            }
            probs[sa * n_states + x] = 1.0;
        }
        Self::new(n_states, n_actions, probs)
    }

    /// Convex combination `(1 - t) * self + t * other`.
    pub fn mix(&self, other: &Self, t: f64) -> Result<Self> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::Dimension("mixing models of different shapes".into()));
        }
        let mut probs: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (1.0 - t) * p + t * q)
            .collect();
        for row in probs.chunks_mut(self.n_states) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(self.n_states, self.n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `E_{x ~ P(.|s,a)}[values(x)]`.
    pub fn expect(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.row(s, a).iter().zip(values).map(|(p, v)| p * v).sum()
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }
}

/// Stochastic policy `pi(a | s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("policy", "empty state or action space"));
        }
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for row in probs.chunks(n_actions) {
            check_distribution("policy", row)?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Index(format!("action {a} in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Rows drawn uniformly from the simplex.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let probs = (0..n_states)
            .flat_map(|_| random_simplex(rng, n_actions))
            .collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Uniformly random deterministic policy.
    pub fn random_deterministic(n_states: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let actions: Vec<usize> = (0..n_states).map(|_| rng.random_range(0..n_actions)).collect();
        Self::deterministic(n_actions, &actions).expect("actions are in range")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Ground-truth environment: dynamics `P*`, mean rewards, discount and start law.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    transition: TransitionModel,
    reward_mean: Vec<f64>,
    r_max: f64,
    gamma: f64,
    d0: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        transition: TransitionModel,
        reward_mean: Vec<f64>,
        r_max: f64,
        gamma: f64,
        d0: Vec<f64>,
    ) -> Result<Self> {
        let (ns, na) = (transition.n_states, transition.n_actions);
        if reward_mean.len() != ns * na {
            return Err(Error::Dimension("reward table".into()));
        }
        if d0.len() != ns {
            return Err(Error::Dimension("initial distribution".into()));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(invalid("r_max", format!("{r_max} is not a positive real")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid("gamma", format!("{gamma} outside [0, 1)")));
        }
        if let Some(r) = reward_mean.iter().find(|r| !(r.abs() <= r_max)) {
            return Err(invalid("reward_mean", format!("{r} exceeds r_max {r_max}")));
        }
        check_distribution("d0", &d0)?;
        Ok(Self {
            transition,
            reward_mean,
            r_max,
            gamma,
            d0,
        })
    }

    /// Random dynamics, rewards uniform in `[0, 1]`, uniform start.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut Rng) -> Self {
        let transition = TransitionModel::random(n_states, n_actions, rng);
        let reward_mean = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let d0 = vec![1.0 / n_states as f64; n_states];
        Self::new(transition, reward_mean, 1.0, gamma, d0).expect("random instance is valid")
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.reward_mean.clone(),
            self.r_max,
            gamma,
            self.d0.clone(),
        )
    }

    pub fn with_transition(&self, transition: TransitionModel) -> Result<Self> {
        Self::new(
            transition,
            self.reward_mean.clone(),
            self.r_max,
            self.gamma,
            self.d0.clone(),
        )
    }

    pub fn n_states(&self) -> usize {
        self.transition.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.transition.n_actions
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.n_actions() + a]
    }

    pub fn reward_mean(&self) -> &[f64] {
        &self.reward_mean
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn d0(&self) -> &[f64] {
        &self.d0
    }
}

/// `V(s)` for each state.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(n_states: usize, c: f64) -> Self {
        Self::new(vec![c; n_states])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Unnormalized discounted state-action occupancy, total mass `1 / (1 - gamma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    mass: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(n_states: usize, n_actions: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != n_states * n_actions {
            return Err(Error::Dimension("occupancy table".into()));
        }
        if let Some(m) = mass.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(invalid("occupancy", format!("entry {m}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            mass,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mass[s * self.n_actions + a]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Importance weight `w(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl WeightFunction {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Dimension("weight table".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("weight function", "non-finite entry"));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![c; n_states * n_actions],
        }
    }

    /// `scale` at `(s, a)`, zero elsewhere.
    pub fn indicator(n_states: usize, n_actions: usize, s: usize, a: usize, scale: f64) -> Self {
        let mut w = Self::constant(n_states, n_actions, 0.0);
        w.values[s * n_actions + a] = scale;
        w
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// One logged transition. Field names are the JSON-lines schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub episode: u64,
}

/// Batch of logged transitions with their empirical `(s, a)` frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_states: usize,
    n_actions: usize,
    records: Vec<Transition>,
    empirical_sa: Vec<f64>,
}

impl Dataset {
    pub fn new(n_states: usize, n_actions: usize, records: Vec<Transition>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut counts = vec![0usize; n_states * n_actions];
        for (i, t) in records.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(Error::Index(format!(
                    "record {i} ({}, {}) -> {} outside {n_states} states x {n_actions} actions",
                    t.s, t.a, t.s_next
                )));
            }
            if !t.r.is_finite() {
                return Err(invalid("dataset", format!("record {i} has reward {}", t.r)));
            }
            counts[t.s * n_actions + t.a] += 1;
        }
        let n = records.len() as f64;
        let empirical_sa = counts.into_iter().map(|c| c as f64 / n).collect();
        Ok(Self {
            n_states,
            n_actions,
            records,
            empirical_sa,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn empirical_sa(&self) -> &[f64] {
        &self.empirical_sa
    }

    /// Record counts per `(s, a)`.
    pub fn sa_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_states * self.n_actions];
        for t in &self.records {
            counts[t.s * self.n_actions + t.a] += 1;
        }
        counts
    }

    /// Record counts per `(s, a, s')`.
    pub fn triple_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_states * self.n_actions * self.n_states];
        for t in &self.records {
            counts[(t.s * self.n_actions + t.a) * self.n_states + t.s_next] += 1;
        }
        counts
    }

    /// Same-size sample with replacement.
    pub fn bootstrap(&self, rng: &mut Rng) -> Self {
        let n = self.records.len();
        let records = (0..n)
            .map(|_| self.records[rng.random_range(0..n)])
            .collect();
        Self::new(self.n_states, self.n_actions, records).expect("resample keeps indices valid")
    }
}

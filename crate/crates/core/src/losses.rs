//! Model-learning losses: minimax (MML), likelihood (MLE), value-aware (VAML),
//! the residual variant, and the exact OPE error identity.
//!
//! Empirical and exact losses share one representation, [`LossContext`]: a mass
//! table over `(s, a, s')`. For a dataset the masses are record counts over `n`;
//! for the exact law they are `D(s, a) P*(s' | s, a)`.

use serde::{Deserialize, Serialize};

use crate::classes::FunctionClassHandle;
use crate::error::{Error, Result};
use crate::mdp::{
    behavior_distribution, density_ratio, evaluate_policy, solve_occupancy, solve_value_function,
    Dataset, Policy, TabularMdp, TransitionModel, ValueFunction, WeightFunction,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mml,
    Mle,
    VamlL2,
    VamlL1,
    ResidualMml,
    Ci,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mml => "mml",
            Self::Mle => "mle",
            Self::VamlL2 => "vaml_l2",
            Self::VamlL1 => "vaml_l1",
            Self::ResidualMml => "residual_mml",
            Self::Ci => "ci",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Norm used inside the VAML supremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VamlNorm {
    L2,
    L1,
}

impl VamlNorm {
    pub fn kind(self) -> LossKind {
        match self {
            Self::L2 => LossKind::VamlL2,
            Self::L1 => LossKind::VamlL1,
        }
    }
}

/// A loss and how many samples (records, or support atoms for exact laws) stand behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub n_samples: usize,
    pub kind: LossKind,
}

/// One adversary `(w, V)`; the product `w(s,a) V(s')` is the test function.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryPair {
    pub w: WeightFunction,
    pub v: ValueFunction,
}

impl AdversaryPair {
    pub fn new(w: WeightFunction, v: ValueFunction) -> Result<Self> {
        if w.n_states() != v.len() {
            return Err(Error::Dimension(format!(
                "weight over {} states, value over {}",
                w.n_states(),
                v.len()
            )));
        }
        if v.values().iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid {
                what: "adversary",
                reason: "non-finite value entry".into(),
            });
        }
        Ok(Self { w, v })
    }

    pub fn zero(n_states: usize, n_actions: usize) -> Self {
        Self {
            w: WeightFunction::constant(n_states, n_actions, 0.0),
            v: ValueFunction::constant(n_states, 0.0),
        }
    }
}

/// Which variant of the OPE error identity to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityVariant {
    /// Weight from the true occupancy, value under the candidate model.
    TrueWeightModelValue,
    /// Weight from the model occupancy, value under the true dynamics.
    ModelWeightTrueValue,
}

/// Mass table over `(s, a, s')` against which every loss is an expectation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossContext {
    n_states: usize,
    n_actions: usize,
    sa_mass: Vec<f64>,
    triple_mass: Vec<f64>,
    reward_mass: Vec<f64>,
    n_samples: usize,
}

impl LossContext {
    pub fn empirical(data: &Dataset) -> Self {
        let (ns, na) = (data.n_states(), data.n_actions());
        let n = data.len() as f64;
        let mut triple_mass: Vec<f64> = data
            .triple_counts()
            .into_iter()
            .map(|c| c as f64)
            .collect();
        let mut sa_mass: Vec<f64> = data.sa_counts().into_iter().map(|c| c as f64).collect();
        let mut reward_mass = vec![0.0; ns * na];
        for t in data.records() {
            reward_mass[t.s * na + t.a] += t.r;
        }
        for m in triple_mass
            .iter_mut()
            .chain(sa_mass.iter_mut())
            .chain(reward_mass.iter_mut())
        {
            *m /= n;
        }
        Self {
            n_states: ns,
            n_actions: na,
            sa_mass,
            triple_mass,
            reward_mass,
            n_samples: data.len(),
        }
    }

    /// Exact law `D(s, a) P*(s' | s, a)` with `D` the normalized behavior occupancy.
    pub fn exact(mdp: &TabularMdp, behavior: &Policy) -> Result<Self> {
        let d = behavior_distribution(mdp, behavior)?;
        Self::from_distribution(mdp, &d)
    }

    /// Exact law with an arbitrary state-action distribution `sa_weights`.
    pub fn from_distribution(mdp: &TabularMdp, sa_weights: &[f64]) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        if sa_weights.len() != ns * na {
            return Err(Error::Dimension("state-action distribution".into()));
        }
        let mut triple_mass = Vec::with_capacity(ns * na * ns);
        for (sa, &m) in sa_weights.iter().enumerate() {
            triple_mass.extend(mdp.transition().row(sa / na, sa % na).iter().map(|p| m * p));
        }
        let reward_mass = sa_weights
            .iter()
            .zip(mdp.reward_mean())
            .map(|(m, r)| m * r)
            .collect();
        let n_samples = triple_mass.iter().filter(|m| **m > 0.0).count();
        Ok(Self {
            n_states: ns,
            n_actions: na,
            sa_mass: sa_weights.to_vec(),
            triple_mass,
            reward_mass,
            n_samples,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sa_mass(&self) -> &[f64] {
        &self.sa_mass
    }

    pub fn mass(&self, s: usize, a: usize, next: usize) -> f64 {
        self.triple_mass[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Nonzero atoms `(s, a, s', mass)` in index order.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let (ns, na) = (self.n_states, self.n_actions);
        self.triple_mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != 0.0)
            .map(move |(i, &m)| (i / (na * ns), (i / ns) % na, i % ns, m))
    }

    pub fn check_model(&self, model: &TransitionModel) -> Result<()> {
        if model.n_states() != self.n_states || model.n_actions() != self.n_actions {
            return Err(Error::Index(format!(
                "model is {}x{}, data is {}x{}",
                model.n_states(),
                model.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn check_pair(&self, pair: &AdversaryPair) -> Result<()> {
        if pair.w.n_states() != self.n_states
            || pair.w.n_actions() != self.n_actions
            || pair.v.len() != self.n_states
        {
            return Err(Error::Index("adversary shape differs from data".into()));
        }
        Ok(())
    }

    /// Signed MML loss `E[w(s,a) (E_P[V] - V(s'))]`.
    pub fn mml(&self, pair: &AdversaryPair, model: &TransitionModel) -> Result<f64> {
        self.check_model(model)?;
        self.check_pair(pair)?;
        Ok(self.mml_unchecked(pair, model))
    }

    pub(crate) fn mml_unchecked(&self, pair: &AdversaryPair, model: &TransitionModel) -> f64 {
        let (ns, na) = (self.n_states, self.n_actions);
        let v = pair.v.values();
        let mut total = 0.0;
        for sa in 0..ns * na {
            let w = pair.w.values()[sa];
            if w == 0.0 || self.sa_mass[sa] == 0.0 {
                continue;
            }
            let predicted = self.sa_mass[sa] * model.expect(sa / na, sa % na, v);
            let observed: f64 = self.triple_mass[sa * ns..(sa + 1) * ns]
                .iter()
                .zip(v)
                .map(|(m, v)| m * v)
                .sum();
            total += w * (predicted - observed);
        }
        total
    }

    /// MML loss of a general test function `h(s, a, s')` laid out like the mass table.
    pub fn mml_general(&self, h: &[f64], model: &TransitionModel) -> Result<f64> {
        self.check_model(model)?;
        let (ns, na) = (self.n_states, self.n_actions);
        if h.len() != ns * na * ns {
            return Err(Error::Dimension("test function table".into()));
        }
        let mut total = 0.0;
        for sa in 0..ns * na {
            let hs = &h[sa * ns..(sa + 1) * ns];
            let predicted: f64 = model
                .row(sa / na, sa % na)
                .iter()
                .zip(hs)
                .map(|(p, h)| p * h)
                .sum();
            let observed: f64 = self.triple_mass[sa * ns..(sa + 1) * ns]
                .iter()
                .zip(hs)
                .map(|(m, h)| m * h)
                .sum();
            total += self.sa_mass[sa] * predicted - observed;
        }
        Ok(total)
    }

    /// Expected negative log-likelihood; `+inf` if the model rules out an observed atom.
    pub fn mle(&self, model: &TransitionModel) -> Result<f64> {
        self.check_model(model)?;
        let mut total = 0.0;
        for (s, a, x, m) in self.atoms() {
            let p = model.prob(s, a, x);
            if p == 0.0 {
                return Ok(f64::INFINITY);
            }
            total -= m * p.ln();
        }
        Ok(total)
    }

    /// `E[w(s, a) r]` over the logged (or expected) rewards.
    pub fn weighted_reward(&self, w: &WeightFunction) -> f64 {
        w.values().iter().zip(&self.reward_mass).map(|(w, r)| w * r).sum()
    }

    /// Per-sample VAML supremum averaged over the mass table.
    pub fn vaml(
        &self,
        v_class: &FunctionClassHandle,
        model: &TransitionModel,
        norm: VamlNorm,
    ) -> Result<f64> {
        self.check_model(model)?;
        let lift = |gap: f64| match norm {
            VamlNorm::L2 => gap * gap,
            VamlNorm::L1 => gap.abs(),
        };
        match v_class {
            FunctionClassHandle::FiniteGrid(pairs) => {
                if pairs.is_empty() {
                    return Err(Error::Empty("finite grid"));
                }
                for p in pairs {
                    self.check_pair(p)?;
                }
                let mut total = 0.0;
                for (s, a, x, m) in self.atoms() {
                    let sup = pairs
                        .iter()
                        .map(|p| lift(model.expect(s, a, p.v.values()) - p.v.get(x)))
                        .fold(0.0, f64::max);
                    total += m * sup;
                }
                Ok(total)
            }
            FunctionClassHandle::TabularBall(ball) => {
                // sup over |V| <= b of |(P(.|s,a) - e_x) . V| is b times the l1 norm
                let mut total = 0.0;
                for (s, a, x, m) in self.atoms() {
                    let l1: f64 = model
                        .row(s, a)
                        .iter()
                        .enumerate()
                        .map(|(y, p)| if y == x { (p - 1.0).abs() } else { p.abs() })
                        .sum();
                    total += m * lift(ball.bound() * l1);
                }
                Ok(total)
            }
            FunctionClassHandle::RkhsUnitBall(kernel) => {
                crate::rkhs::vaml_in(self, kernel, model, norm)
            }
            FunctionClassHandle::LinearSpan(_) => Err(Error::Unsupported(
                "VAML supremum over a linear span".into(),
            )),
        }
    }
}

fn value(kind: LossKind, value: f64, n_samples: usize) -> LossValue {
    LossValue {
        value,
        n_samples,
        kind,
    }
}

fn check_record_shapes(data: &Dataset, model: &TransitionModel) -> Result<()> {
    if model.n_states() != data.n_states() || model.n_actions() != data.n_actions() {
        return Err(Error::Index(format!(
            "model is {}x{}, data is {}x{}",
            model.n_states(),
            model.n_actions(),
            data.n_states(),
            data.n_actions()
        )));
    }
    Ok(())
}

/// `E_n[w(s,a) (E_{x~P(.|s,a)}[V(x)] - V(s'))]`, evaluated record by record.
pub fn mml_loss(data: &Dataset, adversary: &AdversaryPair, model: &TransitionModel) -> Result<LossValue> {
    check_record_shapes(data, model)?;
    LossContext::empirical(data).check_pair(adversary)?;
    let v = adversary.v.values();
    let total: f64 = data
        .records()
        .iter()
        .map(|t| adversary.w.get(t.s, t.a) * (model.expect(t.s, t.a, v) - v[t.s_next]))
        .sum();
    Ok(value(LossKind::Mml, total / data.len() as f64, data.len()))
}

/// MML loss against the exact behavior law `D P*`.
pub fn mml_loss_exact(
    mdp: &TabularMdp,
    behavior: &Policy,
    adversary: &AdversaryPair,
    model: &TransitionModel,
) -> Result<LossValue> {
    let ctx = LossContext::exact(mdp, behavior)?;
    Ok(value(LossKind::Mml, ctx.mml(adversary, model)?, ctx.n_samples()))
}

/// `(1/n) sum -ln P(s'_i | s_i, a_i)`.
pub fn mle_loss(data: &Dataset, model: &TransitionModel) -> Result<LossValue> {
    check_record_shapes(data, model)?;
    let mut total = 0.0;
    for (index, t) in data.records().iter().enumerate() {
        let p = model.prob(t.s, t.a, t.s_next);
        if p == 0.0 {
            return Err(Error::ZeroProbability {
                index,
                state: t.s,
                action: t.a,
                next: t.s_next,
            });
        }
        total -= p.ln();
    }
    Ok(value(LossKind::Mle, total / data.len() as f64, data.len()))
}

/// `E_n[sup_V (E_P[V] - V(s'))^2]` (L2) or `E_n[sup_V |E_P[V] - V(s')|]` (L1).
pub fn vaml_loss(
    data: &Dataset,
    v_class: &FunctionClassHandle,
    model: &TransitionModel,
    norm: VamlNorm,
) -> Result<LossValue> {
    check_record_shapes(data, model)?;
    let v = LossContext::empirical(data).vaml(v_class, model, norm)?;
    Ok(value(norm.kind(), v, data.len()))
}

/// Residual loss `E_n[w (sum_x P0(x) ((P0(x) - P(x)) / P0(x)) V(x) - V(s'))]`,
/// evaluated literally, ratio included.
pub fn residual_mml_loss(
    data: &Dataset,
    adversary: &AdversaryPair,
    base_model: &TransitionModel,
    model: &TransitionModel,
) -> Result<LossValue> {
    check_record_shapes(data, model)?;
    check_record_shapes(data, base_model)?;
    LossContext::empirical(data).check_pair(adversary)?;
    let v = adversary.v.values();
    let mut total = 0.0;
    for t in data.records() {
        let mut inner = 0.0;
        for (x, (&p0, &p)) in base_model
            .row(t.s, t.a)
            .iter()
            .zip(model.row(t.s, t.a))
            .enumerate()
        {
            if p0 == 0.0 {
                return Err(Error::ZeroBase {
                    state: t.s,
                    action: t.a,
                    next: x,
                });
            }
            inner += p0 * ((p0 - p) / p0) * v[x];
        }
        total += adversary.w.get(t.s, t.a) * (inner - v[t.s_next]);
    }
    Ok(value(LossKind::ResidualMml, total / data.len() as f64, data.len()))
}

/// Returns `(J(pi, P) - J(pi, P*), gamma * L(w, V, P))` with the adversary given by `variant`.
pub fn ope_error_identity(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    model: &TransitionModel,
    variant: IdentityVariant,
) -> Result<(f64, f64)> {
    let truth = mdp.transition();
    let data_sa = behavior_distribution(mdp, behavior)?;
    let ctx = LossContext::from_distribution(mdp, &data_sa)?;
    let (occupancy_model, value_model) = match variant {
        IdentityVariant::TrueWeightModelValue => (truth, model),
        IdentityVariant::ModelWeightTrueValue => (model, truth),
    };
    let w = density_ratio(&solve_occupancy(mdp, target, occupancy_model)?, &data_sa)?;
    let v = solve_value_function(mdp, target, value_model)?;
    let pair = AdversaryPair::new(w, v)?;
    let lhs = evaluate_policy(mdp, target, model)? - evaluate_policy(mdp, target, truth)?;
    let rhs = mdp.gamma() * ctx.mml(&pair, model)?;
    Ok((lhs, rhs))
}

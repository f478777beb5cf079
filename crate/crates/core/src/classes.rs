//! Adversary and model classes, and the closed-form minimax solutions for
//! linear and tabular classes.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::losses::AdversaryPair;
use crate::mdp::{Dataset, TransitionModel, ValueFunction, WeightFunction};
use crate::rkhs::KernelSpec;

/// Reciprocal condition number below which the linear closed form is refused.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Largest state count for which the value set includes every `{-b, b}` vertex.
pub const MAX_VERTEX_STATES: usize = 10;

/// Sup-norm ball of radius `bound` over tabular `w` and `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularBall {
    n_states: usize,
    n_actions: usize,
    bound: f64,
}

impl TabularBall {
    pub fn new(n_states: usize, n_actions: usize, bound: f64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(invalid("ball bound", format!("{bound}")));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("ball", "empty state or action space"));
        }
        Ok(Self {
            n_states,
            n_actions,
            bound,
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Nonzero levels `j b / 2^(r-1)`, `|j| <= 2^(r-1)`; level sets are nested in `r`.
    fn levels(&self, resolution: u32) -> Vec<f64> {
        let steps = 1i64 << (resolution - 1).min(30);
        (-steps..=steps)
            .filter(|&j| j != 0)
            .map(|j| self.bound * j as f64 / steps as f64)
            .collect()
    }

    fn weights(&self, resolution: u32) -> Vec<WeightFunction> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut out = Vec::new();
        for c in self.levels(resolution) {
            for sa in 0..ns * na {
                out.push(WeightFunction::indicator(ns, na, sa / na, sa % na, c));
            }
            out.push(WeightFunction::constant(ns, na, c));
        }
        out
    }

    fn values(&self, resolution: u32) -> Vec<ValueFunction> {
        let ns = self.n_states;
        let mut out = Vec::new();
        for c in self.levels(resolution) {
            for s in 0..ns {
                let mut v = vec![0.0; ns];
                v[s] = c;
                out.push(ValueFunction::new(v));
            }
            out.push(ValueFunction::constant(ns, c));
        }
        if ns <= MAX_VERTEX_STATES {
            for bits in 0..1usize << ns {
                let v = (0..ns)
                    .map(|i| if bits >> i & 1 == 1 { self.bound } else { -self.bound })
                    .collect();
                out.push(ValueFunction::new(v));
            }
        }
        out
    }
}

/// Features `phi` (model) and `psi` (adversary) over `(s, a, s')`, each of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClass {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl LinearClass {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        phi: Vec<f64>,
        psi: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("linear class", "feature dimension must be positive"));
        }
        let len = n_states * n_actions * n_states * dim;
        if phi.len() != len || psi.len() != len {
            return Err(Error::Dimension(format!(
                "feature tables must have {len} entries"
            )));
        }
        if phi.iter().chain(&psi).any(|x| !x.is_finite()) {
            return Err(invalid("linear class", "non-finite feature"));
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            phi,
            psi,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        phi: impl Fn(usize, usize, usize) -> Vec<f64>,
        psi: impl Fn(usize, usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut phi_t = Vec::new();
        let mut psi_t = Vec::new();
        for s in 0..n_states {
            for a in 0..n_actions {
                for x in 0..n_states {
                    phi_t.extend(phi(s, a, x));
                    psi_t.extend(psi(s, a, x));
                }
            }
        }
        Self::new(n_states, n_actions, dim, phi_t, psi_t)
    }

    /// One-hot features on `(s, a, s')`, index `s |A||S| + a |S| + s'`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let dim = n_states * n_actions * n_states;
        let mut phi = vec![0.0; dim * dim];
        for i in 0..dim {
            phi[i * dim + i] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            dim,
            psi: phi.clone(),
            phi,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn offset(&self, s: usize, a: usize, x: usize) -> usize {
        ((s * self.n_actions + a) * self.n_states + x) * self.dim
    }

    pub fn phi(&self, s: usize, a: usize, x: usize) -> &[f64] {
        let o = self.offset(s, a, x);
        &self.phi[o..o + self.dim]
    }

    pub fn psi(&self, s: usize, a: usize, x: usize) -> &[f64] {
        let o = self.offset(s, a, x);
        &self.psi[o..o + self.dim]
    }

    pub fn with_psi_scaled(&self, c: f64) -> Self {
        Self {
            psi: self.psi.iter().map(|x| x * c).collect(),
            ..self.clone()
        }
    }

    /// Model `P(x | s, a) = phi(s, a, x) . alpha`, if it is row-stochastic.
    pub fn model(&self, alpha: &[f64]) -> Result<TransitionModel> {
        if alpha.len() != self.dim {
            return Err(Error::Dimension("coefficient vector".into()));
        }
        let mut probs = Vec::with_capacity(self.n_states * self.n_actions * self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for x in 0..self.n_states {
                    probs.push(self.phi(s, a, x).iter().zip(alpha).map(|(f, c)| f * c).sum());
                }
            }
        }
        TransitionModel::new(self.n_states, self.n_actions, probs)
    }
}

/// A class of adversaries (or, for VAML, of value functions).
#[derive(Clone, Debug)]
pub enum FunctionClassHandle {
    TabularBall(TabularBall),
    FiniteGrid(Vec<AdversaryPair>),
    LinearSpan(LinearClass),
    RkhsUnitBall(KernelSpec),
}

impl FunctionClassHandle {
    pub fn finite_grid(pairs: Vec<AdversaryPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("finite grid"));
        }
        Ok(Self::FiniteGrid(pairs))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::TabularBall(_) => "tabular_ball",
            Self::FiniteGrid(_) => "finite_grid",
            Self::LinearSpan(_) => "linear_span",
            Self::RkhsUnitBall(_) => "rkhs_unit_ball",
        }
    }
}

/// Materializes an enumerable class. Ball output at `resolution` is a subset of `resolution + 1`.
pub fn enumerate_adversaries(
    handle: &FunctionClassHandle,
    resolution: u32,
) -> Result<Vec<AdversaryPair>> {
    match handle {
        FunctionClassHandle::FiniteGrid(pairs) => {
            if pairs.is_empty() {
                return Err(Error::Empty("finite grid"));
            }
            Ok(pairs.clone())
        }
        FunctionClassHandle::TabularBall(ball) => {
            if resolution == 0 {
                return Err(invalid("resolution", "must be positive"));
            }
            let values = ball.values(resolution);
            let mut out = Vec::new();
            for w in ball.weights(resolution) {
                for v in &values {
                    out.push(AdversaryPair { w: w.clone(), v: v.clone() });
                }
            }
            Ok(out)
        }
        other => Err(Error::Unsupported(format!(
            "enumerating a {} class",
            other.label()
        ))),
    }
}

/// Solves `M^T alpha = b` with `M = sum_i sum_x phi psi^T` and `b = sum_i psi(s_i, a_i, s'_i)`.
///
/// Sums replace empirical means; the `1/n` factors cancel.
pub fn solve_linear_closed_form(data: &Dataset, cls: &LinearClass) -> Result<Vec<f64>> {
    if cls.n_states != data.n_states() || cls.n_actions != data.n_actions() {
        return Err(Error::Dimension("feature map and data shapes differ".into()));
    }
    let (ns, na, d) = (cls.n_states, cls.n_actions, cls.dim);
    let sa_counts = data.sa_counts();
    let triple_counts = data.triple_counts();
    let mut m = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for sa in 0..ns * na {
        let (s, a) = (sa / na, sa % na);
        let c = sa_counts[sa] as f64;
        if c == 0.0 {
            continue;
        }
        for x in 0..ns {
            let (phi, psi) = (cls.phi(s, a, x), cls.psi(s, a, x));
            for (i, &fi) in phi.iter().enumerate() {
                if fi == 0.0 {
                    continue;
                }
                for (j, &gj) in psi.iter().enumerate() {
                    m[(i, j)] += c * fi * gj;
                }
            }
            let cx = triple_counts[sa * ns + x] as f64;
            if cx != 0.0 {
                for (j, &gj) in psi.iter().enumerate() {
                    b[j] += cx * gj;
                }
            }
        }
    }
    let system = m.transpose();
    let rcond = reciprocal_condition(&system);
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::RankDeficient {
            rcond,
            threshold: RCOND_THRESHOLD,
        });
    }
    let alpha = system
        .lu()
        .solve(&b)
        .ok_or(Error::Singular("linear closed form"))?;
    Ok(alpha.iter().copied().collect())
}

/// `1 / (||A||_1 ||A^-1||_1)`, zero when `A` is singular.
pub fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    let one_norm = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match a.clone().lu().try_inverse() {
        Some(inv) => {
            let denom = one_norm(a) * one_norm(&inv);
            if denom.is_finite() && denom > 0.0 {
                1.0 / denom
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// Count model `#(s, a, s') / #(s, a)`; every pair must be observed.
pub fn solve_tabular(data: &Dataset, n_states: usize, n_actions: usize) -> Result<TransitionModel> {
    if data.n_states() != n_states || data.n_actions() != n_actions {
        return Err(Error::Dimension("requested shape differs from data".into()));
    }
    let sa_counts = data.sa_counts();
    let missing: Vec<(usize, usize)> = sa_counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == 0)
        .map(|(i, _)| (i / n_actions, i % n_actions))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Unobserved(missing));
    }
    let triple_counts = data.triple_counts();
    let probs = triple_counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / sa_counts[i / n_states] as f64)
        .collect();
    TransitionModel::new(n_states, n_actions, probs)
}

/// Count model on observed pairs, `fallback` rows elsewhere.
pub fn solve_tabular_or(data: &Dataset, fallback: &TransitionModel) -> Result<TransitionModel> {
    let (ns, na) = (data.n_states(), data.n_actions());
    if fallback.n_states() != ns || fallback.n_actions() != na {
        return Err(Error::Dimension("fallback model shape".into()));
    }
    let sa_counts = data.sa_counts();
    let triple_counts = data.triple_counts();
    let mut probs = Vec::with_capacity(ns * na * ns);
    for sa in 0..ns * na {
        if sa_counts[sa] == 0 {
            probs.extend_from_slice(fallback.row(sa / na, sa % na));
        } else {
            let c = sa_counts[sa] as f64;
            probs.extend(triple_counts[sa * ns..(sa + 1) * ns].iter().map(|&k| k as f64 / c));
        }
    }
    TransitionModel::new(ns, na, probs)
}

//! Kernel adversaries: the closed-form maximum of the squared MML loss over an
//! RKHS unit ball, its per-sample VAML counterpart, and the median heuristic.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::losses::{LossContext, VamlNorm};
use crate::mdp::{Dataset, TransitionModel};
use crate::rng::{derive_seed, seeded};

/// Sample size above which pairwise medians are computed on a subsample.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;

/// Clamp floor guarding closed forms against cancellation.
pub const CLAMP_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// `K1(s) K2(a) K3(s')`.
    RbfProduct,
    /// `K3(s')` alone.
    RbfNextStateOnly,
}

/// Coordinates assigned to discrete indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    points: Vec<Vec<f64>>,
}

impl Embedding {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(invalid("embedding", "points must share a positive dimension"));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("embedding", "non-finite coordinate"));
        }
        Ok(Self { points })
    }

    /// Index `i` at coordinate `i`.
    pub fn index(n: usize) -> Self {
        Self {
            points: (0..n).map(|i| vec![i as f64]).collect(),
        }
    }

    pub fn one_hot(n: usize) -> Self {
        Self {
            points: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// RBF kernel on `(s, a, s')` with per-coordinate bandwidths.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth_s: f64,
    pub bandwidth_a: f64,
    pub bandwidth_snext: f64,
    pub states: Embedding,
    pub actions: Embedding,
}

impl KernelSpec {
    pub fn product(
        states: Embedding,
        actions: Embedding,
        bandwidth_s: f64,
        bandwidth_a: f64,
        bandwidth_snext: f64,
    ) -> Result<Self> {
        let k = Self {
            kind: KernelKind::RbfProduct,
            bandwidth_s,
            bandwidth_a,
            bandwidth_snext,
            states,
            actions,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn next_state_only(states: Embedding, n_actions: usize, bandwidth_snext: f64) -> Result<Self> {
        let k = Self {
            kind: KernelKind::RbfNextStateOnly,
            bandwidth_s: 1.0,
            bandwidth_a: 1.0,
            bandwidth_snext,
            states,
            actions: Embedding::index(n_actions),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, h) in [
            ("bandwidth_s", self.bandwidth_s),
            ("bandwidth_a", self.bandwidth_a),
            ("bandwidth_snext", self.bandwidth_snext),
        ] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("kernel", format!("{name} = {h} is not positive")));
            }
        }
        Ok(())
    }

    fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.states.len() != n_states || self.actions.len() != n_actions {
            return Err(Error::Dimension(format!(
                "kernel embeds {}x{}, data is {n_states}x{n_actions}",
                self.states.len(),
                self.actions.len()
            )));
        }
        Ok(())
    }

    /// `K1(s, s~) K2(a, a~)`; identically 1 for the next-state-only kernel.
    pub fn state_action(&self, s: usize, a: usize, s2: usize, a2: usize) -> f64 {
        match self.kind {
            KernelKind::RbfNextStateOnly => 1.0,
            KernelKind::RbfProduct => {
                rbf(self.states.point(s), self.states.point(s2), self.bandwidth_s)
                    * rbf(self.actions.point(a), self.actions.point(a2), self.bandwidth_a)
            }
        }
    }

    /// `K3(x, y)`.
    pub fn next_state(&self, x: usize, y: usize) -> f64 {
        rbf(self.states.point(x), self.states.point(y), self.bandwidth_snext)
    }

    /// Full kernel on two triples.
    pub fn eval(&self, u: (usize, usize, usize), v: (usize, usize, usize)) -> f64 {
        self.state_action(u.0, u.1, v.0, v.1) * self.next_state(u.2, v.2)
    }

    fn next_state_gram(&self) -> Vec<f64> {
        let n = self.states.len();
        let mut g = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                g[x * n + y] = self.next_state(x, y);
            }
        }
        g
    }
}

/// `exp(-|u - v|^2 / (2 h^2))`.
pub fn rbf(u: &[f64], v: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// How model expectations inside the closed forms are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelExpectation {
    /// Weighted sums over tabular next states.
    Exact,
    /// Empirical law of `draws` sampled next states per atom.
    Sampled { draws: usize, seed: u64 },
}

struct Atom {
    s: usize,
    a: usize,
    next: usize,
    mass: f64,
    /// Model law over next states at `(s, a)`.
    law: Vec<f64>,
    /// `G3 law`.
    smoothed: Vec<f64>,
}

fn atoms(
    ctx: &LossContext,
    kernel: &KernelSpec,
    model: &TransitionModel,
    expectation: ModelExpectation,
) -> Result<Vec<Atom>> {
    ctx.check_model(model)?;
    kernel.validate()?;
    kernel.check_shape(ctx.n_states(), ctx.n_actions())?;
    let ns = ctx.n_states();
    let gram = kernel.next_state_gram();
    let mut out = Vec::new();
    for (index, (s, a, next, mass)) in ctx.atoms().enumerate() {
        let law = match expectation {
            ModelExpectation::Exact => model.row(s, a).to_vec(),
            ModelExpectation::Sampled { draws, seed } => {
                if draws == 0 {
                    return Err(invalid("model samples", "need at least one draw"));
                }
                let mut rng = seeded(derive_seed(seed, &[index as u64]));
                let row = model.row(s, a);
                let mut law = vec![0.0; ns];
                for _ in 0..draws {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = ns - 1;
                    for (x, p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = x;
                            break;
                        }
                    }
                    law[pick] += 1.0 / draws as f64;
                }
                law
            }
        };
        let smoothed = (0..ns)
            .map(|x| (0..ns).map(|y| gram[x * ns + y] * law[y]).sum())
            .collect();
        out.push(Atom {
            s,
            a,
            next,
            mass,
            law,
            smoothed,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    Ok(out)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `max_{||h|| <= 1} L(h, P)^2` over the kernel's unit ball, for any mass table.
pub fn rkhs_max_mml_sq_in(
    ctx: &LossContext,
    kernel: &KernelSpec,
    model: &TransitionModel,
    expectation: ModelExpectation,
) -> Result<f64> {
    let atoms = atoms(ctx, kernel, model, expectation)?;
    let mut total = 0.0;
    for i in &atoms {
        let mut row = 0.0;
        for j in &atoms {
            let k12 = kernel.state_action(i.s, i.a, j.s, j.a);
            if k12 == 0.0 {
                continue;
            }
            let both_model = dot(&i.law, &j.smoothed);
            let model_data = i.smoothed[j.next];
            let data_model = j.smoothed[i.next];
            let both_data = kernel.next_state(i.next, j.next);
            row += j.mass * k12 * (both_model - model_data - data_model + both_data);
        }
        total += i.mass * row;
    }
    if total < -CLAMP_GUARD {
        return Err(Error::Numerical(format!(
            "closed form is negative ({total:e}) beyond rounding"
        )));
    }
    Ok(total.max(0.0))
}

/// Closed-form squared MML maximum over the RKHS unit ball for a dataset.
pub fn rkhs_max_mml_sq(
    data: &Dataset,
    kernel: &KernelSpec,
    model: &TransitionModel,
    expectation: ModelExpectation,
) -> Result<f64> {
    rkhs_max_mml_sq_in(&LossContext::empirical(data), kernel, model, expectation)
}

fn per_sample_vaml(atom: &Atom, kernel: &KernelSpec) -> f64 {
    let v = dot(&atom.law, &atom.smoothed) - 2.0 * atom.smoothed[atom.next]
        + kernel.next_state(atom.next, atom.next);
    v.max(0.0)
}

/// Per-sample squared supremum over the `K3` unit ball, averaged.
pub fn rkhs_max_vaml_in(
    ctx: &LossContext,
    kernel: &KernelSpec,
    model: &TransitionModel,
    expectation: ModelExpectation,
) -> Result<f64> {
    let atoms = atoms(ctx, kernel, model, expectation)?;
    Ok(atoms.iter().map(|a| a.mass * per_sample_vaml(a, kernel)).sum())
}

pub fn rkhs_max_vaml(
    data: &Dataset,
    kernel: &KernelSpec,
    model: &TransitionModel,
    expectation: ModelExpectation,
) -> Result<f64> {
    rkhs_max_vaml_in(&LossContext::empirical(data), kernel, model, expectation)
}

pub(crate) fn vaml_in(
    ctx: &LossContext,
    kernel: &KernelSpec,
    model: &TransitionModel,
    norm: VamlNorm,
) -> Result<f64> {
    let atoms = atoms(ctx, kernel, model, ModelExpectation::Exact)?;
    Ok(atoms
        .iter()
        .map(|a| {
            let sq = per_sample_vaml(a, kernel);
            a.mass
                * match norm {
                    VamlNorm::L2 => sq,
                    VamlNorm::L1 => sq.sqrt(),
                }
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    State,
    Action,
    NextState,
}

/// Median pairwise Euclidean distance; subsamples `MEDIAN_EXACT_LIMIT` points above that size.
pub fn median_pairwise_distance(points: &[Vec<f64>], seed: u64) -> Result<f64> {
    if points.len() < 2 {
        return Err(invalid("bandwidth", "need at least two points"));
    }
    let chosen: Vec<&[f64]> = if points.len() > MEDIAN_EXACT_LIMIT {
        let mut idx = sample(&mut seeded(seed), points.len(), MEDIAN_EXACT_LIMIT).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i].as_slice()).collect()
    } else {
        points.iter().map(Vec::as_slice).collect()
    };
    let mut dists = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    for (i, u) in chosen.iter().enumerate() {
        for v in &chosen[i + 1..] {
            dists.push(u.iter().zip(*v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    let n = dists.len();
    let mid = n / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if n % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if !(median > 0.0) {
        return Err(invalid("bandwidth", "median pairwise distance is zero"));
    }
    Ok(median)
}

/// Median heuristic on one embedded coordinate of the records.
pub fn median_bandwidth(
    data: &Dataset,
    coordinate: Coordinate,
    embedding: &Embedding,
    seed: u64,
) -> Result<f64> {
    let points: Vec<Vec<f64>> = data
        .records()
        .iter()
        .map(|t| {
            let i = match coordinate {
                Coordinate::State => t.s,
                Coordinate::Action => t.a,
                Coordinate::NextState => t.s_next,
            };
            embedding.point(i).to_vec()
        })
        .collect();
    median_pairwise_distance(&points, seed)
}

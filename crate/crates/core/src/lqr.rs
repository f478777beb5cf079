//! Linear-quadratic analytics: quadratic value functions, the Gaussian-mixture
//! occupancy of a linear controller, the closed-form expected MML loss, and
//! model selection over a finite grid of linear models.
//!
//! Conventions: actions are `a = -K s + sigma_k eps`, true dynamics are
//! `s' = A* s + B* a + sigma_star eta`, and the per-step cost is
//! `s^T Q s + a^T R a`. Candidate models predict deterministically, so their
//! process noise is zero inside the loss.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::losses::LossKind;
use crate::rng::{derive_seed, seeded};

/// Fixed-point iteration stops once successive iterates agree to this.
pub const FIXED_POINT_TOL: f64 = 1e-12;

/// Tail mass allowed beyond the occupancy truncation horizon.
pub const TAIL_TOL: f64 = 1e-10;

const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LqrSystem {
    pub a_true: DMatrix<f64>,
    pub b_true: DMatrix<f64>,
    pub q_cost: DMatrix<f64>,
    pub r_cost: DMatrix<f64>,
    pub sigma_star: f64,
    pub sigma_k: f64,
    pub sigma_0: f64,
    pub s0: DVector<f64>,
    pub gamma: f64,
}

fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 {
        return false;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .all(|&e| e >= -1e-12)
}

impl LqrSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_true: DMatrix<f64>,
        b_true: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        sigma_star: f64,
        sigma_k: f64,
        sigma_0: f64,
        s0: DVector<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n = a_true.nrows();
        let k = b_true.ncols();
        if !a_true.is_square() || b_true.nrows() != n || s0.len() != n {
            return Err(Error::Dimension("state dimensions of A*, B*, s0".into()));
        }
        if q_cost.shape() != (n, n) || r_cost.shape() != (k, k) {
            return Err(Error::Dimension("cost matrix shapes".into()));
        }
        if !is_symmetric_psd(&q_cost) || !is_symmetric_psd(&r_cost) {
            return Err(invalid("cost", "Q and R must be symmetric PSD"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("gamma", format!("{gamma} outside (0, 1)")));
        }
        for (name, s) in [("sigma_star", sigma_star), ("sigma_k", sigma_k), ("sigma_0", sigma_0)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid("noise scale", format!("{name} = {s}")));
            }
        }
        Ok(Self {
            a_true,
            b_true,
            q_cost,
            r_cost,
            sigma_star,
            sigma_k,
            sigma_0,
            s0,
            gamma,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b: f64,
        q: f64,
        r: f64,
        sigma_star: f64,
        sigma_k: f64,
        sigma_0: f64,
        s0: f64,
        gamma: f64,
    ) -> Result<Self> {
        let m = |x| DMatrix::from_element(1, 1, x);
        Self::new(m(a), m(b), m(q), m(r), sigma_star, sigma_k, sigma_0, DVector::from_element(1, s0), gamma)
    }

    pub fn state_dim(&self) -> usize {
        self.a_true.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b_true.ncols()
    }

    fn check_model(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<()> {
        let (n, m) = (self.state_dim(), self.action_dim());
        if a.shape() != (n, n) || b.shape() != (n, m) || k.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "model/controller shapes {:?} {:?} {:?} for n={n}, k={m}",
                a.shape(),
                b.shape(),
                k.shape()
            )));
        }
        Ok(())
    }
}

/// `V(s) = s^T U s + q`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrValueQuadratic {
    pub u_mat: DMatrix<f64>,
    pub q_const: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LqrSolution {
    Stable(LqrValueQuadratic),
    /// `sqrt(gamma) rho(A - BK) >= 1`: the discounted cost diverges.
    Unstable { discounted_radius: f64 },
}

impl LqrSolution {
    pub fn stable(&self) -> Option<&LqrValueQuadratic> {
        match self {
            Self::Stable(v) => Some(v),
            Self::Unstable { .. } => None,
        }
    }
}

pub fn closed_loop(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    a - b * k
}

/// `sqrt(gamma)` times the spectral radius of `f`.
pub fn discounted_radius(f: &DMatrix<f64>, gamma: f64) -> f64 {
    let rho = if f.nrows() == 1 {
        f[(0, 0)].abs()
    } else {
        f.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    };
    gamma.sqrt() * rho
}

/// Quadratic value of controller `k` in model `(a, b)` with the system's process noise.
pub fn lqr_value(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<LqrSolution> {
    lqr_value_with_noise(system, a, b, k, system.sigma_star)
}

/// Quadratic value with an explicit process-noise scale (zero for deterministic models).
pub fn lqr_value_with_noise(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    process_noise: f64,
) -> Result<LqrSolution> {
    system.check_model(a, b, k)?;
    let gamma = system.gamma;
    let f = closed_loop(a, b, k);
    let radius = discounted_radius(&f, gamma);
    if !(radius < 1.0) {
        return Ok(LqrSolution::Unstable {
            discounted_radius: radius,
        });
    }
    let base = &system.q_cost + k.transpose() * &system.r_cost * k;
    let ft = f.transpose();
    let mut u = base.clone();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let next = &base + &ft * &u * &f * gamma;
        let step = (&next - &u).amax();
        u = next;
        if step <= FIXED_POINT_TOL * u.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "value fixed point did not converge (discounted radius {radius})"
        )));
    }
    u = (&u + u.transpose()) * 0.5;
    let sk2 = system.sigma_k * system.sigma_k;
    let q_const = (sk2 * system.r_cost.trace()
        + gamma * sk2 * (b.transpose() * &u * b).trace()
        + gamma * process_noise * process_noise * u.trace())
        / (1.0 - gamma);
    Ok(LqrSolution::Stable(LqrValueQuadratic { u_mat: u, q_const }))
}

/// `max |U - (Q + K^T R K + gamma F^T U F)|`.
pub fn fixed_point_residual(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    value: &LqrValueQuadratic,
) -> f64 {
    let f = closed_loop(a, b, k);
    let rhs = &system.q_cost
        + k.transpose() * &system.r_cost * k
        + f.transpose() * &value.u_mat * &f * system.gamma;
    (&value.u_mat - rhs).amax()
}

/// Expected discounted cost from `s_0 ~ N(s0, sigma_0^2 I)`.
pub fn policy_value(system: &LqrSystem, value: &LqrValueQuadratic) -> f64 {
    let s0 = &system.s0;
    (s0.transpose() * &value.u_mat * s0)[(0, 0)]
        + system.sigma_0 * system.sigma_0 * value.u_mat.trace()
        + value.q_const
}

/// Expected discounted value of the linear reward `-(sum s + sum a)` in model `(a, b)`.
pub fn linear_reward_value(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<f64> {
    system.check_model(a, b, k)?;
    let (n, m) = (system.state_dim(), system.action_dim());
    let f = closed_loop(a, b, k);
    if !(discounted_radius(&f, system.gamma.powi(2)) < 1.0) {
        return Ok(f64::INFINITY);
    }
    let resolvent = (DMatrix::identity(n, n) - &f * system.gamma)
        .lu()
        .solve(&system.s0)
        .ok_or(Error::Singular("linear reward resolvent"))?;
    let per_state = DMatrix::from_element(1, n, 1.0) - DMatrix::from_element(1, m, 1.0) * k;
    Ok(-(per_state * resolvent)[(0, 0)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureTerm {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `sum_i gamma^i N(F^i s0, Sigma_i)` under the true dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrOccupancyMixture {
    pub terms: Vec<MixtureTerm>,
    pub controller: DMatrix<f64>,
}

impl LqrOccupancyMixture {
    pub fn mass(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }
}

/// Terms `0..=horizon` of the true-dynamics occupancy of controller `k`.
pub fn lqr_occupancy(system: &LqrSystem, k: &DMatrix<f64>, horizon: usize) -> Result<LqrOccupancyMixture> {
    system.check_model(&system.a_true, &system.b_true, k)?;
    let n = system.state_dim();
    let f = closed_loop(&system.a_true, &system.b_true, k);
    let drive = &system.b_true * system.b_true.transpose() * system.sigma_k.powi(2)
        + DMatrix::identity(n, n) * system.sigma_star.powi(2);
    let mut mean = system.s0.clone();
    let mut cov = DMatrix::identity(n, n) * system.sigma_0.powi(2);
    let mut weight = 1.0;
    let mut terms = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        terms.push(MixtureTerm {
            weight,
            mean: mean.clone(),
            cov: cov.clone(),
        });
        mean = &f * mean;
        cov = &f * cov * f.transpose() + &drive;
        cov = (&cov + cov.transpose()) * 0.5;
        weight *= system.gamma;
    }
    Ok(LqrOccupancyMixture {
        terms,
        controller: k.clone(),
    })
}

/// Smallest horizon whose neglected tail `sum_{t > H} gamma^t E|s_t|^2` is below `TAIL_TOL`
/// relative to the leading term.
pub fn tail_horizon(system: &LqrSystem, k: &DMatrix<f64>) -> Result<usize> {
    system.check_model(&system.a_true, &system.b_true, k)?;
    let n = system.state_dim();
    let gamma = system.gamma;
    let f = closed_loop(&system.a_true, &system.b_true, k);
    if !(discounted_radius(&f, gamma) < 1.0) {
        return Err(Error::Numerical("true closed loop is not discounted-stable".into()));
    }
    let drive = &system.b_true * system.b_true.transpose() * system.sigma_k.powi(2)
        + DMatrix::identity(n, n) * system.sigma_star.powi(2);
    let mut mean = system.s0.clone();
    let mut cov = DMatrix::identity(n, n) * system.sigma_0.powi(2);
    let lead = (mean.norm_squared() + cov.trace()).max(1.0);
    let mut weight = 1.0;
    let mut peak: f64 = lead;
    for h in 0..MAX_ITERATIONS {
        mean = &f * mean;
        cov = &f * cov * f.transpose() + &drive;
        weight *= gamma;
        let moment = mean.norm_squared() + cov.trace();
        peak = peak.max(moment);
        // later moments stay below the running peak once the loop contracts
        if weight * peak / (1.0 - gamma) <= TAIL_TOL * lead {
            return Ok(h + 1);
        }
    }
    Err(Error::Numerical("occupancy tail did not decay".into()))
}

/// Closed-form expected MML loss of model `(a, b)` against adversary `V(s) = s^T U s`,
/// weighted by the occupancy of controller `k` truncated at `horizon`.
pub fn lqr_mml_loss(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    u_adversary: &DMatrix<f64>,
    horizon: usize,
) -> Result<f64> {
    system.check_model(a, b, k)?;
    if u_adversary.shape() != (system.state_dim(), system.state_dim()) {
        return Err(Error::Dimension("adversary matrix".into()));
    }
    let mixture = lqr_occupancy(system, k, horizon)?;
    Ok(mml_loss_on(system, &mixture, a, b, u_adversary))
}

fn mml_loss_on(
    system: &LqrSystem,
    mixture: &LqrOccupancyMixture,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> f64 {
    let k = &mixture.controller;
    let f = closed_loop(a, b, k);
    let f_true = closed_loop(&system.a_true, &system.b_true, k);
    let delta = f.transpose() * u * &f - f_true.transpose() * u * &f_true;
    let mut state_term = 0.0;
    for t in &mixture.terms {
        state_term += t.weight * ((t.mean.transpose() * &delta * &t.mean)[(0, 0)] + (&delta * &t.cov).trace());
    }
    let action_noise = system.sigma_k.powi(2)
        * ((b.transpose() * u * b).trace() - (system.b_true.transpose() * u * &system.b_true).trace());
    let process_noise = system.sigma_star.powi(2) * u.trace();
    state_term + mixture.mass() * (action_noise - process_noise)
}

struct GaussianMoments {
    mean: f64,
    var: f64,
}

fn fourth_moment(g: &GaussianMoments) -> f64 {
    let (m, v) = (g.mean, g.var);
    m.powi(4) + 6.0 * m * m * v + 3.0 * v * v
}

/// `E[X^2 Y^2]` for jointly Gaussian `X, Y` with covariance `c`.
fn cross_fourth_moment(x: &GaussianMoments, y: &GaussianMoments, c: f64) -> f64 {
    (x.var + x.mean * x.mean) * (y.var + y.mean * y.mean) + 2.0 * c * c + 4.0 * x.mean * y.mean * c
}

fn scalar(m: &DMatrix<f64>) -> Result<f64> {
    if m.shape() != (1, 1) {
        return Err(Error::Unsupported("this analogue is implemented for scalar systems".into()));
    }
    Ok(m[(0, 0)])
}

/// Expected squared one-step prediction error under the normalized occupancy.
pub fn lqr_mle_loss(system: &LqrSystem, a: &DMatrix<f64>, b: &DMatrix<f64>, mixture: &LqrOccupancyMixture) -> Result<f64> {
    let k = scalar(&mixture.controller)?;
    let (a, b, a0, b0) = (scalar(a)?, scalar(b)?, scalar(&system.a_true)?, scalar(&system.b_true)?);
    let df = (a0 - b0 * k) - (a - b * k);
    let db = b0 - b;
    let mass = mixture.mass();
    let mut second = 0.0;
    for t in &mixture.terms {
        second += t.weight / mass * (t.mean[0].powi(2) + t.cov[(0, 0)]);
    }
    Ok(df * df * second + db * db * system.sigma_k.powi(2) + system.sigma_star.powi(2))
}

/// `E_n[sup_U (E_P V - V(s'))^2]` over adversaries `V = U s^2` with `|U| <= u_max`.
pub fn lqr_vaml_loss(
    system: &LqrSystem,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mixture: &LqrOccupancyMixture,
    u_max: f64,
) -> Result<f64> {
    let k = scalar(&mixture.controller)?;
    let (a, b, a0, b0) = (scalar(a)?, scalar(b)?, scalar(&system.a_true)?, scalar(&system.b_true)?);
    let (f, f0) = (a - b * k, a0 - b0 * k);
    let sk2 = system.sigma_k.powi(2);
    let mass = mixture.mass();
    let mut total = 0.0;
    for t in &mixture.terms {
        let (mu, v) = (t.mean[0], t.cov[(0, 0)]);
        let x = GaussianMoments {
            mean: f * mu,
            var: f * f * v + b * b * sk2,
        };
        let y = GaussianMoments {
            mean: f0 * mu,
            var: f0 * f0 * v + b0 * b0 * sk2 + system.sigma_star.powi(2),
        };
        let c = f * f0 * v + b * b0 * sk2;
        let diff_sq = fourth_moment(&x) - 2.0 * cross_fourth_moment(&x, &y, c) + fourth_moment(&y);
        total += t.weight / mass * diff_sq;
    }
    Ok(u_max * u_max * total)
}

/// Linear model `(1 + x/10) s - (0.5 + x/10) a` of the figure grid.
pub fn figure_model(x: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = x as f64 / 10.0;
    (
        DMatrix::from_element(1, 1, 1.0 + t),
        DMatrix::from_element(1, 1, -(0.5 + t)),
    )
}

/// Defaults of the figure experiment: `A* = 1`, `B* = -0.5`, `Q = R = 1`,
/// `sigma_star = 0.1`, `sigma_k = 0.1`, `s0 = 1`, `sigma_0 = 0.1`, `gamma = 0.9`.
pub fn figure_system() -> LqrSystem {
    LqrSystem::scalar(1.0, -0.5, 1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 0.9).expect("defaults are valid")
}

/// Target controller of the figure experiment (`a = 1.3 s`).
pub fn figure_controller() -> DMatrix<f64> {
    DMatrix::from_element(1, 1, -1.3)
}

/// Adversary value matrices available to the selection.
#[derive(Clone, Debug, PartialEq)]
pub enum UGrid {
    /// `U` of every stable (grid model, grid controller) pair within the current model range.
    ModelValues,
    Fixed(Vec<DMatrix<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrSelectionConfig {
    pub model_grid_max: usize,
    pub target_k: DMatrix<f64>,
    pub k_grid: Vec<DMatrix<f64>>,
    pub u_grid: UGrid,
    pub loss_kind: LossKind,
    /// Scale of the Gaussian noise added to each adversary evaluation.
    pub v_noise_eps: f64,
    /// Evaluations averaged inside each noisy loss.
    pub noise_points: usize,
    pub seed: u64,
}

impl LqrSelectionConfig {
    pub fn figure(loss_kind: LossKind, model_grid_max: usize) -> Self {
        Self {
            model_grid_max,
            target_k: figure_controller(),
            k_grid: vec![figure_controller()],
            u_grid: UGrid::ModelValues,
            loss_kind,
            v_noise_eps: 0.0,
            noise_points: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrSelectionRow {
    pub m: usize,
    pub chosen: usize,
    pub inner_max: f64,
    /// Quadratic-cost values of the target controller.
    pub j_true: f64,
    pub j_model: f64,
    /// `|j_model - j_true|`.
    pub ope_error: f64,
    /// Values under the linear reward `-(s + a)`.
    pub linear_j_true: f64,
    pub linear_j_model: f64,
    pub linear_reward_error: f64,
}

struct Adversary {
    u: DMatrix<f64>,
    /// Grid position, stable across model ranges so noise draws repeat.
    key: u64,
}

/// Runs the selection for every model range `0..=M`, `M = 2..=model_grid_max`.
pub fn lqr_model_selection(system: &LqrSystem, config: &LqrSelectionConfig) -> Result<Vec<LqrSelectionRow>> {
    lqr_model_selection_over(system, config, &figure_model)
}

pub fn lqr_model_selection_over(
    system: &LqrSystem,
    config: &LqrSelectionConfig,
    model_at: &dyn Fn(usize) -> (DMatrix<f64>, DMatrix<f64>),
) -> Result<Vec<LqrSelectionRow>> {
    if config.k_grid.is_empty() {
        return Err(Error::Empty("controller grid"));
    }
    if config.model_grid_max < 2 {
        return Err(invalid("model grid", "need at least M = 2"));
    }
    if let UGrid::Fixed(us) = &config.u_grid {
        if us.is_empty() {
            return Err(Error::Empty("adversary grid"));
        }
    }
    if config.v_noise_eps > 0.0 && config.noise_points == 0 {
        return Err(invalid("noise points", "must be positive"));
    }
    let max = config.model_grid_max;
    let models: Vec<_> = (0..=max).map(model_at).collect();
    let k_target = &config.target_k;

    let truth = lqr_value(system, &system.a_true, &system.b_true, k_target)?
        .stable()
        .cloned()
        .ok_or_else(|| Error::Numerical("target controller destabilizes the true system".into()))?;
    let j_true = policy_value(system, &truth);
    let j_true_linear = linear_reward_value(system, &system.a_true, &system.b_true, k_target)?;

    let mut mixtures = Vec::new();
    for k in &config.k_grid {
        let h = tail_horizon(system, k)?;
        mixtures.push(lqr_occupancy(system, k, h)?);
    }
    let target_mixture = lqr_occupancy(system, k_target, tail_horizon(system, k_target)?)?;

    // model values under every grid controller; None when unstable
    let mut model_values: Vec<Vec<Option<LqrValueQuadratic>>> = Vec::new();
    for (a, b) in &models {
        let mut row = Vec::new();
        for k in &config.k_grid {
            row.push(lqr_value_with_noise(system, a, b, k, 0.0)?.stable().cloned());
        }
        model_values.push(row);
    }

    let adversaries_upto = |m: usize| -> Vec<Adversary> {
        match &config.u_grid {
            UGrid::Fixed(us) => us
                .iter()
                .enumerate()
                .map(|(i, u)| Adversary {
                    u: u.clone(),
                    key: i as u64,
                })
                .collect(),
            UGrid::ModelValues => {
                let mut out = Vec::new();
                for (x, row) in model_values.iter().enumerate().take(m + 1) {
                    for (ki, v) in row.iter().enumerate() {
                        if let Some(v) = v {
                            out.push(Adversary {
                                u: v.u_mat.clone(),
                                key: (x * config.k_grid.len() + ki) as u64,
                            });
                        }
                    }
                }
                out
            }
        }
    };

    let noise = |key: u64, ki: usize, tag: u64, model: u64| -> Result<f64> {
        if config.v_noise_eps == 0.0 {
            return Ok(0.0);
        }
        let sd = config.v_noise_eps / (config.noise_points as f64).sqrt();
        let normal = Normal::new(0.0, sd).map_err(|e| Error::Numerical(e.to_string()))?;
        let mut rng = seeded(derive_seed(config.seed, &[key, ki as u64, tag, model]));
        Ok(normal.sample(&mut rng))
    };

    let mut rows = Vec::new();
    for m in 2..=max {
        let advs = adversaries_upto(m);
        let u_max = advs.iter().map(|a| a.u.amax()).fold(0.0, f64::max);
        let mut inner = Vec::with_capacity(m + 1);
        for (x, (a, b)) in models.iter().enumerate().take(m + 1) {
            let value = match config.loss_kind {
                LossKind::Mml => {
                    if model_values[x].iter().any(Option::is_none) {
                        f64::INFINITY
                    } else {
                        let mut best: f64 = 0.0;
                        for (ki, mixture) in mixtures.iter().enumerate() {
                            for adv in &advs {
                                let exact = mml_loss_on(system, mixture, a, b, &adv.u);
                                let perturbed = exact
                                    + mixture.mass()
                                        * (noise(adv.key, ki, 1, x as u64)? - noise(adv.key, ki, 0, 0)?);
                                best = best.max(perturbed.abs());
                            }
                        }
                        best
                    }
                }
                LossKind::Mle => lqr_mle_loss(system, a, b, &target_mixture)?,
                LossKind::VamlL2 => lqr_vaml_loss(system, a, b, &target_mixture, u_max)?,
                other => {
                    return Err(Error::Unsupported(format!("{other} loss for linear-quadratic selection")))
                }
            };
            inner.push(value);
        }
        let mut chosen = 0;
        for (i, v) in inner.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::Numerical(format!("loss of model {i} is NaN")));
            }
            if *v < inner[chosen] {
                chosen = i;
            }
        }
        let (a, b) = &models[chosen];
        let ki_target = config.k_grid.iter().position(|k| k == k_target);
        let j_model = match ki_target.and_then(|ki| model_values[chosen][ki].clone()) {
            Some(v) => policy_value(system, &v),
            None => match lqr_value_with_noise(system, a, b, k_target, 0.0)? {
                LqrSolution::Stable(v) => policy_value(system, &v),
                LqrSolution::Unstable { .. } => f64::INFINITY,
            },
        };
        let j_linear = linear_reward_value(system, a, b, k_target)?;
        rows.push(LqrSelectionRow {
            m,
            chosen,
            inner_max: inner[chosen],
            j_true,
            j_model,
            ope_error: (j_model - j_true).abs(),
            linear_j_true: j_true_linear,
            linear_j_model: j_linear,
            linear_reward_error: (j_linear - j_true_linear).abs(),
        });
    }
    Ok(rows)
}

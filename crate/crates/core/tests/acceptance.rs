//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mmllab::ci::ci_bounds_pairs;
use mmllab::classes::{solve_linear_closed_form, solve_tabular, solve_tabular_or, FunctionClassHandle, LinearClass, TabularBall};
use mmllab::losses::{mle_loss, ope_error_identity, AdversaryPair, IdentityVariant, LossContext, LossKind};
use mmllab::lqr::{
    figure_system, fixed_point_residual, lqr_mml_loss, lqr_model_selection, lqr_value, tail_horizon, LqrSelectionConfig,
    LqrSystem,
};
use mmllab::mdp::{
    behavior_distribution, density_ratio, evaluate_policy, generate_dataset, load_model_grid, solve_occupancy,
    solve_value_function, Dataset, Policy, TabularMdp, Transition, TransitionModel, ValueFunction, WeightFunction,
};
use mmllab::minimax::{minimize_finite, misspec_gap};
use mmllab::morel::{
    build_pessimistic_mdp, ensemble_mean, fit_ensemble, run_opo_morel, value_adversaries, AlphaRule, MemberClass,
    MorelConfig, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PENALTY,
};
use mmllab::ope::{inner_max, run_ope, run_opo, ModelClass, OpeProblem, OpoProblem, Realizability, Sampling};
use mmllab::planner::{plan_optimal, DEFAULT_TOL};
use mmllab::rkhs::{rkhs_max_mml_sq, Embedding, KernelSpec, ModelExpectation};
use mmllab::rng::{derive_seed, seeded, Rng};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lib<T>(r: mmllab::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("library error: {e}"))
}

fn random_instance(rng: &mut Rng, max_states: usize, max_actions: usize, gammas: &[f64]) -> TabularMdp {
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(1..=max_actions);
    let gamma = gammas[rng.random_range(0..gammas.len())];
    TabularMdp::random(ns, na, gamma, rng)
}

fn c1_identity() -> Check {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mdp = random_instance(&mut rng, 5, 3, &[0.5, 0.9, 0.98]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let target = Policy::random(ns, na, &mut rng);
        let behavior = Policy::random(ns, na, &mut rng);
        let model = TransitionModel::random(ns, na, &mut rng);
        for variant in [IdentityVariant::TrueWeightModelValue, IdentityVariant::ModelWeightTrueValue] {
            let (lhs, rhs) = lib(ope_error_identity(&mdp, &target, &behavior, &model, variant))?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-8 && secs < 10.0,
        format!("max |lhs - rhs| = {worst:.2e} over 400 checks, {secs:.2} s"),
    )
}

fn c2_ope_bound() -> Check {
    let mut rng = seeded(202);
    let (mut held, mut slack) = (0, f64::INFINITY);
    for i in 0..100 {
        let mdp = random_instance(&mut rng, 4, 2, &[0.5, 0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let behavior = Policy::uniform(ns, na);
        let target = Policy::random(ns, na, &mut rng);
        let grid = ModelClass::Grid((0..6).map(|_| TransitionModel::random(ns, na, &mut rng)).collect());
        let adversaries = FunctionClassHandle::TabularBall(lib(TabularBall::new(ns, na, 1.0))?);
        let r = lib(run_ope(&OpeProblem {
            mdp: &mdp,
            behavior: &behavior,
            target: &target,
            model_class: &grid,
            adversaries: &adversaries,
            loss_kind: LossKind::Mml,
            realizability: Realizability::ExactInjected,
            sampling: Sampling::Exact,
            seed: i,
        }))?;
        if r.abs_error <= r.bound + 1e-8 {
            held += 1;
        }
        slack = slack.min(r.bound - r.abs_error);
    }
    ensure(held == 100, format!("{held}/100 instances within gamma * min-max |L|; min slack {slack:.2e}"))
}

fn c3_opo_bound() -> Check {
    let mut rng = seeded(303);
    let (mut held, mut slack) = (0, f64::INFINITY);
    for i in 0..100 {
        let mdp = random_instance(&mut rng, 4, 2, &[0.5, 0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let behavior = Policy::uniform(ns, na);
        let grid = ModelClass::Grid((0..6).map(|_| TransitionModel::random(ns, na, &mut rng)).collect());
        let adversaries = FunctionClassHandle::TabularBall(lib(TabularBall::new(ns, na, 1.0))?);
        let r = lib(run_opo(&OpoProblem {
            mdp: &mdp,
            behavior: &behavior,
            model_class: &grid,
            adversaries: &adversaries,
            loss_kind: LossKind::Mml,
            realizability: Realizability::ExactInjected,
            sampling: Sampling::Exact,
            seed: i,
        }))?;
        if r.suboptimality <= r.bound + 1e-8 {
            held += 1;
        }
        slack = slack.min(r.bound - r.suboptimality);
    }
    ensure(held == 100, format!("{held}/100 instances within 2 gamma * min-max |L|; min slack {slack:.2e}"))
}

fn rec(s: usize, a: usize, x: usize) -> Transition {
    Transition {
        s,
        a,
        s_next: x,
        r: 0.0,
        episode: 0,
    }
}

fn c4_tabular() -> Check {
    // 2 states, 2 actions; (s, a, s') counts chosen by hand
    let counts = [[3, 1], [1, 1], [0, 4], [2, 3]];
    let mut records = Vec::new();
    for (sa, row) in counts.iter().enumerate() {
        for (x, &c) in row.iter().enumerate() {
            records.extend(std::iter::repeat_n(rec(sa / 2, sa % 2, x), c));
        }
    }
    let data = lib(Dataset::new(2, 2, records))?;
    let tab = lib(solve_tabular(&data, 2, 2))?;
    let alpha = lib(solve_linear_closed_form(&data, &LinearClass::tabular(2, 2)))?;
    let linear = lib(LinearClass::tabular(2, 2).model(&alpha))?;
    let bits = |m: &TransitionModel| m.as_slice().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    let same_bits = bits(&tab) == bits(&linear);
    let counts_exact = counts.iter().enumerate().all(|(sa, row)| {
        let n = (row[0] + row[1]) as f64;
        (0..2).all(|x| tab.prob(sa / 2, sa % 2, x) == row[x] as f64 / n)
    });
    let base = lib(mle_loss(&data, &tab))?.value;
    let mut worse_or_equal = 0;
    let mut beaten = Vec::new();
    let steps: Vec<f64> = (0..10).map(|i| -0.09 + 0.02 * i as f64).collect();
    for &d0 in &steps {
        for &d1 in &steps {
            for &d3 in &steps {
                let mut p = tab.as_slice().to_vec();
                // rows (0,0), (0,1), (1,1); row (1,0) is degenerate and stays put
                for (row, d) in [(0, d0), (1, d1), (3, d3)] {
                    let q = (p[2 * row] + d).clamp(0.01, 0.99);
                    p[2 * row] = q;
                    p[2 * row + 1] = 1.0 - q;
                }
                let m = lib(TransitionModel::new(2, 2, p))?;
                let v = lib(mle_loss(&data, &m))?.value;
                if v >= base {
                    worse_or_equal += 1;
                } else {
                    beaten.push(v);
                }
            }
        }
    }
    ensure(
        same_bits && counts_exact && worse_or_equal == 1000,
        format!(
            "closed form bit-identical: {same_bits}; equals counts: {counts_exact}; \
             MLE minimizer over {worse_or_equal}/1000 perturbations"
        ),
    )
}

fn gram_oracle(data: &Dataset, h: [f64; 3], model: &TransitionModel) -> f64 {
    let (ns, na) = (data.n_states(), data.n_actions());
    let idx = |s: usize, a: usize, x: usize| (s * na + a) * ns + x;
    let dim = ns * na * ns;
    let n = data.len() as f64;
    let mut c = vec![0.0; dim];
    for t in data.records() {
        for x in 0..ns {
            c[idx(t.s, t.a, x)] += model.prob(t.s, t.a, x) / n;
        }
        c[idx(t.s, t.a, t.s_next)] -= 1.0 / n;
    }
    let k = |u: f64, v: f64, h: f64| (-(u - v) * (u - v) / (2.0 * h * h)).exp();
    let mut total = 0.0;
    for s in 0..ns {
        for a in 0..na {
            for x in 0..ns {
                for s2 in 0..ns {
                    for a2 in 0..na {
                        for x2 in 0..ns {
                            let g = k(s as f64, s2 as f64, h[0]) * k(a as f64, a2 as f64, h[1]) * k(x as f64, x2 as f64, h[2]);
                            total += c[idx(s, a, x)] * g * c[idx(s2, a2, x2)];
                        }
                    }
                }
            }
        }
    }
    total
}

fn c5_rkhs() -> Check {
    let mut rng = seeded(505);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let mdp = random_instance(&mut rng, 4, 2, &[0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let n = rng.random_range(1..=5);
        let data = lib(generate_dataset(&mdp, &Policy::uniform(ns, na), n, 3, rng.random()))?;
        let h = [0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()];
        let kernel = lib(KernelSpec::product(Embedding::index(ns), Embedding::index(na), h[0], h[1], h[2]))?;
        let model = TransitionModel::random(ns, na, &mut rng);
        let closed = lib(rkhs_max_mml_sq(&data, &kernel, &model, ModelExpectation::Exact))?;
        worst = worst.max((closed - gram_oracle(&data, h, &model)).abs());
    }
    // deterministic dynamics, model equal to them
    let next = [1, 2, 0, 0, 2, 1];
    let det = lib(TransitionModel::deterministic(3, 2, &next))?;
    let mdp = lib(TabularMdp::new(det.clone(), vec![0.0; 6], 1.0, 0.9, vec![1.0, 0.0, 0.0]))?;
    let data = lib(generate_dataset(&mdp, &Policy::uniform(3, 2), 5, 5, 9))?;
    let kernel = lib(KernelSpec::product(Embedding::index(3), Embedding::index(2), 1.0, 1.0, 1.0))?;
    let perfect = lib(rkhs_max_mml_sq(&data, &kernel, &det, ModelExpectation::Exact))?;
    ensure(
        worst <= 1e-10 && perfect == 0.0,
        format!("max |closed form - Gram oracle| = {worst:.2e} on 30 datasets; perfect deterministic model gives {perfect:e}"),
    )
}

fn c6_mml_below_vaml() -> Check {
    let mut rng = seeded(606);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..50 {
        let mdp = random_instance(&mut rng, 4, 2, &[0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let ctx = lib(LossContext::exact(&mdp, &Policy::random(ns, na, &mut rng)))?;
        let grid: Vec<_> = (0..5).map(|_| TransitionModel::random(ns, na, &mut rng)).collect();
        let pairs = (0..6)
            .map(|_| {
                let v = ValueFunction::new((0..ns).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect());
                AdversaryPair::new(WeightFunction::constant(ns, na, 1.0), v)
            })
            .collect::<mmllab::Result<Vec<_>>>();
        let class = lib(FunctionClassHandle::finite_grid(lib(pairs)?))?;
        let mml = lib(minimize_finite(&ctx, &grid, &class, LossKind::Mml))?.inner_max;
        let vaml = lib(minimize_finite(&ctx, &grid, &class, LossKind::VamlL2))?.inner_max;
        let margin = vaml - mml * mml;
        if margin < 0.0 {
            violations += 1;
        }
        min_margin = min_margin.min(margin);
    }
    ensure(
        violations == 0,
        format!("{violations} violations of min-max L_MML^2 <= min L_VAML on 50 instances; min margin {min_margin:.3e}"),
    )
}

fn c7_vaml_l1() -> Check {
    let m_bound = 1.0;
    let mut notes = Vec::new();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for alpha_star in [0.1, 0.3, 0.7, 0.9] {
        let row = |a: f64| vec![a, 1.0 - a, a, 1.0 - a];
        let truth = lib(TransitionModel::new(2, 1, row(alpha_star)))?;
        let mdp = lib(TabularMdp::new(truth, vec![0.0, 0.0], 1.0, 0.9, vec![0.5, 0.5]))?;
        let ctx = lib(LossContext::from_distribution(&mdp, &[0.5, 0.5]))?;
        let alphas: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let grid = alphas
            .iter()
            .map(|&a| TransitionModel::new(2, 1, row(a)))
            .collect::<mmllab::Result<Vec<_>>>();
        let grid = lib(grid)?;
        // piecewise-constant V on the partition {0} | {1}, vertices of [0, M]^2
        let vertices = [(0.0, 0.0), (m_bound, 0.0), (0.0, m_bound), (m_bound, m_bound)];
        let pairs = vertices
            .iter()
            .map(|&(x, y)| AdversaryPair::new(WeightFunction::constant(2, 1, 1.0), ValueFunction::new(vec![x, y])))
            .collect::<mmllab::Result<Vec<_>>>();
        let class = lib(FunctionClassHandle::finite_grid(lib(pairs)?))?;
        let vaml = lib(minimize_finite(&ctx, &grid, &class, LossKind::VamlL1))?;
        let mml = lib(minimize_finite(&ctx, &grid, &class, LossKind::Mml))?;
        for (i, &a) in alphas.iter().enumerate() {
            let vaml_formula = (alpha_star * (a - 1.0f64).abs() + (1.0 - alpha_star) * a) * m_bound;
            let mml_formula = (a - alpha_star).abs() * m_bound;
            worst = worst
                .max((vaml.per_model_inner_max[i] - vaml_formula).abs())
                .max((mml.per_model_inner_max[i] - mml_formula).abs());
        }
        let (va, ma) = (alphas[vaml.chosen], alphas[mml.chosen]);
        let good = (va == 0.0 || va == 1.0) && (ma - alpha_star).abs() <= 0.01 + 1e-12;
        ok &= good;
        notes.push(format!("a*={alpha_star}: vaml->{va} mml->{ma}"));
    }
    ensure(
        ok && worst <= 1e-12,
        format!("{}; max formula deviation {worst:.1e}", notes.join(", ")),
    )
}

fn c8_lqr() -> Check {
    let start = Instant::now();
    let sys = LqrSystem::scalar(1.0, -0.5, 1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 0.9).map_err(|e| e.to_string())?;
    let k = DMatrix::from_element(1, 1, -1.0);
    let v = lib(lqr_value(&sys, &sys.a_true, &sys.b_true, &k))?;
    let v = v.stable().ok_or("example is unstable")?.clone();
    let residual = fixed_point_residual(&sys, &sys.a_true, &sys.b_true, &k, &v);
    // scalar oracle U = (Q + K^2 R) / (1 - gamma F^2), F = A - B K
    let f: f64 = 1.0 - (-0.5) * (-1.0);
    let u_oracle = (1.0 + 1.0) / (1.0 - 0.9 * f * f);
    let u_err = (v.u_mat[(0, 0)] - u_oracle).abs();
    let literal_err = (v.u_mat[(0, 0)] - 2.0 / 0.775).abs();

    let mut rng = seeded(808);
    let mut worst_rel: f64 = 0.0;
    for i in 0..5 {
        let a0 = 0.5 + 0.7 * rng.random::<f64>();
        let b0 = -(0.3 + 0.7 * rng.random::<f64>());
        let f0 = 1.2 * rng.random::<f64>() - 0.6;
        let k0 = (a0 - f0) / b0;
        let gamma = if i % 2 == 0 { 0.9 } else { 0.8 };
        let sys = LqrSystem::scalar(
            a0,
            b0,
            1.0,
            1.0,
            0.05 + 0.25 * rng.random::<f64>(),
            0.05 + 0.25 * rng.random::<f64>(),
            0.1 + 0.2 * rng.random::<f64>(),
            0.5 + rng.random::<f64>(),
            gamma,
        )
        .map_err(|e| e.to_string())?;
        // redraw until the closed loops differ enough for the loss to dominate sampling noise
        let (a, b) = loop {
            let sign = |rng: &mut Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
            let a = a0 + sign(&mut rng) * (0.2 + 0.3 * rng.random::<f64>());
            let b = b0 + sign(&mut rng) * (0.2 + 0.3 * rng.random::<f64>());
            let f = a - b * k0;
            if (f * f - f0 * f0).abs() >= 0.1 {
                break (a, b);
            }
        };
        let u = 0.5 + 1.5 * rng.random::<f64>();
        let m = |x: f64| DMatrix::from_element(1, 1, x);
        let horizon = lib(tail_horizon(&sys, &m(k0)))?;
        let closed = lib(lqr_mml_loss(&sys, &m(a), &m(b), &m(k0), &m(u), horizon))?;
        let mc = lqr_mc(&sys, a, b, k0, u, 1_000_000, derive_seed(808, &[i]));
        worst_rel = worst_rel.max(((mc - closed) / closed).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        residual <= 1e-10 && u_err <= 1e-12 && literal_err <= 1e-12 && worst_rel <= 0.02 && secs < 60.0,
        format!(
            "residual {residual:.1e}; U error vs oracle {u_err:.1e} (vs 2/0.775: {literal_err:.1e}); \
             worst MC relative gap {:.2}% on 5 instances; {secs:.1} s",
            100.0 * worst_rel
        ),
    )
}

/// Monte Carlo of the one-step model-consistency loss with `w = 1`, `V(s) = u s^2`,
/// over the unnormalized discounted occupancy of the noisy controller `-k s`.
fn lqr_mc(sys: &LqrSystem, a: f64, b: f64, k: f64, u: f64, n: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let (a0, b0, g) = (sys.a_true[(0, 0)], sys.b_true[(0, 0)], sys.gamma);
    let mut total = 0.0;
    for _ in 0..n {
        let z = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
        let mut s = sys.s0[0] + sys.sigma_0 * z(&mut rng);
        // time index t with probability (1 - gamma) gamma^t
        while rng.random::<f64>() < g {
            let act = -k * s + sys.sigma_k * z(&mut rng);
            s = a0 * s + b0 * act + sys.sigma_star * z(&mut rng);
        }
        let act = -k * s + sys.sigma_k * z(&mut rng);
        let next_true = a0 * s + b0 * act + sys.sigma_star * z(&mut rng);
        let next_model = a * s + b * act;
        total += u * (next_model * next_model - next_true * next_true);
    }
    total / n as f64 / (1.0 - g)
}

fn c9_lqr_figure() -> Check {
    let sys = figure_system();
    let mut rows = Vec::new();
    for kind in [LossKind::Mml, LossKind::Mle, LossKind::VamlL2] {
        rows.push(lib(lqr_model_selection(&sys, &LqrSelectionConfig::figure(kind, 19)))?);
    }
    let all_zero_at_2 = rows.iter().all(|r| r[0].m == 2 && r[0].chosen == 0);
    let mml: Vec<f64> = rows[0].iter().map(|r| r.ope_error).collect();
    let nonincreasing = mml.windows(2).all(|w| w[1] <= w[0]);
    let (mml_19, mle_19) = (rows[0][17].ope_error, rows[1][17].ope_error);
    ensure(
        all_zero_at_2 && nonincreasing && mml_19 < mle_19 && rows[0][17].m == 19,
        format!(
            "(a) x=0 at M=2 for all: {all_zero_at_2}; (b) MML error nonincreasing: {nonincreasing} \
             ({:.4} -> {:.4}); (c) MML {mml_19:.4} < MLE {mle_19:.4}: {}",
            mml[0],
            mml[17],
            mml_19 < mle_19
        ),
    )
}

fn c10_verifiability() -> Check {
    let sys = figure_system();
    let seeds = 5u64;
    let mut curves = Vec::new();
    for eps in [0.0, 0.5, 1.0] {
        let mut mean = vec![0.0; 18];
        for seed in 0..seeds {
            let mut cfg = LqrSelectionConfig::figure(LossKind::Mml, 19);
            cfg.v_noise_eps = eps;
            cfg.seed = derive_seed(2024, &[seed]);
            for (i, r) in lib(lqr_model_selection(&sys, &cfg))?.iter().enumerate() {
                mean[i] += r.ope_error / seeds as f64;
            }
        }
        curves.push(mean);
    }
    let at_19: Vec<f64> = curves.iter().map(|c| c[17]).collect();
    let monotone_eps = at_19.windows(2).all(|w| w[1] >= w[0]);
    // centered 3-point moving average, truncated at the ends
    let c = &curves[0];
    let smooth: Vec<f64> = (0..c.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(c.len() - 1);
            c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let decreasing_m = smooth.windows(2).all(|w| w[1] <= w[0]) && smooth[17] < smooth[0];
    ensure(
        monotone_eps && decreasing_m,
        format!(
            "M=19 mean error by eps {{0, 0.5, 1}}: {:.4} {:.4} {:.4}; smoothed eps=0 curve {:.4} -> {:.4} decreasing: {decreasing_m}",
            at_19[0], at_19[1], at_19[2], smooth[0], smooth[17]
        ),
    )
}

fn c11_ci() -> Check {
    let mut rng = seeded(1111);
    let (mut valid, mut tight, mut collapsed) = (0, 0, 0);
    let mut worst_excess: f64 = 0.0;
    let n = 20;
    for i in 0..n {
        let mdp = if i == 0 {
            lib(TabularMdp::load(fixture("three_state.json")))?
        } else {
            random_instance(&mut rng, 4, 2, &[0.9])
        };
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let behavior = Policy::uniform(ns, na);
        let target = Policy::random(ns, na, &mut rng);
        let data_sa = lib(behavior_distribution(&mdp, &behavior))?;
        let ctx = lib(LossContext::from_distribution(&mdp, &data_sa))?;
        let mut grid: Vec<_> = (0..4).map(|_| TransitionModel::random(ns, na, &mut rng)).collect();
        grid.push(mdp.transition().clone());
        let v_true = lib(solve_value_function(&mdp, &target, mdp.transition()))?;
        let mut pairs = Vec::new();
        for m in &grid {
            let w = lib(density_ratio(&lib(solve_occupancy(&mdp, &target, m))?, &data_sa))?;
            pairs.push(lib(AdversaryPair::new(w, v_true.clone()))?);
        }
        let ci = lib(ci_bounds_pairs(&ctx, mdp.gamma(), &grid, &pairs))?;
        let j = lib(evaluate_policy(&mdp, &target, mdp.transition()))?;
        let class = lib(FunctionClassHandle::finite_grid(pairs))?;
        let min_max = lib(minimize_finite(&ctx, &grid, &class, LossKind::Mml))?.inner_max;
        if ci.contains(j, 1e-8) {
            valid += 1;
        }
        let excess = ci.gap - 2.0 * min_max;
        worst_excess = worst_excess.max(excess);
        if excess <= 1e-8 {
            tight += 1;
        }
        if (ci.upper - j).abs() <= 1e-8 && (ci.lower - j).abs() <= 1e-8 {
            collapsed += 1;
        }
    }
    ensure(
        valid == n && tight == n && collapsed == n,
        format!(
            "validity {valid}/{n}; tightness UB-LB <= 2 min-max|L| {tight}/{n} (worst excess {worst_excess:.3}); \
             collapse to J with P* in grid {collapsed}/{n}"
        ),
    )
}

fn c12_misspecification() -> Check {
    let mut rng = seeded(1212);
    let mut held = 0;
    let mut slack = f64::INFINITY;
    for _ in 0..50 {
        let mdp = random_instance(&mut rng, 4, 2, &[0.5, 0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let behavior = Policy::uniform(ns, na);
        let target = Policy::random(ns, na, &mut rng);
        let data_sa = lib(behavior_distribution(&mdp, &behavior))?;
        let ctx = lib(LossContext::from_distribution(&mdp, &data_sa))?;
        let grid: Vec<_> = (0..6).map(|_| TransitionModel::random(ns, na, &mut rng)).collect();
        // three random pairs: far from the exact (w, V) objects
        let restricted = (0..3)
            .map(|_| {
                let w = WeightFunction::new(ns, na, (0..ns * na).map(|_| rng.random::<f64>()).collect())?;
                AdversaryPair::new(w, ValueFunction::new((0..ns).map(|_| rng.random::<f64>()).collect()))
            })
            .collect::<mmllab::Result<Vec<_>>>();
        let restricted = lib(FunctionClassHandle::finite_grid(lib(restricted)?))?;
        let w_true = lib(density_ratio(&lib(solve_occupancy(&mdp, &target, mdp.transition()))?, &data_sa))?;
        let v_true = lib(solve_value_function(&mdp, &target, mdp.transition()))?;
        let mut targets = Vec::new();
        for m in &grid {
            let w_m = lib(density_ratio(&lib(solve_occupancy(&mdp, &target, m))?, &data_sa))?;
            let v_m = lib(solve_value_function(&mdp, &target, m))?;
            targets.push(vec![
                lib(AdversaryPair::new(w_true.clone(), v_m))?,
                lib(AdversaryPair::new(w_m, v_true.clone()))?,
            ]);
        }
        let sel = lib(minimize_finite(&ctx, &grid, &restricted, LossKind::Mml))?;
        let gap = lib(misspec_gap(&ctx, &grid, &restricted, &targets))?;
        let err = (lib(evaluate_policy(&mdp, &target, &grid[sel.chosen]))? - lib(evaluate_policy(&mdp, &target, mdp.transition()))?).abs();
        let bound = mdp.gamma() * (sel.inner_max + gap);
        if err <= bound + 1e-8 {
            held += 1;
        }
        slack = slack.min(bound - err);
    }
    ensure(held == 50, format!("{held}/50 instances within gamma (min-max|L| + eps_H); min slack {slack:.2e}"))
}

fn c13_zero_loss() -> Check {
    let mut rng = seeded(1313);
    let (mut zero_at_counts, mut positive_off, mut zero_off_support, mut off_support_cases) = (0, 0, 0, 0);
    let n = 20;
    for _ in 0..n {
        let mdp = random_instance(&mut rng, 4, 2, &[0.9]);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let data = lib(generate_dataset(&mdp, &Policy::uniform(ns, na), rng.random_range(6..40), 5, rng.random()))?;
        let ctx = LossContext::empirical(&data);
        let ball = FunctionClassHandle::TabularBall(lib(TabularBall::new(ns, na, 1.0))?);
        let fallback = TransitionModel::random(ns, na, &mut rng);
        let counts = lib(solve_tabular_or(&data, &fallback))?;
        if lib(inner_max(&ctx, &ball, &counts))? <= 1e-12 {
            zero_at_counts += 1;
        }
        // move one observed row toward a random law
        let sa_counts = data.sa_counts();
        let observed = (0..ns * na).filter(|&i| sa_counts[i] > 0).collect::<Vec<_>>();
        let pick = observed[rng.random_range(0..observed.len())];
        let other = TransitionModel::random(ns, na, &mut rng);
        let mut p = counts.as_slice().to_vec();
        for x in 0..ns {
            p[pick * ns + x] = 0.5 * p[pick * ns + x] + 0.5 * other.as_slice()[pick * ns + x];
        }
        let moved = lib(TransitionModel::new(ns, na, p))?;
        let differs = moved.row(pick / na, pick % na) != counts.row(pick / na, pick % na);
        if !differs || lib(inner_max(&ctx, &ball, &moved))? > 1e-9 {
            positive_off += 1;
        }
        // changing an unobserved row leaves the loss at zero
        if let Some(gap) = (0..ns * na).find(|&i| sa_counts[i] == 0) {
            off_support_cases += 1;
            let mut p = counts.as_slice().to_vec();
            p[gap * ns..(gap + 1) * ns].copy_from_slice(other.row(gap / na, gap % na));
            let changed = lib(TransitionModel::new(ns, na, p))?;
            if lib(inner_max(&ctx, &ball, &changed))? <= 1e-12 {
                zero_off_support += 1;
            }
        }
    }
    ensure(
        zero_at_counts == n && positive_off == n && zero_off_support == off_support_cases,
        format!(
            "zero at empirical conditional {zero_at_counts}/{n}; positive when an observed row moves {positive_off}/{n}; \
             unobserved rows irrelevant {zero_off_support}/{off_support_cases}"
        ),
    )
}

fn c14_morel() -> Check {
    let mdp = lib(TabularMdp::load(fixture("six_state_ladder.json")))?;
    let grid = lib(load_model_grid(fixture("six_state_ladder_grid.json")))?;
    let behavior = Policy::uniform(6, 2);
    let adversaries = lib(value_adversaries(&mdp, &grid, &behavior))?;
    let member_class = MemberClass::Grid {
        models: grid.clone(),
        adversaries: adversaries.clone(),
    };

    // pessimism disabled: the plan is the optimal policy of the mean model
    let mut plain = 0;
    for seed in 0..10 {
        let data = lib(generate_dataset(&mdp, &behavior, 16, 8, seed))?;
        let members: Vec<_> = lib(fit_ensemble(&data, &member_class, LossKind::Mml, DEFAULT_ENSEMBLE_SIZE, seed))?
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        let p = lib(build_pessimistic_mdp(&members, &data, DEFAULT_PENALTY, &mdp, AlphaRule::Fixed(f64::INFINITY)))?;
        let mean = lib(ensemble_mean(&members))?;
        let standard = lib(plan_optimal(&lib(mdp.with_transition(mean.clone()))?, &mean, DEFAULT_TOL))?;
        if p.n_flagged() == 0 && lib(p.plan())? == standard {
            plain += 1;
        }
    }

    // hand-built: two members that differ only at (1, 1) by TV 0.3
    let t = lib(TransitionModel::new(2, 2, vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.7]))?;
    let small = lib(TabularMdp::new(t.clone(), vec![1.0, 0.0, 0.5, 0.2], 1.0, 0.9, vec![1.0, 0.0]))?;
    let data = lib(Dataset::new(2, 2, vec![rec(0, 0, 1), rec(0, 1, 0), rec(1, 0, 1), rec(1, 1, 1)]))?;
    let mut probs = t.as_slice().to_vec();
    probs[6] = 0.9;
    probs[7] = 0.1;
    let b = lib(TransitionModel::new(2, 2, probs))?;
    let p = lib(build_pessimistic_mdp(&[t.clone(), b], &data, -5.0, &small, AlphaRule::Fixed(0.1)))?;
    let aug = p.augmented();
    let flags: Vec<bool> = (0..2).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| p.is_flagged(s, a)).collect();
    let hand_built = flags == [false, false, false, true]
        && aug.transition().row(1, 1) == [0.0, 0.0, 1.0]
        && aug.reward(1, 1) == -5.0
        && aug.transition().row(2, 0) == [0.0, 0.0, 1.0]
        && aug.reward(2, 0) == -5.0
        && aug.transition().row(0, 1) == [1.0, 0.0, 0.0]
        && aug.reward(0, 1) == 0.0;

    // low-data head-to-head
    let (mut ge, mut gt, seeds) = (0, 0, 50u64);
    for seed in 0..seeds {
        let mut j = Vec::new();
        for kind in [LossKind::Mml, LossKind::Mle] {
            let cfg = MorelConfig {
                member_class: member_class.clone(),
                loss_kind: kind,
                ensemble_size: DEFAULT_ENSEMBLE_SIZE,
                n_transitions: 16,
                episode_length: 8,
                penalty: DEFAULT_PENALTY,
                alpha: AlphaRule::Median,
                seed,
            };
            j.push(lib(run_opo_morel(&mdp, &behavior, &cfg))?.j_policy);
        }
        if j[0] >= j[1] - 1e-12 {
            ge += 1;
        }
        if j[0] > j[1] + 1e-12 {
            gt += 1;
        }
    }
    let rate = ge as f64 / seeds as f64;
    ensure(
        plain == 10 && hand_built && rate >= 0.6,
        format!(
            "disabled pessimism = plain planning {plain}/10; hand-built flags: {hand_built}; \
             MML >= MLE on {ge}/{seeds} seeds ({:.0}%), strictly better on {gt}, strictly worse on {}",
            100.0 * rate,
            seeds as usize - ge
        ),
    )
}

fn c15_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_mmllab");
    let configs = fixture("configs");
    let mut names: Vec<_> = std::fs::read_dir(&configs)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut same = 0;
    for cfg in &names {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let status = Command::new(bin)
                .arg("--config")
                .arg(cfg)
                .args(["--threads", threads, "--out"])
                .arg(dir.path())
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{} failed: {}", cfg.display(), String::from_utf8_lossy(&status.stderr)));
            }
            let csv = std::fs::read_dir(dir.path())
                .map_err(|e| e.to_string())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .find(|p| p.extension().is_some_and(|x| x == "csv"))
                .ok_or("no csv written")?;
            outputs.push(std::fs::read(csv).map_err(|e| e.to_string())?);
        }
        if outputs[0] == outputs[1] && !outputs[0].is_empty() {
            same += 1;
        }
    }
    ensure(
        same == names.len() && !names.is_empty(),
        format!("{same}/{} fixture configs byte-identical across reruns (1 and 4 threads)", names.len()),
    )
}

fn main() {
    let criteria: [Criterion; 15] = [
        ("OPE error identity", c1_identity),
        ("OPE bound", c2_ope_bound),
        ("OPO bound", c3_opo_bound),
        ("tabular coincidence", c4_tabular),
        ("RKHS closed form", c5_rkhs),
        ("MML below VAML", c6_mml_below_vaml),
        ("VAML-L1 counterexample", c7_vaml_l1),
        ("LQR analytics", c8_lqr),
        ("LQR figure ordering", c9_lqr_figure),
        ("verifiability sweep", c10_verifiability),
        ("CI bounds", c11_ci),
        ("misspecification bound", c12_misspecification),
        ("zero-loss uniqueness", c13_zero_loss),
        ("pessimistic pipeline", c14_morel),
        ("CLI determinism", c15_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL {name} [{secs:.1} s]: {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 15 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}

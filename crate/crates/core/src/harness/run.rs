use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentKind, MemberClassSpec, Plan, TabularSetup, STREAM_CELL};
use crate::ci::ci_bounds_pairs;
use crate::classes::{enumerate_adversaries, FunctionClassHandle};
use crate::error::{Error, Result};
use crate::losses::{AdversaryPair, LossContext, LossKind};
use crate::lqr::{lqr_model_selection, LqrSelectionConfig, UGrid};
use crate::mdp::{
    behavior_distribution, density_ratio, evaluate_policy, generate_dataset, solve_occupancy,
    solve_value_function,
};
use crate::minimax::{minimize_finite, DEFAULT_RESOLUTION};
use crate::morel::{run_opo_morel, MemberClass, MorelConfig};
use crate::ope::{run_ope, run_opo, ModelClass, OpeProblem, OpoProblem, Sampling};
use crate::rng::derive_seed;

/// One CSV line; `None` fields are written empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CsvRow {
    pub experiment: String,
    pub loss_kind: String,
    pub seed: u64,
    pub n_transitions: Option<usize>,
    pub grid_param: Option<String>,
    pub j_true: Option<f64>,
    pub j_estimate: Option<f64>,
    pub abs_error: Option<f64>,
    pub bound: Option<f64>,
    pub log_relative_mse: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Only filled when timing is requested, since it breaks byte-identical reruns.
    pub wall_ms: Option<f64>,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub timing: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: usize,
    pub config_hash: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    library_version: &'static str,
    experiment: &'static str,
    master_seed: u64,
    config_hash: &'a str,
    rows: usize,
    csv: String,
    config: serde_json::Value,
}

/// First 16 hex digits of SHA-256 over the resolved config without its output path.
pub fn config_hash(plan: &Plan) -> Result<String> {
    let mut c = plan.config.resolved();
    c.output = None;
    let digest = Sha256::digest(serde_json::to_vec(&c)?);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

struct Cell {
    seed_index: usize,
    seed: u64,
    size: Option<usize>,
    loss: LossKind,
}

impl Cell {
    fn label(&self) -> String {
        let n = self.size.map_or("exact".to_string(), |n| n.to_string());
        format!("seed#{} ({}) n={} loss={}", self.seed_index, self.seed, n, self.loss)
    }

    fn sampling(&self, episode_length: usize) -> Sampling {
        match self.size {
            None => Sampling::Exact,
            Some(n_transitions) => Sampling::Empirical {
                n_transitions,
                episode_length,
            },
        }
    }
}

fn cells(plan: &Plan) -> Vec<Cell> {
    let c = &plan.config;
    let sizes: Vec<Option<usize>> = if c.n_transitions.is_empty() {
        vec![None]
    } else {
        c.n_transitions.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for seed_index in 0..c.n_seeds {
        let seed = derive_seed(c.master_seed, &[STREAM_CELL, seed_index as u64]);
        for &size in &sizes {
            for loss in c.loss_kinds() {
                out.push(Cell {
                    seed_index,
                    seed,
                    size,
                    loss,
                });
            }
        }
    }
    out
}

fn in_cell<T>(cell: &Cell, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Cell {
        cell: cell.label(),
        source: Box::new(e),
    })
}

fn grid_label(setup: &TabularSetup) -> String {
    match &setup.grid {
        Some(g) => format!("models={}", g.len()),
        None => "tabular".into(),
    }
}

fn model_class(setup: &TabularSetup) -> ModelClass {
    match &setup.grid {
        Some(g) => ModelClass::Grid(g.clone()),
        None => ModelClass::TabularClosedForm,
    }
}

fn run_ope_cell(plan: &Plan, setup: &TabularSetup, cell: &Cell, kind: ExperimentKind) -> Result<CsvRow> {
    let class = model_class(setup);
    let adversaries = setup.adversaries.as_ref().ok_or(Error::Empty("adversary class"))?;
    let start = Instant::now();
    let r = run_ope(&OpeProblem {
        mdp: &setup.mdp,
        behavior: &setup.behavior,
        target: &setup.target,
        model_class: &class,
        adversaries,
        loss_kind: cell.loss,
        realizability: plan.config.realizability,
        sampling: cell.sampling(plan.config.episode_length),
        seed: cell.seed,
    })?;
    Ok(CsvRow {
        experiment: kind.as_str().into(),
        loss_kind: cell.loss.as_str().into(),
        seed: cell.seed,
        n_transitions: cell.size,
        grid_param: Some(grid_label(setup)),
        j_true: Some(r.j_true),
        j_estimate: Some(r.j_model),
        abs_error: Some(r.abs_error),
        bound: Some(r.bound),
        log_relative_mse: r.log_relative_mse,
        wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        ..CsvRow::default()
    })
}

fn run_opo_cell(plan: &Plan, setup: &TabularSetup, cell: &Cell) -> Result<CsvRow> {
    let class = model_class(setup);
    let adversaries = setup.adversaries.as_ref().ok_or(Error::Empty("adversary class"))?;
    let start = Instant::now();
    let r = run_opo(&OpoProblem {
        mdp: &setup.mdp,
        behavior: &setup.behavior,
        model_class: &class,
        adversaries,
        loss_kind: cell.loss,
        realizability: plan.config.realizability,
        sampling: cell.sampling(plan.config.episode_length),
        seed: cell.seed,
    })?;
    Ok(CsvRow {
        experiment: ExperimentKind::Opo.as_str().into(),
        loss_kind: cell.loss.as_str().into(),
        seed: cell.seed,
        n_transitions: cell.size,
        grid_param: Some(grid_label(setup)),
        j_true: Some(r.j_optimal),
        j_estimate: Some(r.j_planned),
        abs_error: Some(r.suboptimality),
        bound: Some(r.bound),
        wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        ..CsvRow::default()
    })
}

fn run_morel_cell(plan: &Plan, setup: &TabularSetup, cell: &Cell) -> Result<CsvRow> {
    let spec = &plan.config.morel;
    let member_class = match spec.member_class {
        MemberClassSpec::Tabular => MemberClass::Tabular,
        MemberClassSpec::Grid => MemberClass::Grid {
            models: setup.grid.clone().ok_or(Error::Empty("model grid"))?,
            adversaries: setup.adversaries.clone().ok_or(Error::Empty("adversary class"))?,
        },
    };
    let n_transitions = cell.size.ok_or_else(|| Error::Config("opo-morel needs n_transitions".into()))?;
    let start = Instant::now();
    let r = run_opo_morel(
        &setup.mdp,
        &setup.behavior,
        &MorelConfig {
            member_class,
            loss_kind: cell.loss,
            ensemble_size: spec.ensemble_size,
            n_transitions,
            episode_length: plan.config.episode_length,
            penalty: spec.penalty,
            alpha: spec.alpha_rule()?,
            seed: cell.seed,
        },
    )?;
    Ok(CsvRow {
        experiment: ExperimentKind::OpoMorel.as_str().into(),
        loss_kind: cell.loss.as_str().into(),
        seed: cell.seed,
        n_transitions: cell.size,
        grid_param: Some(format!("ensemble={};flagged={}", spec.ensemble_size, r.n_flagged)),
        j_true: Some(r.j_optimal),
        j_estimate: Some(r.j_policy),
        abs_error: Some(r.j_optimal - r.j_policy),
        wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        ..CsvRow::default()
    })
}

fn run_ci_cell(plan: &Plan, setup: &TabularSetup, cell: &Cell) -> Result<CsvRow> {
    let mdp = &setup.mdp;
    let grid = setup.grid.as_ref().ok_or(Error::Empty("model grid"))?;
    let base = setup.adversaries.as_ref().ok_or(Error::Empty("adversary class"))?;
    let start = Instant::now();
    let ctx = match cell.size {
        None => LossContext::exact(mdp, &setup.behavior)?,
        Some(n) => LossContext::empirical(&generate_dataset(mdp, &setup.behavior, n, plan.config.episode_length, cell.seed)?),
    };
    let mut pairs = enumerate_adversaries(base, DEFAULT_RESOLUTION)?;
    if plan.config.realizability == crate::ope::Realizability::ExactInjected {
        // (w^P_pi, V^{P*}_pi) for every grid model
        let data_sa = behavior_distribution(mdp, &setup.behavior)?;
        let v_true = solve_value_function(mdp, &setup.target, mdp.transition())?;
        for m in grid {
            let w = density_ratio(&solve_occupancy(mdp, &setup.target, m)?, &data_sa)?;
            pairs.push(AdversaryPair::new(w, v_true.clone())?);
        }
    }
    let ci = ci_bounds_pairs(&ctx, mdp.gamma(), grid, &pairs)?;
    let j_true = evaluate_policy(mdp, &setup.target, mdp.transition())?;
    let handle = FunctionClassHandle::finite_grid(pairs)?;
    let min_max = minimize_finite(&ctx, grid, &handle, LossKind::Mml)?.inner_max;
    Ok(CsvRow {
        experiment: ExperimentKind::Ci.as_str().into(),
        loss_kind: LossKind::Ci.as_str().into(),
        seed: cell.seed,
        n_transitions: cell.size,
        grid_param: Some(grid_label(setup)),
        j_true: Some(j_true),
        j_estimate: Some(ci.midpoint),
        abs_error: Some((ci.midpoint - j_true).abs()),
        bound: Some(2.0 * min_max),
        lower: Some(ci.lower),
        upper: Some(ci.upper),
        wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        ..CsvRow::default()
    })
}

fn lqr_config(plan: &Plan, loss: LossKind, eps: f64, seed: u64) -> LqrSelectionConfig {
    let l = &plan.config.lqr;
    let m = |x: f64| nalgebra::DMatrix::from_element(1, 1, x);
    LqrSelectionConfig {
        model_grid_max: l.model_grid_max,
        target_k: m(l.target_k),
        k_grid: l.k_grid.iter().map(|&k| m(k)).collect(),
        u_grid: UGrid::ModelValues,
        loss_kind: loss,
        v_noise_eps: eps,
        noise_points: l.noise_points,
        seed,
    }
}

fn lqr_rows(plan: &Plan) -> Result<Vec<CsvRow>> {
    let c = &plan.config;
    let system = c.lqr.system()?;
    match c.experiment {
        ExperimentKind::LqrFigure => {
            let per_kind: Vec<Result<Vec<CsvRow>>> = c
                .loss_kinds()
                .into_par_iter()
                .map(|loss| {
                    let start = Instant::now();
                    let rows = lqr_model_selection(&system, &lqr_config(plan, loss, 0.0, c.master_seed))
                        .map_err(|e| Error::Cell {
                            cell: format!("loss={loss}"),
                            source: Box::new(e),
                        })?;
                    let ms = start.elapsed().as_secs_f64() * 1e3 / rows.len() as f64;
                    let mut out = Vec::new();
                    for r in &rows {
                        let base = CsvRow {
                            loss_kind: loss.as_str().into(),
                            seed: c.master_seed,
                            grid_param: Some(format!("M={};chosen={}", r.m, r.chosen)),
                            wall_ms: Some(ms),
                            ..CsvRow::default()
                        };
                        out.push(CsvRow {
                            experiment: "lqr-figure".into(),
                            j_true: Some(r.j_true),
                            j_estimate: Some(r.j_model),
                            abs_error: Some(r.ope_error),
                            ..base.clone()
                        });
                        if !c.lqr.linear_reward {
                            continue;
                        }
                        out.push(CsvRow {
                            experiment: "lqr-figure-linear-reward".into(),
                            j_true: Some(r.linear_j_true),
                            j_estimate: Some(r.linear_j_model),
                            abs_error: Some(r.linear_reward_error),
                            ..base
                        });
                    }
                    Ok(out)
                })
                .collect();
            Ok(per_kind.into_iter().collect::<Result<Vec<_>>>()?.concat())
        }
        ExperimentKind::LqrVerifiability => {
            let mut jobs = Vec::new();
            for &eps in &c.lqr.eps {
                for seed_index in 0..c.n_seeds {
                    jobs.push((eps, seed_index, derive_seed(c.master_seed, &[STREAM_CELL, seed_index as u64])));
                }
            }
            let per_job: Vec<Result<Vec<CsvRow>>> = jobs
                .into_par_iter()
                .map(|(eps, seed_index, seed)| {
                    let start = Instant::now();
                    let rows = lqr_model_selection(&system, &lqr_config(plan, LossKind::Mml, eps, seed)).map_err(|e| {
                        Error::Cell {
                            cell: format!("eps={eps} seed#{seed_index}"),
                            source: Box::new(e),
                        }
                    })?;
                    let ms = start.elapsed().as_secs_f64() * 1e3 / rows.len() as f64;
                    Ok(rows
                        .iter()
                        .map(|r| CsvRow {
                            experiment: "lqr-verifiability".into(),
                            loss_kind: LossKind::Mml.as_str().into(),
                            seed,
                            grid_param: Some(format!("eps={eps};M={};chosen={}", r.m, r.chosen)),
                            j_true: Some(r.j_true),
                            j_estimate: Some(r.j_model),
                            abs_error: Some(r.ope_error),
                            wall_ms: Some(ms),
                            ..CsvRow::default()
                        })
                        .collect())
                })
                .collect();
            Ok(per_job.into_iter().collect::<Result<Vec<_>>>()?.concat())
        }
        _ => unreachable!("tabular experiments are dispatched elsewhere"),
    }
}

/// Computes every row of the experiment in cell order.
pub fn compute_rows(plan: &Plan) -> Result<Vec<CsvRow>> {
    let kind = plan.config.experiment;
    let Some(setup) = plan.tabular.as_ref() else {
        return lqr_rows(plan);
    };
    let results: Vec<Result<CsvRow>> = cells(plan)
        .par_iter()
        .map(|cell| {
            let r = match kind {
                ExperimentKind::Ope | ExperimentKind::BenchLosses => run_ope_cell(plan, setup, cell, kind),
                ExperimentKind::Opo => run_opo_cell(plan, setup, cell),
                ExperimentKind::OpoMorel => run_morel_cell(plan, setup, cell),
                ExperimentKind::Ci => run_ci_cell(plan, setup, cell),
                ExperimentKind::LqrFigure | ExperimentKind::LqrVerifiability => unreachable!(),
            };
            in_cell(cell, r)
        })
        .collect();
    results.into_iter().collect()
}

/// Serializes rows with `'\n'` line endings.
pub fn write_csv(rows: &[CsvRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "experiment",
            "loss_kind",
            "seed",
            "n_transitions",
            "grid_param",
            "j_true",
            "j_estimate",
            "abs_error",
            "bound",
            "log_relative_mse",
            "lower",
            "upper",
            "wall_ms",
            "config_hash",
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn output_paths(plan: &Plan, options: &RunOptions) -> (PathBuf, PathBuf) {
    let name = plan.config.experiment.as_str();
    let csv = match (&options.out_dir, &plan.config.output) {
        (Some(dir), _) => dir.join(format!("{name}.csv")),
        (None, Some(p)) if p.is_absolute() => p.clone(),
        (None, Some(p)) => plan.base_dir.join(p),
        (None, None) => PathBuf::from(format!("{name}.csv")),
    };
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| name.into());
    let manifest = csv.with_file_name(format!("{stem}.manifest.json"));
    (csv, manifest)
}

fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = threads.or_else(|| std::env::var("MMLLAB_THREADS").ok().and_then(|v| v.parse().ok()));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the plan and writes the CSV and the manifest.
pub fn run(mut plan: Plan, options: &RunOptions) -> Result<RunOutcome> {
    if let Some(seed) = options.seed_override {
        plan = super::config::validate(
            super::config::ExperimentConfig {
                master_seed: seed,
                ..plan.config.clone()
            },
            &plan.base_dir.clone(),
        )?;
    }
    let hash = config_hash(&plan)?;
    let mut rows = run_in_pool(options.threads, || compute_rows(&plan))??;
    for r in &mut rows {
        r.config_hash = hash.clone();
        if !options.timing {
            r.wall_ms = None;
        }
    }
    let (csv_path, manifest_path) = output_paths(&plan, options);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    std::fs::write(&csv_path, buf)?;
    let manifest = Manifest {
        library_version: env!("CARGO_PKG_VERSION"),
        experiment: plan.config.experiment.as_str(),
        master_seed: plan.config.master_seed,
        config_hash: &hash,
        rows: rows.len(),
        csv: csv_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        config: serde_json::to_value(plan.config.resolved())?,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&manifest_path, text)?;
    Ok(RunOutcome {
        csv_path,
        manifest_path,
        rows: rows.len(),
        config_hash: hash,
    })
}

/// Human-readable dump of the resolved parameters.
pub fn describe(plan: &Plan) -> Result<String> {
    let mut s = String::from("OK\n");
    s.push_str(&serde_json::to_string_pretty(&plan.config.resolved())?);
    s.push('\n');
    if let Some(t) = &plan.tabular {
        s.push_str(&format!(
            "mdp: {} states, {} actions, gamma {}\n",
            t.mdp.n_states(),
            t.mdp.n_actions(),
            t.mdp.gamma()
        ));
        match &t.grid {
            Some(g) => s.push_str(&format!("model grid: {} models\n", g.len())),
            None => s.push_str("model class: tabular closed form\n"),
        }
        if let Some(a) = &t.adversaries {
            s.push_str(&format!("adversaries: {}\n", a.label()));
        }
    }
    Ok(s)
}

pub fn csv_path_for(plan: &Plan, out_dir: Option<&Path>) -> PathBuf {
    output_paths(
        plan,
        &RunOptions {
            out_dir: out_dir.map(Path::to_path_buf),
            ..RunOptions::default()
        },
    )
    .0
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classes::{FunctionClassHandle, TabularBall};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::lqr::LqrSystem;
use crate::mdp::{load_model_grid, Dataset, Policy, TabularMdp, TransitionModel};
use crate::morel::{value_adversaries, AlphaRule, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PENALTY};
use crate::ope::Realizability;
use crate::rkhs::{median_bandwidth, Coordinate, Embedding, KernelSpec};
use crate::rng::{derive_seed, seeded};

/// Stream tags for seeds derived from the master seed.
pub(crate) const STREAM_GRID: u64 = 0x6772_6964;
pub(crate) const STREAM_POLICY: u64 = 0x706f_6c69;
pub(crate) const STREAM_CELL: u64 = 0x6365_6c6c;
pub(crate) const STREAM_MEDIAN: u64 = 0x6d65_6469;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ope,
    Opo,
    OpoMorel,
    LqrFigure,
    LqrVerifiability,
    Ci,
    BenchLosses,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ope => "ope",
            Self::Opo => "opo",
            Self::OpoMorel => "opo-morel",
            Self::LqrFigure => "lqr-figure",
            Self::LqrVerifiability => "lqr-verifiability",
            Self::Ci => "ci",
            Self::BenchLosses => "bench-losses",
        }
    }

    fn is_tabular(self) -> bool {
        !matches!(self, Self::LqrFigure | Self::LqrVerifiability)
    }

    fn default_losses(self) -> Vec<LossKind> {
        match self {
            Self::LqrFigure => vec![LossKind::Mml, LossKind::Mle, LossKind::VamlL2],
            Self::OpoMorel => vec![LossKind::Mml, LossKind::Mle],
            Self::BenchLosses => vec![LossKind::Mml, LossKind::Mle, LossKind::VamlL2, LossKind::VamlL1],
            Self::Ci => vec![LossKind::Ci],
            _ => vec![LossKind::Mml],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x.clone()],
            Self::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// Tabular MDP JSON document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    /// Dirichlet-like random policy drawn from a stream of the master seed.
    Random { stream: u64 },
    Deterministic { actions: Vec<usize> },
    Table { probs: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelGridSpec {
    File {
        path: PathBuf,
    },
    /// `size` random models, with the true dynamics appended when `include_truth`.
    Random {
        size: usize,
        #[serde(default = "yes")]
        include_truth: bool,
        #[serde(default)]
        stream: u64,
    },
    Truth,
    /// Count-based closed form instead of a grid.
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    /// Only `"median"` is accepted.
    Rule(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    TabularBall {
        #[serde(default = "unit")]
        bound: f64,
    },
    /// Product RBF kernel over index-embedded states and actions.
    Rkhs {
        bandwidth: Bandwidth,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
    },
    /// Values of every grid model under its planned policy and the behavior policy.
    ModelValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Fixed(f64),
    /// `"median"` or `"disabled"`.
    Rule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberClassSpec {
    Grid,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorelSpec {
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default = "default_alpha")]
    pub alpha: AlphaSpec,
    #[serde(default = "default_member_class")]
    pub member_class: MemberClassSpec,
}

impl Default for MorelSpec {
    fn default() -> Self {
        Self {
            ensemble_size: default_ensemble(),
            penalty: default_penalty(),
            alpha: default_alpha(),
            member_class: default_member_class(),
        }
    }
}

/// Scalar linear-quadratic setup; defaults follow the figure experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrSpec {
    pub a_true: f64,
    pub b_true: f64,
    pub q: f64,
    pub r: f64,
    pub sigma_star: f64,
    pub sigma_k: f64,
    pub sigma_0: f64,
    pub s0: f64,
    pub gamma: f64,
    pub model_grid_max: usize,
    pub target_k: f64,
    pub k_grid: Vec<f64>,
    pub eps: Vec<f64>,
    pub noise_points: usize,
    /// Also emit `lqr-figure-linear-reward` rows for the literal linear reward.
    pub linear_reward: bool,
}

impl Default for LqrSpec {
    fn default() -> Self {
        Self {
            a_true: 1.0,
            b_true: -0.5,
            q: 1.0,
            r: 1.0,
            sigma_star: 0.1,
            sigma_k: 0.1,
            sigma_0: 0.1,
            s0: 1.0,
            gamma: 0.9,
            model_grid_max: 19,
            target_k: -1.3,
            k_grid: vec![-1.3],
            eps: vec![0.0, 0.5, 1.0],
            noise_points: 100_000,
            linear_reward: false,
        }
    }
}

impl LqrSpec {
    pub fn system(&self) -> Result<LqrSystem> {
        LqrSystem::scalar(
            self.a_true,
            self.b_true,
            self.q,
            self.r,
            self.sigma_star,
            self.sigma_k,
            self.sigma_0,
            self.s0,
            self.gamma,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_kind: Option<OneOrMany<LossKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_grid: Option<ModelGridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversaries: Option<AdversarySpec>,
    #[serde(default = "default_realizability")]
    pub realizability: Realizability,
    #[serde(default)]
    pub behavior: PolicySpec,
    #[serde(default = "default_target")]
    pub target: PolicySpec,
    /// Empty means exact expectations under the behavior law.
    #[serde(default)]
    pub n_transitions: Vec<usize>,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub lqr: LqrSpec,
    #[serde(default)]
    pub morel: MorelSpec,
}

fn yes() -> bool {
    true
}
fn unit() -> f64 {
    1.0
}
fn one() -> usize {
    1
}
fn default_episode_length() -> usize {
    50
}
fn default_ensemble() -> usize {
    DEFAULT_ENSEMBLE_SIZE
}
fn default_penalty() -> f64 {
    DEFAULT_PENALTY
}
fn default_alpha() -> AlphaSpec {
    AlphaSpec::Rule("median".into())
}
fn default_member_class() -> MemberClassSpec {
    MemberClassSpec::Grid
}
fn default_realizability() -> Realizability {
    Realizability::Agnostic
}
fn default_target() -> PolicySpec {
    PolicySpec::Random { stream: 1 }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn loss_kinds(&self) -> Vec<LossKind> {
        self.loss_kind
            .as_ref()
            .map(OneOrMany::to_vec)
            .unwrap_or_else(|| self.experiment.default_losses())
    }

    /// Config with every default written out, as echoed by validation and the manifest.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.loss_kind = Some(OneOrMany::Many(self.loss_kinds()));
        c
    }
}

/// Everything a run needs, loaded and checked.
#[derive(Clone, Debug)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub tabular: Option<TabularSetup>,
}

#[derive(Clone, Debug)]
pub struct TabularSetup {
    pub mdp: TabularMdp,
    pub behavior: Policy,
    pub target: Policy,
    pub grid: Option<Vec<TransitionModel>>,
    pub adversaries: Option<FunctionClassHandle>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn policy(spec: &PolicySpec, ns: usize, na: usize, master: u64, role: &str) -> Result<Policy> {
    let p = match spec {
        PolicySpec::Uniform => Policy::uniform(ns, na),
        PolicySpec::Random { stream } => Policy::random(ns, na, &mut seeded(derive_seed(master, &[STREAM_POLICY, *stream]))),
        PolicySpec::Deterministic { actions } => {
            if actions.len() != ns {
                return Err(config_error(format!("{role}.actions has {} entries for {ns} states", actions.len())));
            }
            Policy::deterministic(na, actions).map_err(|e| config_error(format!("{role}: {e}")))?
        }
        PolicySpec::Table { probs } => {
            if probs.len() != ns {
                return Err(config_error(format!("{role}.probs has {} rows for {ns} states", probs.len())));
            }
            Policy::new(ns, na, probs.concat()).map_err(|e| config_error(format!("{role}: {e}")))?
        }
    };
    Ok(p)
}

fn grid(spec: &ModelGridSpec, base: &Path, mdp: &TabularMdp, master: u64) -> Result<Option<Vec<TransitionModel>>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let models = match spec {
        ModelGridSpec::File { path } => {
            let path = resolve(base, path);
            if !path.exists() {
                return Err(config_error(format!("model_grid.path: {} does not exist", path.display())));
            }
            load_model_grid(&path).map_err(|e| config_error(format!("model_grid.path {}: {e}", path.display())))?
        }
        ModelGridSpec::Random {
            size,
            include_truth,
            stream,
        } => {
            let mut rng = seeded(derive_seed(master, &[STREAM_GRID, *stream]));
            let mut models: Vec<_> = (0..*size).map(|_| TransitionModel::random(ns, na, &mut rng)).collect();
            if *include_truth {
                models.push(mdp.transition().clone());
            }
            models
        }
        ModelGridSpec::Truth => vec![mdp.transition().clone()],
        ModelGridSpec::Tabular => return Ok(None),
    };
    if models.is_empty() {
        return Err(config_error("model_grid is empty"));
    }
    if let Some(i) = models.iter().position(|m| m.n_states() != ns || m.n_actions() != na) {
        return Err(config_error(format!("model_grid entry {i} does not match the {ns}x{na} MDP")));
    }
    Ok(Some(models))
}

fn adversaries(
    spec: &AdversarySpec,
    base: &Path,
    setup: &TabularSetup,
    master: u64,
) -> Result<FunctionClassHandle> {
    let (ns, na) = (setup.mdp.n_states(), setup.mdp.n_actions());
    match spec {
        AdversarySpec::TabularBall { bound } => Ok(FunctionClassHandle::TabularBall(
            TabularBall::new(ns, na, *bound).map_err(|e| config_error(format!("adversaries.bound: {e}")))?,
        )),
        AdversarySpec::Rkhs { bandwidth, dataset } => {
            let h = match bandwidth {
                Bandwidth::Fixed(h) => [*h; 3],
                Bandwidth::Rule(rule) if rule == "median" => {
                    let path = dataset
                        .as_ref()
                        .map(|p| resolve(base, p))
                        .ok_or_else(|| config_error("adversaries.bandwidth \"median\" needs adversaries.dataset"))?;
                    if !path.exists() {
                        return Err(config_error(format!("adversaries.dataset: {} does not exist", path.display())));
                    }
                    let file = std::io::BufReader::new(std::fs::File::open(&path)?);
                    let data = Dataset::read_jsonl(file, ns, na)
                        .map_err(|e| config_error(format!("adversaries.dataset {}: {e}", path.display())))?;
                    let seed = derive_seed(master, &[STREAM_MEDIAN]);
                    let mut h = [0.0; 3];
                    for (slot, (coord, emb)) in h.iter_mut().zip([
                        (Coordinate::State, Embedding::index(ns)),
                        (Coordinate::Action, Embedding::index(na)),
                        (Coordinate::NextState, Embedding::index(ns)),
                    ]) {
                        *slot = median_bandwidth(&data, coord, &emb, seed)
                            .map_err(|e| config_error(format!("median bandwidth: {e}")))?;
                    }
                    h
                }
                Bandwidth::Rule(other) => {
                    return Err(config_error(format!("adversaries.bandwidth: unknown rule {other:?}")));
                }
            };
            let k = KernelSpec::product(Embedding::index(ns), Embedding::index(na), h[0], h[1], h[2])
                .map_err(|e| config_error(format!("adversaries.bandwidth: {e}")))?;
            Ok(FunctionClassHandle::RkhsUnitBall(k))
        }
        AdversarySpec::ModelValues => {
            let models = setup
                .grid
                .as_ref()
                .ok_or_else(|| config_error("adversaries \"model_values\" needs a model grid"))?;
            value_adversaries(&setup.mdp, models, &setup.behavior)
        }
    }
}

impl MorelSpec {
    pub fn alpha_rule(&self) -> Result<AlphaRule> {
        match &self.alpha {
            AlphaSpec::Fixed(a) if *a >= 0.0 => Ok(AlphaRule::Fixed(*a)),
            AlphaSpec::Fixed(a) => Err(config_error(format!("morel.alpha {a} is negative"))),
            AlphaSpec::Rule(r) if r == "median" => Ok(AlphaRule::Median),
            AlphaSpec::Rule(r) if r == "disabled" => Ok(AlphaRule::Fixed(f64::INFINITY)),
            AlphaSpec::Rule(r) => Err(config_error(format!("morel.alpha: unknown rule {r:?}"))),
        }
    }
}

/// Schema and referential checks without running anything.
pub fn validate(config: ExperimentConfig, base_dir: &Path) -> Result<Plan> {
    let kind = config.experiment;
    if config.n_seeds == 0 {
        return Err(config_error("n_seeds must be at least 1"));
    }
    if config.episode_length == 0 {
        return Err(config_error("episode_length must be positive"));
    }
    if config.n_transitions.contains(&0) {
        return Err(config_error("n_transitions entries must be positive"));
    }
    let losses = config.loss_kinds();
    if losses.is_empty() {
        return Err(config_error("loss_kind list is empty"));
    }
    let allowed: &[LossKind] = match kind {
        ExperimentKind::Ci => &[LossKind::Ci],
        ExperimentKind::LqrFigure | ExperimentKind::LqrVerifiability => {
            &[LossKind::Mml, LossKind::Mle, LossKind::VamlL2]
        }
        _ => &[LossKind::Mml, LossKind::Mle, LossKind::VamlL2, LossKind::VamlL1],
    };
    if let Some(bad) = losses.iter().find(|k| !allowed.contains(k)) {
        return Err(config_error(format!("loss_kind {bad} is not available for {}", kind.as_str())));
    }
    if kind == ExperimentKind::LqrVerifiability && losses != [LossKind::Mml] {
        return Err(config_error("lqr-verifiability runs the mml loss only"));
    }

    let tabular = if kind.is_tabular() {
        let mdp_path = config
            .environment
            .mdp
            .as_ref()
            .map(|p| resolve(base_dir, p))
            .ok_or_else(|| config_error("environment.mdp is required for tabular experiments"))?;
        if !mdp_path.exists() {
            return Err(config_error(format!("environment.mdp: {} does not exist", mdp_path.display())));
        }
        let mdp = TabularMdp::load(&mdp_path).map_err(|e| config_error(format!("environment.mdp {}: {e}", mdp_path.display())))?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let behavior = policy(&config.behavior, ns, na, config.master_seed, "behavior")?;
        let target = policy(&config.target, ns, na, config.master_seed, "target")?;
        let morel_tabular = kind == ExperimentKind::OpoMorel && config.morel.member_class == MemberClassSpec::Tabular;
        let grid = match (&config.model_grid, morel_tabular) {
            (_, true) => None,
            (Some(spec), false) => grid(spec, base_dir, &mdp, config.master_seed)?,
            (None, false) => return Err(config_error("model_grid is required")),
        };
        if grid.is_none() && matches!(kind, ExperimentKind::Ci | ExperimentKind::BenchLosses) {
            return Err(config_error(format!("{} needs a finite model_grid", kind.as_str())));
        }
        let mut setup = TabularSetup {
            mdp,
            behavior,
            target,
            grid,
            adversaries: None,
        };
        let needs_adversaries = !morel_tabular;
        if needs_adversaries {
            let spec = config
                .adversaries
                .as_ref()
                .ok_or_else(|| config_error("adversaries is required"))?;
            setup.adversaries = Some(adversaries(spec, base_dir, &setup, config.master_seed)?);
        }
        if kind == ExperimentKind::OpoMorel {
            if config.n_transitions.is_empty() {
                return Err(config_error("opo-morel needs n_transitions"));
            }
            if config.morel.ensemble_size == 0 {
                return Err(config_error("morel.ensemble_size must be positive"));
            }
            config.morel.alpha_rule()?;
        }
        Some(setup)
    } else {
        let lqr = &config.lqr;
        lqr.system().map_err(|e| config_error(format!("lqr: {e}")))?;
        if lqr.model_grid_max < 2 {
            return Err(config_error("lqr.model_grid_max must be at least 2"));
        }
        if lqr.k_grid.is_empty() {
            return Err(config_error("lqr.k_grid is empty"));
        }
        if lqr.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(config_error("lqr.eps entries must be nonnegative"));
        }
        if lqr.noise_points == 0 {
            return Err(config_error("lqr.noise_points must be positive"));
        }
        None
    };
    Ok(Plan {
        config,
        base_dir: base_dir.to_path_buf(),
        tabular,
    })
}

/// Reads, parses and validates the config at `path`; relative paths resolve against its directory.
pub fn load(path: &Path) -> Result<Plan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let config = ExperimentConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => config_error(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate(config, &base)
}

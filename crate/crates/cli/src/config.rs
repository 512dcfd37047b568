//! Experiment configuration, read from a TOML file.
//!
//! Every section is optional; commands that need a section fail with a
//! `config` error naming it. Unknown keys are rejected everywhere.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! out = "runs/gap"
//!
//! [task]
//! kind = "gap"        # "hetero" | "gap" | "csv"
//! t = 0.3
//!
//! [model]
//! embed_widths = [8]  # hidden widths of g; the last one is k
//!
//! [train]
//! iterations = 30     # any TrainConfig field; unset ones use the defaults
//! ```

use serde::Deserialize;
use std::path::PathBuf;
use vids_core::environments::TrainConfig;
use vids_core::model::{EmbeddingArch, PretrainConfig, Task};
use vids_core::nn::Activation;
use vids_core::posterior::KlEstimator;
use vids_core::prior::{GridAxis, GridSpec, PriorConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seeds; each one gets its own `seed_<s>/` output directory.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub task: Option<TaskSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub predict: PredictSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    pub envcheck: Option<EnvcheckSection>,
    pub prior_grid: Option<PriorGridSection>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSection {
    Hetero(HeteroTask),
    Gap(GapTask),
    Csv(CsvTask),
}

/// `y = βx + N(0, (x/10)²)`, train `x ~ U[0, a]`, test `x ~ U[0, b]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeteroTask {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for HeteroTask {
    fn default() -> Self {
        HeteroTask {
            a: 0.5,
            b: 1.0,
            beta: 1.0,
            n_train: 500,
            n_test: 500,
        }
    }
}

/// Logistic labels with arcsine covariates; training omits `(t, 1 − t)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapTask {
    pub t: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for GapTask {
    fn default() -> Self {
        GapTask {
            t: 0.3,
            n_train: 500,
            n_test: 500,
        }
    }
}

/// Tabular data split by k-means into a shifted train/test pair.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTask {
    pub path: PathBuf,
    pub target: String,
    pub task: TaskKind,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_majority")]
    pub train_majority_ratio: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_clusters() -> usize {
    2
}

fn default_majority() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl From<TaskKind> for Task {
    fn from(k: TaskKind) -> Task {
        match k {
            TaskKind::Regression => Task::Regression,
            TaskKind::Classification => Task::Classification,
        }
    }
}

impl TaskSection {
    pub fn task(&self) -> Task {
        match self {
            TaskSection::Hetero(_) => Task::Regression,
            TaskSection::Gap(_) => Task::Classification,
            TaskSection::Csv(c) => c.task.into(),
        }
    }

    /// Name of the outcome column in the written train/test files.
    pub fn target(&self) -> &str {
        match self {
            TaskSection::Csv(c) => &c.target,
            _ => "y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_widths: Vec<usize>,
    pub activation: ActivationKind,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        ModelSection {
            embed_widths: vec![8],
            activation: ActivationKind::Relu,
            pretrain_epochs: p.epochs,
            pretrain_learning_rate: p.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Identity,
    Sigmoid,
}

impl ModelSection {
    pub fn arch(&self) -> CliResult<EmbeddingArch> {
        if self.embed_widths.is_empty() || self.embed_widths.contains(&0) {
            return Err(CliError::config(
                "model.embed_widths must be nonempty and positive",
            ));
        }
        Ok(EmbeddingArch {
            widths: self.embed_widths.clone(),
            activation: match self.activation {
                ActivationKind::Relu => Activation::Relu,
                ActivationKind::Identity => Activation::Identity,
                ActivationKind::Sigmoid => Activation::Sigmoid,
            },
        })
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            learning_rate: self.pretrain_learning_rate,
        }
    }

    pub fn embed_width(&self) -> usize {
        self.embed_widths.last().copied().unwrap_or(0)
    }
}

/// Overrides for the training defaults; unset keys keep them.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub environments: Option<usize>,
    pub env_train_size: Option<usize>,
    pub env_test_size: Option<usize>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub predictive_samples: Option<usize>,
    pub fixed_envs: Option<bool>,
    pub kl: Option<KlKind>,
    pub inference_hidden: Option<Vec<usize>>,
    pub init_log_std: Option<f64>,
    pub warm_start: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlKind {
    SingleSample,
    AnalyticEntropy,
}

impl TrainSection {
    pub fn resolve(&self, task: Task, k: usize, seed: u64) -> CliResult<TrainConfig> {
        let mut c = TrainConfig::synthetic(task, k);
        c.seed = seed;
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        take!(
            environments,
            env_train_size,
            env_test_size,
            tau,
            lambda,
            learning_rate,
            iterations,
            predictive_samples,
            fixed_envs,
            inference_hidden,
            init_log_std,
            warm_start
        );
        if let Some(kl) = self.kl {
            c.kl = match kl {
                KlKind::SingleSample => KlEstimator::SingleSample,
                KlKind::AnalyticEntropy => KlEstimator::AnalyticEntropy,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

/// Integration range and Monte Carlo size of the regression prior.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub samples: usize,
    /// Added on both sides of the observed outcome range.
    pub margin: f64,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            samples: PriorConfig::DEFAULT_SAMPLES,
            margin: PriorConfig::DEFAULT_MARGIN,
            y_min: None,
            y_max: None,
        }
    }
}

impl PriorSection {
    pub fn resolve(&self, task: Task, y: &[f64]) -> CliResult<PriorConfig> {
        if task == Task::Classification {
            return Ok(PriorConfig::classification());
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min) - self.margin;
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + self.margin;
        Ok(PriorConfig::regression(
            self.y_min.unwrap_or(lo),
            self.y_max.unwrap_or(hi),
            self.samples,
        )?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Also write every predictive sample, one column per draw.
    pub write_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub ace_bins: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            ace_bins: vids_core::metrics::DEFAULT_ACE_BINS,
        }
    }
}

/// Coverage calculator inputs; `p` and `p_star` are bin weights.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvcheckSection {
    pub p: Vec<f64>,
    pub p_star: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    10_000
}

/// Energy grids of the two-feature logistic example.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorGridSection {
    pub n_train: usize,
    pub n_test: usize,
    pub shift_mean: f64,
    pub shift_std: f64,
    pub a: AxisSection,
    pub b: AxisSection,
    pub fixed: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub coefficient: usize,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for PriorGridSection {
    /// Axis steps 0.1 and 0.2 put the train-only ridge `(β0 + δ, β2 − 2δ)` on
    /// grid points.
    fn default() -> Self {
        PriorGridSection {
            n_train: 100,
            n_test: 100,
            shift_mean: 2.0,
            shift_std: 0.5,
            a: AxisSection {
                coefficient: 0,
                min: -2.0,
                max: 2.0,
                points: 41,
            },
            b: AxisSection {
                coefficient: 2,
                min: -4.0,
                max: 4.0,
                points: 41,
            },
            fixed: 1.0,
        }
    }
}

impl PriorGridSection {
    pub fn spec(&self) -> GridSpec {
        let axis = |a: &AxisSection| GridAxis {
            coefficient: a.coefficient,
            min: a.min,
            max: a.max,
            points: a.points,
        };
        GridSpec {
            a: axis(&self.a),
            b: axis(&self.b),
            fixed: self.fixed,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))?;
        if cfg.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        Ok(cfg)
    }

    pub fn task(&self) -> CliResult<&TaskSection> {
        self.task
            .as_ref()
            .ok_or_else(|| CliError::config("missing [task] section"))
    }
}

//! Synthetic environments and the training loops built on them.
//!
//! An [`Environment`] is a pair of bootstrap index samples drawn with
//! replacement from the training data: `n` conditioning rows and `m` test
//! rows. Only the test rows' covariates enter the objective; their outcomes
//! are kept for diagnostics.
//!
//! Each iteration of [`fit`] draws `L` environments, evaluates the ELBO sum
//! of every environment (conditioning on its train part, amortizing over its
//! test part), combines them as `Σ_ℓ L_ℓ + τ·Var(L_1..L_L)` and takes one
//! plain gradient-ascent step on the inference network.
//!
//! All randomness comes from keyed sub-streams: environments from
//! `(envs, iteration, ℓ)`, reparametrization noise from `(eps, iteration, ℓ)`
//! and prior draws from `(prior-mc, iteration, ℓ)`. Environment losses are
//! reduced in `ℓ` order, so training is bit-deterministic.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::math;
use crate::model::{ConditioningSet, Dataset, EmbeddingModel, HeadParams, Task};
use crate::nn::{self, Direction, GradientTape};
use crate::posterior::{
    self, ElboConfig, ElboNoise, ElboObjective, InferenceNet, KlEstimator, NoiseSource,
    VariationalParams,
};
use crate::prior::PriorConfig;
use crate::rng::{self, VidsRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Environment {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Environment {
    /// Every row conditions, every row is a test point.
    pub fn identity(rows: usize) -> Self {
        Environment {
            train: (0..rows).collect(),
            test: (0..rows).collect(),
        }
    }
}

/// Uniform draws with replacement; train and test parts are independent.
pub fn sample_environment<R: Rng + ?Sized>(
    data: &Dataset,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Environment> {
    sample_environment_rows(data.len(), n, m, rng)
}

pub fn sample_environment_rows<R: Rng + ?Sized>(
    rows: usize,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Environment> {
    if rows == 0 {
        return Err(Error::Input(
            "cannot sample environments from an empty dataset".into(),
        ));
    }
    let train = (0..n).map(|_| rng.random_range(0..rows)).collect();
    let test = (0..m).map(|_| rng.random_range(0..rows)).collect();
    Ok(Environment { train, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Environments per iteration `L`.
    pub environments: usize,
    /// Conditioning rows per environment `n`.
    pub env_train_size: usize,
    /// Test rows per environment `m`.
    pub env_test_size: usize,
    /// Cross-environment variance penalty `τ`.
    pub tau: f64,
    /// KL penalty `λ`.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Iterations `K`.
    pub iterations: usize,
    /// Posterior samples `S` per prediction.
    pub predictive_samples: usize,
    /// Draw environments once up front instead of every iteration.
    pub fixed_envs: bool,
    pub kl: KlEstimator,
    /// Hidden widths of the inference network.
    pub inference_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Start `μ` at the pretrained head.
    pub warm_start: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Synthetic-benchmark settings for an embedding of width `k`: `L = 30`,
    /// `n = 500`, `m = 20`, `τ = 0.001`, `λ = 0.005`, hidden widths
    /// `64k, 32k, 16k, 8k, 4k, 2k`, learning rate `1.0` for regression and
    /// `3.0` for classification (plain ascent on the mean-reduced loss).
    pub fn synthetic(task: Task, k: usize) -> Self {
        TrainConfig {
            environments: 30,
            env_train_size: 500,
            env_test_size: 20,
            tau: 0.001,
            lambda: 0.005,
            learning_rate: match task {
                Task::Regression => 1.0,
                Task::Classification => 3.0,
            },
            iterations: 30,
            predictive_samples: 1000,
            fixed_envs: false,
            kl: KlEstimator::SingleSample,
            inference_hidden: [64, 32, 16, 8, 4, 2].iter().map(|f| f * k).collect(),
            init_log_std: posterior::DEFAULT_INIT_LOG_STD,
            warm_start: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("environments", self.environments),
            ("env_train_size", self.env_train_size),
            ("env_test_size", self.env_test_size),
            ("predictive_samples", self.predictive_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(alloc::format!("{name} must be >= 1")));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Seeds of the independent randomness sources used by training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FitSeeds {
    pub init: u64,
    pub envs: u64,
    pub eps: u64,
    pub prior: u64,
}

impl FitSeeds {
    pub fn from_master(master: u64) -> Self {
        FitSeeds {
            init: rng::keyed_seed(rng::derive_seed(master, rng::STREAM_INIT), &[1]),
            envs: rng::derive_seed(master, rng::STREAM_ENVS),
            eps: rng::derive_seed(master, rng::STREAM_EPS),
            prior: rng::derive_seed(master, rng::STREAM_PRIOR),
        }
    }
}

/// ELBO sum of one environment: condition on its train rows, amortize over
/// its test rows' covariates.
pub fn env_loss(
    h: &InferenceNet,
    env: &Environment,
    data: &Dataset,
    embeds: &[Vec<f64>],
    cfg: &ElboConfig,
    noise: &mut NoiseSource,
) -> Result<f64> {
    let batch = EnvBatch::from_environment(env, data, embeds)?;
    posterior::elbo_sum(h, &batch.set, &batch.tests, cfg, noise)
}

/// `Σ_ℓ L_ℓ + τ · Var(L)` with the population variance.
pub fn cross_env_objective(losses: &[f64], tau: f64) -> f64 {
    losses.iter().sum::<f64>() + variance_penalty(losses, tau)
}

pub fn variance_penalty(losses: &[f64], tau: f64) -> f64 {
    if losses.len() < 2 || tau == 0.0 {
        0.0
    } else {
        tau * math::variance(losses)
    }
}

/// `∂ objective / ∂ L_ℓ = 1 + 2τ (L_ℓ − mean) / L`.
pub fn cross_env_weights(losses: &[f64], tau: f64) -> Vec<f64> {
    if losses.is_empty() {
        return Vec::new();
    }
    let mean = math::mean(losses);
    let l = losses.len() as f64;
    losses
        .iter()
        .map(|x| 1.0 + 2.0 * tau * (x - mean) / l)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub var_penalty: f64,
    pub env_loss_min: f64,
    pub env_loss_max: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub net: InferenceNet,
    pub trace: Vec<TraceRow>,
}

struct EnvBatch {
    set: ConditioningSet,
    tests: Vec<Vec<f64>>,
}

impl EnvBatch {
    fn from_environment(env: &Environment, data: &Dataset, embeds: &[Vec<f64>]) -> Result<Self> {
        if embeds.len() != data.len() {
            return Err(Error::dim(
                "precomputed embeddings",
                data.len(),
                embeds.len(),
            ));
        }
        if env.test.is_empty() {
            return Err(Error::Input("environment has no test rows".into()));
        }
        let pick = |i: usize| {
            embeds
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Input(alloc::format!("environment row {i} out of range")))
        };
        let train = env
            .train
            .iter()
            .map(|&i| pick(i))
            .collect::<Result<Vec<_>>>()?;
        let y = env.train.iter().map(|&i| data.y()[i]).collect();
        let tests = env
            .test
            .iter()
            .map(|&i| pick(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnvBatch {
            set: ConditioningSet::new(train, y, data.task())?,
            tests,
        })
    }
}

enum EnvSource<'a> {
    Resample,
    Fixed(Vec<EnvBatch>),
    Supplied(&'a [Environment]),
}

fn prior_config(data: &Dataset) -> Result<PriorConfig> {
    match data.task() {
        Task::Classification => Ok(PriorConfig::classification()),
        Task::Regression => PriorConfig::regression_from_outcomes(data.y()),
    }
}

/// Trains the inference network on resampled synthetic environments.
pub fn fit(
    data: &Dataset,
    embedding: &EmbeddingModel,
    head: &HeadParams,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    let prior = prior_config(data)?;
    fit_with_prior(data, embedding, head, cfg, &prior)
}

pub fn fit_with_prior(
    data: &Dataset,
    embedding: &EmbeddingModel,
    head: &HeadParams,
    cfg: &TrainConfig,
    prior: &PriorConfig,
) -> Result<FitResult> {
    fit_seeded(
        data,
        embedding,
        head,
        cfg,
        prior,
        &FitSeeds::from_master(cfg.seed),
    )
}

/// As [`fit_with_prior`] with explicit per-purpose streams; `cfg.seed` is ignored.
pub fn fit_seeded(
    data: &Dataset,
    embedding: &EmbeddingModel,
    head: &HeadParams,
    cfg: &TrainConfig,
    prior: &PriorConfig,
    seeds: &FitSeeds,
) -> Result<FitResult> {
    cfg.validate()?;
    let embeds = embedding.embed_dataset(data)?;
    let source = if cfg.fixed_envs {
        let mut batches = Vec::with_capacity(cfg.environments);
        for l in 0..cfg.environments {
            let mut r = rng::rng_from_seed(rng::keyed_seed(seeds.envs, &[0, l as u64]));
            let env = sample_environment(data, cfg.env_train_size, cfg.env_test_size, &mut r)?;
            batches.push(EnvBatch::from_environment(&env, data, &embeds)?);
        }
        EnvSource::Fixed(batches)
    } else {
        EnvSource::Resample
    };
    run(
        data, &embeds, embedding, head, cfg, prior, seeds, source, cfg.tau,
    )
}

/// Trains on a caller-supplied, fixed list of environments.
pub fn fit_fixed_environments(
    data: &Dataset,
    embedding: &EmbeddingModel,
    head: &HeadParams,
    envs: &[Environment],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if envs.is_empty() {
        return Err(Error::Input("need at least one environment".into()));
    }
    let prior = prior_config(data)?;
    let embeds = embedding.embed_dataset(data)?;
    let seeds = FitSeeds::from_master(cfg.seed);
    run(
        data,
        &embeds,
        embedding,
        head,
        cfg,
        &prior,
        &seeds,
        EnvSource::Supplied(envs),
        cfg.tau,
    )
}

/// Single-environment training: condition on the whole dataset and amortize
/// over externally supplied test covariates (`L = 1`, `τ = 0`).
pub fn fit_with_test_covariates(
    data: &Dataset,
    embedding: &EmbeddingModel,
    head: &HeadParams,
    test_covariates: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if test_covariates.is_empty() {
        return Err(Error::Input("need at least one test covariate".into()));
    }
    let prior = prior_config(data)?;
    let embeds = embedding.embed_dataset(data)?;
    let tests = test_covariates
        .iter()
        .map(|x| embedding.embed(x))
        .collect::<Result<Vec<_>>>()?;
    let batch = EnvBatch {
        set: ConditioningSet::new(embeds.clone(), data.y().to_vec(), data.task())?,
        tests,
    };
    let seeds = FitSeeds::from_master(cfg.seed);
    run(
        data,
        &embeds,
        embedding,
        head,
        cfg,
        &prior,
        &seeds,
        EnvSource::Fixed(alloc::vec![batch]),
        0.0,
    )
}

#[allow(clippy::too_many_arguments)]
fn run(
    data: &Dataset,
    embeds: &[Vec<f64>],
    embedding: &EmbeddingModel,
    head: &HeadParams,
    cfg: &TrainConfig,
    prior: &PriorConfig,
    seeds: &FitSeeds,
    source: EnvSource<'_>,
    tau: f64,
) -> Result<FitResult> {
    let k = embedding.embed_width();
    let mut init_rng = rng::rng_from_seed(seeds.init);
    let mut h = InferenceNet::init(
        k,
        &cfg.inference_hidden,
        cfg.warm_start.then_some(head),
        cfg.init_log_std,
        &mut init_rng,
    )?;
    let elbo = ElboConfig {
        lambda: cfg.lambda,
        prior: prior.clone(),
        kl: cfg.kl,
    };
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let resampled;
        let batches: &[EnvBatch] = match &source {
            EnvSource::Fixed(b) => b,
            EnvSource::Resample => {
                let mut v = Vec::with_capacity(cfg.environments);
                for l in 0..cfg.environments {
                    let mut r =
                        rng::rng_from_seed(rng::keyed_seed(seeds.envs, &[iter as u64, l as u64]));
                    let env =
                        sample_environment(data, cfg.env_train_size, cfg.env_test_size, &mut r)?;
                    v.push(EnvBatch::from_environment(&env, data, embeds)?);
                }
                resampled = v;
                &resampled
            }
            EnvSource::Supplied(envs) => {
                resampled = envs
                    .iter()
                    .map(|e| EnvBatch::from_environment(e, data, embeds))
                    .collect::<Result<Vec<_>>>()?;
                &resampled
            }
        };
        let (row, step) = iteration(&h, batches, &elbo, seeds, iter, tau)?;
        if !row.objective.is_finite() || !step.is_finite() {
            return Err(Error::NonFinite {
                stage: "fit",
                iteration: iter,
                detail: dump_trace(&trace, &row),
            });
        }
        nn::sgd_step(h.net_mut(), &step, cfg.learning_rate, Direction::Ascent)?;
        trace.push(row);
    }
    Ok(FitResult { net: h, trace })
}

/// Objective row and the normalized ascent direction for one iteration.
///
/// The direction is the objective gradient divided by the number of
/// log-likelihood terms, `Σ_ℓ m (n + 1)`, so the learning rate applies to a
/// mean-reduced loss.
fn iteration(
    h: &InferenceNet,
    batches: &[EnvBatch],
    elbo: &ElboConfig,
    seeds: &FitSeeds,
    iter: usize,
    tau: f64,
) -> Result<(TraceRow, GradientTape)> {
    let d = h.embed_width() + 1;
    let mut losses = Vec::with_capacity(batches.len());
    let mut tapes = Vec::with_capacity(batches.len());
    let mut terms = 0usize;
    for (l, batch) in batches.iter().enumerate() {
        let key = [iter as u64, l as u64];
        let mut noise_src = NoiseSource::from_seeds(
            rng::keyed_seed(seeds.eps, &key),
            rng::keyed_seed(seeds.prior, &key),
        );
        let noise = batch
            .tests
            .iter()
            .map(|_| noise_src.draw(d, &elbo.prior))
            .collect::<Result<Vec<ElboNoise>>>()?;
        let objective = ElboObjective {
            set: &batch.set,
            tests: &batch.tests,
            noise: &noise,
            cfg: elbo,
        };
        let (loss, tape) = nn::grad(h.net(), &objective.inputs(), &objective)?;
        losses.push(loss);
        tapes.push(tape);
        terms += batch.tests.len() * (batch.set.len() + 1);
    }
    let weights = cross_env_weights(&losses, tau);
    let mut step = GradientTape::zeros_for(h.net());
    for (tape, w) in tapes.iter().zip(&weights) {
        step.add_scaled(tape, *w);
    }
    step.scale(1.0 / terms as f64);
    let var_penalty = variance_penalty(&losses, tau);
    let row = TraceRow {
        iter,
        objective: losses.iter().sum::<f64>() + var_penalty,
        var_penalty,
        env_loss_min: losses.iter().copied().fold(f64::INFINITY, f64::min),
        env_loss_max: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((row, step))
}

fn dump_trace(trace: &[TraceRow], failed: &TraceRow) -> String {
    let mut s = String::new();
    for r in trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .chain(core::iter::once(failed))
    {
        let _ = write!(
            s,
            "[iter {} objective {} var_penalty {} env_loss [{}, {}]] ",
            r.iter, r.objective, r.var_penalty, r.env_loss_min, r.env_loss_max
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the samples (0 for a single sample).
    pub std: f64,
}

/// Posterior predictive samples at `x`: head outputs for regression,
/// probabilities for classification.
pub fn predict(
    h: &InferenceNet,
    embedding: &EmbeddingModel,
    train_summary: &[f64],
    x: &[f64],
    task: Task,
    samples: usize,
    rng: &mut VidsRng,
) -> Result<Prediction> {
    if samples == 0 {
        return Err(Error::Config("predictive sample count must be >= 1".into()));
    }
    let test = embedding.embed(x)?;
    let phi = h.infer_phi(train_summary, &test)?;
    predict_from_phi(&phi, &test, task, samples, rng)
}

pub fn predict_from_phi(
    phi: &VariationalParams,
    test_embed: &[f64],
    task: Task,
    samples: usize,
    rng: &mut VidsRng,
) -> Result<Prediction> {
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let eps = rng::standard_normal_vec(rng, phi.dim());
        let theta = posterior::sample_theta(phi, &eps)?;
        let f = crate::model::head_output(&theta, test_embed);
        out.push(match task {
            Task::Regression => f,
            Task::Classification => math::sigmoid(f),
        });
    }
    let mean = math::mean(&out);
    let std = math::sqrt(math::variance(&out));
    Ok(Prediction {
        samples: out,
        mean,
        std,
    })
}

/// Predictions for every row of `test`, conditioning on all of `train`.
/// Row `i` draws from the sub-stream `(seed, i)`.
pub fn predict_dataset(
    h: &InferenceNet,
    embedding: &EmbeddingModel,
    train: &Dataset,
    test: &Dataset,
    samples: usize,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let summary = crate::model::aggregate(&embedding.embed_dataset(train)?)?;
    test.rows()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::rng_from_seed(rng::keyed_seed(seed, &[i as u64]));
            predict(h, embedding, &summary, x, test.task(), samples, &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_dataset_environment() {
        let data = Dataset::new(alloc::vec![0.5], 1, alloc::vec![1.0], Task::Regression).unwrap();
        let mut r = rng::rng_from_seed(0);
        let env = sample_environment(&data, 5, 3, &mut r).unwrap();
        assert!(env.train.iter().chain(&env.test).all(|&i| i == 0));
        assert_eq!((env.train.len(), env.test.len()), (5, 3));
    }

    #[test]
    fn cross_env_examples() {
        assert_eq!(cross_env_objective(&[1.5, 1.5, 1.5], 10.0), 4.5);
        assert_eq!(cross_env_objective(&[0.0, 2.0], 1.0), 3.0);
        assert_eq!(cross_env_objective(&[0.0, 2.0], 0.0), 2.0);
        assert_eq!(cross_env_objective(&[7.0], 5.0), 7.0);
    }

    #[test]
    fn cross_env_weights_match_finite_differences() {
        let losses = [1.0, -2.0, 0.5, 4.0];
        let w = cross_env_weights(&losses, 0.3);
        for i in 0..losses.len() {
            let mut p = losses;
            let mut m = losses;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (cross_env_objective(&p, 0.3) - cross_env_objective(&m, 0.3)) / 2e-6;
            assert!((fd - w[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn single_sample_prediction_has_zero_std() {
        let phi = VariationalParams::new(alloc::vec![0.5, 0.1], alloc::vec![0.0, 0.0]).unwrap();
        let mut r = rng::rng_from_seed(1);
        let p = predict_from_phi(&phi, &[1.0], Task::Regression, 1, &mut r).unwrap();
        assert_eq!(p.std, 0.0);
        assert_eq!(p.samples.len(), 1);
    }
}

//! Amortized diagonal-Gaussian posterior over head parameters.
//!
//! An inference network `h_γ: R^{2k} -> R^{2(k+1)}` maps the concatenation
//! (aggregated conditioning embedding ‖ test embedding) to the variational
//! parameters `φ = (μ, log σ)`; the first `k + 1` outputs are `μ`, the rest
//! are log standard deviations, clamped to `[-6, 3]`.
//!
//! Each test point contributes a single-sample ELBO term
//!
//! ```text
//! Σ_i log p(y_i | x_i, θ) − λ [ log q_φ(θ) − E(θ; x_1..x_N, x*) ],   θ = μ + σ ⊙ ε
//! ```
//!
//! which is exact up to the prior's additive log-normalizer. Gradients with
//! respect to the raw network outputs are derived in closed form and pushed
//! through `h_γ` by [`crate::nn::grad`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::model::{ConditioningSet, HeadParams};
use crate::nn::{Activation, DenseNet, OutputObjective};
use crate::prior::{self, PriorConfig};
use crate::rng::{self, VidsRng};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 3.0;
pub const DEFAULT_INIT_LOG_STD: f64 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mu.len() != log_std.len() {
            return Err(Error::dim("variational log_std", mu.len(), log_std.len()));
        }
        if mu.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::Input("variational parameters must be finite".into()));
        }
        Ok(VariationalParams { mu, log_std })
    }

    /// Splits a raw `2d` network output, clamping the log standard deviations.
    pub fn from_output(raw: &[f64]) -> Self {
        let d = raw.len() / 2;
        VariationalParams {
            mu: raw[..d].to_vec(),
            log_std: raw[d..].iter().map(|&v| clamp_log_std(v)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|&l| math::exp(l)).collect()
    }
}

fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// `θ = μ + σ ⊙ ε`.
pub fn sample_theta(phi: &VariationalParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != phi.dim() {
        return Err(Error::dim("reparametrization noise", phi.dim(), eps.len()));
    }
    Ok(phi
        .mu
        .iter()
        .zip(&phi.log_std)
        .zip(eps)
        .map(|((m, l), e)| m + math::exp(*l) * e)
        .collect())
}

/// Diagonal-Gaussian log-density `log q_φ(θ)`.
pub fn log_q(theta: &[f64], phi: &VariationalParams) -> Result<f64> {
    if theta.len() != phi.dim() {
        return Err(Error::dim("log_q argument", phi.dim(), theta.len()));
    }
    Ok(theta
        .iter()
        .zip(phi.mu.iter().zip(&phi.log_std))
        .map(|(t, (m, l))| {
            let z = (t - m) / math::exp(*l);
            -0.5 * math::LN_2PI - l - 0.5 * z * z
        })
        .sum())
}

/// Gaussian entropy `Σ log σ_i + (d/2) ln(2πe)`.
pub fn entropy(phi: &VariationalParams) -> f64 {
    phi.log_std
        .iter()
        .map(|l| l + 0.5 * (1.0 + math::LN_2PI))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet {
    net: DenseNet,
}

impl InferenceNet {
    pub fn new(net: DenseNet) -> Result<Self> {
        let input = net.input_width();
        if input == 0 || !input.is_multiple_of(2) {
            return Err(Error::Input(alloc::format!(
                "inference input width {input} is not 2k"
            )));
        }
        let k = input / 2;
        if net.output_width() != 2 * (k + 1) {
            return Err(Error::dim(
                "inference output width",
                2 * (k + 1),
                net.output_width(),
            ));
        }
        Ok(InferenceNet { net })
    }

    /// Relu hidden layers with scaled-uniform weights; the output layer has
    /// zero weights and a bias that starts `μ` at `warm_start` (or 0) and
    /// `log σ` at `init_log_std`.
    pub fn init<R: Rng + ?Sized>(
        k: usize,
        hidden: &[usize],
        warm_start: Option<&HeadParams>,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(2 * k);
        widths.extend_from_slice(hidden);
        widths.push(2 * (k + 1));
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(Activation::Identity);
        let mut net = DenseNet::init(&widths, &activations, rng)?;
        let last = net.layers().len() - 1;
        let out = net.layer_mut(last);
        out.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let bias = out.bias_mut();
        if let Some(head) = warm_start {
            if head.embed_width() != k {
                return Err(Error::dim("warm-start head", k + 1, head.as_slice().len()));
            }
            bias[..k + 1].copy_from_slice(head.as_slice());
        } else {
            bias[..k + 1].iter_mut().for_each(|b| *b = 0.0);
        }
        bias[k + 1..].iter_mut().for_each(|b| *b = init_log_std);
        InferenceNet::new(net)
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn into_net(self) -> DenseNet {
        self.net
    }

    pub fn embed_width(&self) -> usize {
        self.net.input_width() / 2
    }

    /// Network input `(summary ‖ test)`.
    pub fn input(&self, summary: &[f64], test_embed: &[f64]) -> Result<Vec<f64>> {
        let k = self.embed_width();
        if summary.len() != k {
            return Err(Error::dim("conditioning summary", k, summary.len()));
        }
        if test_embed.len() != k {
            return Err(Error::dim("test embedding", k, test_embed.len()));
        }
        let mut x = Vec::with_capacity(2 * k);
        x.extend_from_slice(summary);
        x.extend_from_slice(test_embed);
        Ok(x)
    }

    pub fn infer_phi(&self, summary: &[f64], test_embed: &[f64]) -> Result<VariationalParams> {
        let raw = self.net.forward(&self.input(summary, test_embed)?)?;
        Ok(VariationalParams::from_output(&raw))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlEstimator {
    /// `log q(θ) − E(θ)` at the sampled `θ`.
    SingleSample,
    /// `−H(q) − E(θ)`: analytic entropy, sampled cross term.
    AnalyticEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboConfig {
    /// KL penalty `λ`.
    pub lambda: f64,
    pub prior: PriorConfig,
    pub kl: KlEstimator,
}

impl ElboConfig {
    pub fn new(lambda: f64, prior: PriorConfig) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(alloc::format!(
                "KL penalty must be positive, got {lambda}"
            )));
        }
        prior.validate()?;
        Ok(ElboConfig {
            lambda,
            prior,
            kl: KlEstimator::SingleSample,
        })
    }
}

/// Randomness consumed by one ELBO term.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise {
    pub eps: Vec<f64>,
    pub prior_draws: Vec<f64>,
}

/// Independent streams for reparametrization noise and prior Monte Carlo.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    pub eps: VidsRng,
    pub prior: VidsRng,
}

impl NoiseSource {
    pub fn from_seeds(eps_seed: u64, prior_seed: u64) -> Self {
        NoiseSource {
            eps: rng::rng_from_seed(eps_seed),
            prior: rng::rng_from_seed(prior_seed),
        }
    }

    pub fn draw(&mut self, dim: usize, prior: &PriorConfig) -> Result<ElboNoise> {
        Ok(ElboNoise {
            eps: rng::standard_normal_vec(&mut self.eps, dim),
            prior_draws: prior::draw_outcomes(prior, &mut self.prior)?,
        })
    }
}

/// One ELBO term and its gradient with respect to the raw `h` output.
pub fn elbo_term(
    raw: &[f64],
    set: &ConditioningSet,
    test_embed: &[f64],
    noise: &ElboNoise,
    cfg: &ElboConfig,
) -> Result<(f64, Vec<f64>)> {
    let d = set.embed_width() + 1;
    if raw.len() != 2 * d {
        return Err(Error::dim("inference output", 2 * d, raw.len()));
    }
    let phi = VariationalParams::from_output(raw);
    let theta = sample_theta(&phi, &noise.eps)?;
    let (ll, g_ll) = set.log_lik_sum(&theta);
    let (energy, g_e) =
        prior::energy_with_grad(&theta, set, test_embed, &noise.prior_draws, &cfg.prior);
    let neg_entropy_term = match cfg.kl {
        KlEstimator::SingleSample => log_q(&theta, &phi)?,
        KlEstimator::AnalyticEntropy => -entropy(&phi),
    };
    let lambda = cfg.lambda;
    let value = ll - lambda * (neg_entropy_term - energy);

    let mut grad = vec![0.0; 2 * d];
    for i in 0..d {
        let g_theta = g_ll[i] + lambda * g_e[i];
        grad[i] = g_theta;
        let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[d + i]);
        grad[d + i] = if inside {
            g_theta * math::exp(phi.log_std[i]) * noise.eps[i] + lambda
        } else {
            0.0
        };
    }
    Ok((value, grad))
}

/// Sum of ELBO terms over test embeddings with pre-drawn noise, as a
/// function of the inference network outputs.
pub struct ElboObjective<'a> {
    pub set: &'a ConditioningSet,
    pub tests: &'a [Vec<f64>],
    pub noise: &'a [ElboNoise],
    pub cfg: &'a ElboConfig,
}

impl ElboObjective<'_> {
    /// Network inputs `(summary ‖ test_j)` for every test embedding.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.tests
            .iter()
            .map(|t| {
                let mut x = self.set.summary().to_vec();
                x.extend_from_slice(t);
                x
            })
            .collect()
    }
}

impl OutputObjective for ElboObjective<'_> {
    fn evaluate(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        if outputs.len() != self.tests.len() || self.noise.len() != self.tests.len() {
            return Err(Error::dim("ELBO terms", self.tests.len(), outputs.len()));
        }
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for ((raw, test), noise) in outputs.iter().zip(self.tests).zip(self.noise) {
            let (v, g) = elbo_term(raw, self.set, test, noise, self.cfg)?;
            total += v;
            grads.push(g);
        }
        Ok((total, grads))
    }
}

/// `Σ_j` ELBO over test embeddings with the given per-term noise.
pub fn elbo_sum_with_noise(
    h: &InferenceNet,
    set: &ConditioningSet,
    test_embeds: &[Vec<f64>],
    noise: &[ElboNoise],
    cfg: &ElboConfig,
) -> Result<f64> {
    if test_embeds.is_empty() {
        return Err(Error::Input(
            "ELBO sum needs at least one test covariate".into(),
        ));
    }
    let objective = ElboObjective {
        set,
        tests: test_embeds,
        noise,
        cfg,
    };
    let outputs = h.net().forward_batch(&objective.inputs())?;
    let value = objective.value(&outputs)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            stage: "elbo",
            iteration: 0,
            detail: alloc::format!("ELBO value {value}"),
        });
    }
    Ok(value)
}

/// Single-sample ELBO for one test embedding.
pub fn elbo_single(
    h: &InferenceNet,
    set: &ConditioningSet,
    test_embed: &[f64],
    cfg: &ElboConfig,
    noise: &mut NoiseSource,
) -> Result<f64> {
    elbo_sum(
        h,
        set,
        core::slice::from_ref(&test_embed.to_vec()),
        cfg,
        noise,
    )
}

/// Sum of single-sample ELBO terms, fresh noise per test embedding.
pub fn elbo_sum(
    h: &InferenceNet,
    set: &ConditioningSet,
    test_embeds: &[Vec<f64>],
    cfg: &ElboConfig,
    noise: &mut NoiseSource,
) -> Result<f64> {
    let d = set.embed_width() + 1;
    let draws = test_embeds
        .iter()
        .map(|_| noise.draw(d, &cfg.prior))
        .collect::<Result<Vec<_>>>()?;
    elbo_sum_with_noise(h, set, test_embeds, &draws, cfg)
}

//! Covariate-conditioned energy prior over head parameters.
//!
//! For a conditioning set `x_1..x_N` and a test covariate `x*`, the energy of
//! head parameters `θ` integrates the log-likelihood of every possible
//! outcome at every covariate:
//!
//! ```text
//! E(θ) = ∫ Σ_i log p(y | x_i, θ) + log p(y | x*, θ) dy
//! ```
//!
//! and the prior density is `exp(E(θ)) / Z`. `Z` depends on the covariates
//! only, so everything here works with the unnormalized log-density `E`.
//!
//! Binary outcomes make the integral an exact two-term sum. Continuous
//! outcomes use plain Monte Carlo over `r` uniform draws from
//! `[y_min, y_max]`, scaled by the range width, with the unit-variance
//! Gaussian likelihood.

use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::math;
use crate::model::{self, head_output, log_lik_at, ConditioningSet, HeadParams, Task};
use crate::rng::VidsRng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub y_min: f64,
    pub y_max: f64,
    /// Monte Carlo draws `r` for continuous outcomes.
    pub samples: usize,
    pub task: Task,
}

impl PriorConfig {
    pub const DEFAULT_SAMPLES: usize = 64;
    pub const DEFAULT_MARGIN: f64 = 3.0;

    pub fn classification() -> Self {
        PriorConfig {
            y_min: 0.0,
            y_max: 1.0,
            samples: 1,
            task: Task::Classification,
        }
    }

    pub fn regression(y_min: f64, y_max: f64, samples: usize) -> Result<Self> {
        let cfg = PriorConfig {
            y_min,
            y_max,
            samples,
            task: Task::Regression,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Integration range `[min(y) - 3, max(y) + 3]` with 64 draws.
    pub fn regression_from_outcomes(y: &[f64]) -> Result<Self> {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        PriorConfig::regression(
            lo - Self::DEFAULT_MARGIN,
            hi + Self::DEFAULT_MARGIN,
            Self::DEFAULT_SAMPLES,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == Task::Regression {
            if self.samples == 0 {
                return Err(Error::Config(
                    "prior Monte Carlo sample count r must be >= 1".into(),
                ));
            }
            if !(self.y_min < self.y_max) || !self.y_min.is_finite() || !self.y_max.is_finite() {
                return Err(Error::Config(alloc::format!(
                    "prior integration range [{}, {}] is empty",
                    self.y_min,
                    self.y_max
                )));
            }
        }
        Ok(())
    }

    fn volume(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Outcome draws for one energy evaluation; empty for classification.
pub fn draw_outcomes(cfg: &PriorConfig, rng: &mut VidsRng) -> Result<Vec<f64>> {
    cfg.validate()?;
    match cfg.task {
        Task::Classification => Ok(Vec::new()),
        Task::Regression => {
            let dist = Uniform::new_inclusive(cfg.y_min, cfg.y_max)
                .map_err(|e| Error::Config(alloc::format!("{e}")))?;
            Ok((0..cfg.samples).map(|_| dist.sample(rng)).collect())
        }
    }
}

/// Energy by direct summation over every covariate and outcome (draw).
pub fn energy_from_draws(
    theta: &HeadParams,
    train_embeds: &[Vec<f64>],
    test_embed: &[f64],
    draws: &[f64],
    cfg: &PriorConfig,
) -> Result<f64> {
    if train_embeds.is_empty() {
        return Err(Error::Input(
            "energy needs at least one training covariate".into(),
        ));
    }
    let outputs = train_embeds
        .iter()
        .map(|e| theta.output(e))
        .chain(core::iter::once(theta.output(test_embed)))
        .collect::<Result<Vec<f64>>>()?;
    match cfg.task {
        Task::Classification => Ok(outputs
            .iter()
            .map(|&l| {
                log_lik_at(0.0, l, Task::Classification) + log_lik_at(1.0, l, Task::Classification)
            })
            .sum()),
        Task::Regression => {
            if draws.is_empty() {
                return Err(Error::Config(
                    "regression energy needs at least one outcome draw".into(),
                ));
            }
            let total: f64 = draws
                .iter()
                .map(|&y| {
                    outputs
                        .iter()
                        .map(|&mu| math::log_std_normal(y, mu))
                        .sum::<f64>()
                })
                .sum();
            Ok(cfg.volume() * total / draws.len() as f64)
        }
    }
}

/// `E(θ; x_1..x_N, x*)`, drawing fresh Monte Carlo outcomes from `rng` for
/// continuous tasks.
pub fn energy(
    theta: &HeadParams,
    train_embeds: &[Vec<f64>],
    test_embed: &[f64],
    cfg: &PriorConfig,
    rng: &mut VidsRng,
) -> Result<f64> {
    let draws = draw_outcomes(cfg, rng)?;
    energy_from_draws(theta, train_embeds, test_embed, &draws, cfg)
}

/// Unnormalized prior log-density. The normalizer does not depend on `θ`
/// nor on any variational parameter, so it is dropped.
pub fn log_prior_unnorm(
    theta: &HeadParams,
    train_embeds: &[Vec<f64>],
    test_embed: &[f64],
    cfg: &PriorConfig,
    rng: &mut VidsRng,
) -> Result<f64> {
    energy(theta, train_embeds, test_embed, cfg, rng)
}

/// Energy and its gradient in `θ`, using the cached statistics of `set`.
/// Regression runs in `O(k² + r)`; classification sums over the set.
pub(crate) fn energy_with_grad(
    theta: &[f64],
    set: &ConditioningSet,
    test_embed: &[f64],
    draws: &[f64],
    cfg: &PriorConfig,
) -> (f64, Vec<f64>) {
    let d = theta.len();
    match cfg.task {
        Task::Classification => {
            let mut value = 0.0;
            let mut grad = alloc::vec![0.0; d];
            let pts = set
                .embeds()
                .iter()
                .map(Vec::as_slice)
                .chain(core::iter::once(test_embed));
            for e in pts {
                let l = head_output(theta, e);
                value += math::log_sigmoid(l) + math::log_sigmoid(-l);
                let s = 1.0 - 2.0 * math::sigmoid(l);
                for (g, v) in grad.iter_mut().zip(e) {
                    *g += s * v;
                }
                grad[d - 1] += s;
            }
            (value, grad)
        }
        Task::Regression => {
            let r = draws.len() as f64;
            let n = set.len() as f64;
            let s1: f64 = draws.iter().sum();
            let s2: f64 = draws.iter().map(|y| y * y).sum();
            let g_theta = model::mat_vec(set.gram(), theta);
            let quad = math::dot(theta, &g_theta);
            let lin = math::dot(theta, set.sum_aug());
            let mu_star = head_output(theta, test_embed);
            let train_ss = n * s2 - 2.0 * s1 * lin + r * quad;
            let test_ss = s2 - 2.0 * s1 * mu_star + r * mu_star * mu_star;
            let scale = cfg.volume() / r;
            let value = scale * (-0.5 * (n + 1.0) * r * math::LN_2PI - 0.5 * (train_ss + test_ss));
            let test_slope = s1 - r * mu_star;
            let mut grad: Vec<f64> = set
                .sum_aug()
                .iter()
                .zip(&g_theta)
                .map(|(sa, g)| scale * (s1 * sa - r * g))
                .collect();
            for (g, v) in grad.iter_mut().zip(test_embed) {
                *g += scale * test_slope * v;
            }
            grad[d - 1] += scale * test_slope;
            (value, grad)
        }
    }
}

/// Two-feature logistic energy for `β = (β0, β1, β2)` with
/// `logit = β0 + β1 x1 + β2 x2`, summed over training and test covariates.
pub fn logistic_energy(beta: [f64; 3], train: &[[f64; 2]], test: &[[f64; 2]]) -> f64 {
    train
        .iter()
        .chain(test)
        .map(|x| {
            let l = beta[0] + beta[1] * x[0] + beta[2] * x[1];
            math::log_sigmoid(l) + math::log_sigmoid(-l)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    /// Coefficient index: 0 = intercept `β0`, 1 = `β1`, 2 = `β2`.
    pub coefficient: usize,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return alloc::vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.min + step * i as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub a: GridAxis,
    pub b: GridAxis,
    /// Value of the remaining coefficient.
    pub fixed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrid {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Row-major: `energies[i * b_values.len() + j]` is at `(a_values[i], b_values[j])`.
    pub energies: Vec<f64>,
}

impl EnergyGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.energies[i * self.b_values.len() + j]
    }
}

/// Energy of the two-feature logistic model over a grid of two coefficients.
pub fn prior_grid(train: &[[f64; 2]], test: &[[f64; 2]], spec: &GridSpec) -> Result<EnergyGrid> {
    let (ia, ib) = (spec.a.coefficient, spec.b.coefficient);
    if ia > 2 || ib > 2 || ia == ib {
        return Err(Error::Config(
            "grid axes must be two distinct coefficients in 0..=2".into(),
        ));
    }
    if spec.a.points == 0 || spec.b.points == 0 {
        return Err(Error::Config("grid axes need at least one point".into()));
    }
    if train.is_empty() {
        return Err(Error::Input("prior grid needs training covariates".into()));
    }
    let fixed_index = 3 - ia - ib;
    let a_values = spec.a.values();
    let b_values = spec.b.values();
    let mut energies = Vec::with_capacity(a_values.len() * b_values.len());
    for &a in &a_values {
        for &b in &b_values {
            let mut beta = [0.0; 3];
            beta[ia] = a;
            beta[ib] = b;
            beta[fixed_index] = spec.fixed;
            energies.push(logistic_energy(beta, train, test));
        }
    }
    Ok(EnergyGrid {
        a_values,
        b_values,
        energies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn symmetric_logits_give_two_ln2_per_point() {
        let theta = HeadParams::zeros(1);
        let mut r = rng_from_seed(0);
        let e = energy(
            &theta,
            &[alloc::vec![0.3]],
            &[1.7],
            &PriorConfig::classification(),
            &mut r,
        )
        .unwrap();
        assert!((e + 2.772_588_722_239_781).abs() < 1e-12);
    }

    #[test]
    fn regression_requires_draws() {
        assert!(PriorConfig::regression(0.0, 1.0, 0).is_err());
        assert!(PriorConfig::regression(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn fast_path_matches_direct_summation() {
        let embeds = alloc::vec![
            alloc::vec![0.5, -1.0],
            alloc::vec![2.0, 0.25],
            alloc::vec![-0.3, 0.7]
        ];
        let test = [0.9, -0.4];
        let theta = [0.4, -0.2, 0.1];
        let head = HeadParams::new(theta.to_vec()).unwrap();
        let mut r = rng_from_seed(9);
        for (cfg, y) in [
            (PriorConfig::classification(), alloc::vec![1.0, 0.0, 1.0]),
            (
                PriorConfig::regression(-3.0, 4.0, 17).unwrap(),
                alloc::vec![0.3, -1.2, 2.0],
            ),
        ] {
            let set = ConditioningSet::new(embeds.clone(), y, cfg.task).unwrap();
            let draws = draw_outcomes(&cfg, &mut r).unwrap();
            let (fast, _) = energy_with_grad(&theta, &set, &test, &draws, &cfg);
            let direct = energy_from_draws(&head, &embeds, &test, &draws, &cfg).unwrap();
            assert!(
                (fast - direct).abs() < 1e-9 * direct.abs().max(1.0),
                "{fast} vs {direct}"
            );
        }
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let embeds = alloc::vec![alloc::vec![0.5, -1.0], alloc::vec![2.0, 0.25]];
        let test = [0.9, -0.4];
        let theta = [0.4, -0.2, 0.1];
        let mut r = rng_from_seed(2);
        for cfg in [
            PriorConfig::classification(),
            PriorConfig::regression(-2.0, 2.0, 5).unwrap(),
        ] {
            let set =
                ConditioningSet::new(embeds.clone(), alloc::vec![1.0, 0.0], cfg.task).unwrap();
            let draws = draw_outcomes(&cfg, &mut r).unwrap();
            let (_, g) = energy_with_grad(&theta, &set, &test, &draws, &cfg);
            for i in 0..3 {
                let mut p = theta;
                let mut m = theta;
                p[i] += 1e-6;
                m[i] -= 1e-6;
                let fd = (energy_with_grad(&p, &set, &test, &draws, &cfg).0
                    - energy_with_grad(&m, &set, &test, &draws, &cfg).0)
                    / 2e-6;
                assert!(
                    (fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0),
                    "{i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn single_point_grid() {
        let axis = |c| GridAxis {
            coefficient: c,
            min: 0.5,
            max: 3.0,
            points: 1,
        };
        let g = prior_grid(
            &[[1.0, 0.5]],
            &[],
            &GridSpec {
                a: axis(0),
                b: axis(2),
                fixed: 1.0,
            },
        )
        .unwrap();
        assert_eq!(g.energies.len(), 1);
        assert_eq!(g.a_values, alloc::vec![0.5]);
    }
}

//! How many bootstrap environments are needed to cover an unseen shift.
//!
//! Covariate space is cut into `k` bins. `p` is the binned training
//! distribution, `p*` the binned (unknown) test distribution. With
//! `m = ⌈2(k-1)/ε⌉`, the rounded target `q` is within `ε` of `p*` in L1, and
//! by the method of types a size-`m` sample from `p` has empirical
//! distribution exactly `q` with probability at least
//!
//! ```text
//! ξ = (m + 1)^(-k) · exp(-m · KL(q ‖ p))
//! ```
//!
//! so `L ≥ ln α / ln(1 - ξ)` independent samples contain one within `ε` of
//! `p*` with probability at least `1 - α`. [`certify`] checks that guarantee
//! by simulation.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::math;
use crate::rng::{self, VidsRng};
use crate::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;
/// Slack on L1 comparisons so exactly representable targets are not lost to rounding.
const L1_SLACK: f64 = 1e-12;
pub const MAX_TOTAL_BINS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedDistribution {
    probs: Vec<f64>,
}

impl BinnedDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input(
                "binned distribution needs at least one bin".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Input(
                "bin probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Input(alloc::format!(
                "bin probabilities sum to {sum}, not 1"
            )));
        }
        Ok(BinnedDistribution { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Input("weights must have positive total mass".into()));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        fix_sum(&mut probs);
        BinnedDistribution::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn in_support(&self, bin: usize) -> bool {
        self.probs[bin] > 0.0
    }
}

/// Pushes the rounding residue of a normalization into the largest bin.
fn fix_sum(probs: &mut [f64]) {
    let sum: f64 = probs.iter().sum();
    if let Some(i) = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])) {
        probs[i] += 1.0 - sum;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

/// Per-dimension equal-width bins; the last bin of each axis is closed.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    axes: Vec<Axis>,
}

impl Partition {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Input("partition needs at least one axis".into()));
        }
        for a in &axes {
            if a.bins == 0 || !(a.lo < a.hi) {
                return Err(Error::Input(alloc::format!(
                    "invalid axis [{}, {}] with {} bins",
                    a.lo,
                    a.hi,
                    a.bins
                )));
            }
        }
        Ok(Partition { axes })
    }

    pub fn equal_width(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Partition::new(vec![Axis { lo, hi, bins }])
    }

    /// Equal-width bins over the range of `rows` in every dimension, with
    /// `bins_per_dim` reduced until the total is at most 64.
    pub fn from_rows(rows: &[&[f64]], bins_per_dim: usize) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if d == 0 {
            return Err(Error::Input("cannot build a partition from no data".into()));
        }
        let mut b = bins_per_dim.max(1);
        while b > 1 && b.checked_pow(d as u32).is_none_or(|t| t > MAX_TOTAL_BINS) {
            b -= 1;
        }
        let axes = (0..d)
            .map(|j| {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let mut hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                if !(hi > lo) {
                    hi = lo + 1.0;
                }
                Axis { lo, hi, bins: b }
            })
            .collect();
        Partition::new(axes)
    }

    pub fn bins(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn bin_of(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.axes.len() {
            return Err(Error::dim("partition point", self.axes.len(), point.len()));
        }
        let mut index = 0;
        for (a, &v) in self.axes.iter().zip(point) {
            if !(v >= a.lo && v <= a.hi) {
                return Err(Error::Input(alloc::format!(
                    "value {v} outside partition range [{}, {}]",
                    a.lo,
                    a.hi
                )));
            }
            let width = (a.hi - a.lo) / a.bins as f64;
            let b = (((v - a.lo) / width) as usize).min(a.bins - 1);
            index = index * a.bins + b;
        }
        Ok(index)
    }
}

/// Empirical bin frequencies of `points`.
pub fn bin_data(points: &[&[f64]], partition: &Partition) -> Result<BinnedDistribution> {
    if points.is_empty() {
        return Err(Error::Input("cannot bin an empty sample".into()));
    }
    let mut counts = vec![0.0; partition.bins()];
    for p in points {
        counts[partition.bin_of(p)?] += 1.0;
    }
    BinnedDistribution::from_weights(&counts)
}

/// One-dimensional convenience wrapper around [`bin_data`].
pub fn bin_values(values: &[f64], partition: &Partition) -> Result<BinnedDistribution> {
    let rows: Vec<&[f64]> = values.iter().map(core::slice::from_ref).collect();
    bin_data(&rows, partition)
}

/// Sample size `m = ⌈2(k-1)/ε⌉` (at least 1).
pub fn required_m(epsilon: f64, k: usize) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    Ok((libm::ceil(2.0 * (k as f64 - 1.0) / epsilon) as usize).max(1))
}

/// `q_i = ⌊m p*_i⌋ / m` for all but the last bin, which takes the remainder.
pub fn rounded_target(p_star: &BinnedDistribution, m: usize) -> Result<BinnedDistribution> {
    if m == 0 {
        return Err(Error::Input("m must be >= 1".into()));
    }
    let k = p_star.k();
    let mf = m as f64;
    let mut counts: Vec<usize> = p_star.probs()[..k - 1]
        .iter()
        .map(|&p| libm::floor(mf * p + 1e-9) as usize)
        .collect();
    let used: usize = counts.iter().sum();
    counts.push(m.saturating_sub(used));
    Ok(BinnedDistribution {
        probs: counts.iter().map(|&c| c as f64 / mf).collect(),
    })
}

/// `KL(q ‖ p)` in nats, with `0 · ln(0/·) = 0`.
pub fn kl(q: &BinnedDistribution, p: &BinnedDistribution) -> Result<f64> {
    check_same_k(q, p)?;
    let mut total = 0.0;
    for (i, (&qi, &pi)) in q.probs().iter().zip(p.probs()).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::SupportViolation { bin: i });
        }
        total += qi * math::ln(qi / pi);
    }
    Ok(total)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_same_k(a: &BinnedDistribution, b: &BinnedDistribution) -> Result<()> {
    if a.k() != b.k() {
        return Err(Error::dim("bin count", a.k(), b.k()));
    }
    Ok(())
}

/// Method-of-types lower bound `(m+1)^(-k) exp(-m KL(q ‖ p))`.
pub fn xi_bound(q: &BinnedDistribution, p: &BinnedDistribution, m: usize, k: usize) -> Result<f64> {
    let d = kl(q, p)?;
    let mf = m as f64;
    Ok(math::exp(-(k as f64) * math::ln(mf + 1.0) - mf * d))
}

/// Exact probability that a size-`m` sample from `p` has empirical
/// distribution `q`: multinomial coefficient times `Π p_i^{m q_i}`.
pub fn type_class_probability(
    q: &BinnedDistribution,
    p: &BinnedDistribution,
    m: usize,
) -> Result<f64> {
    check_same_k(q, p)?;
    let mf = m as f64;
    let mut counts = Vec::with_capacity(q.k());
    for &qi in q.probs() {
        let c = libm::round(qi * mf);
        if (c - qi * mf).abs() > 1e-9 {
            return Err(Error::Input(alloc::format!("q is not a type of size {m}")));
        }
        counts.push(c as usize);
    }
    let mut log_prob = ln_factorial(m);
    for (&c, &pi) in counts.iter().zip(p.probs()) {
        log_prob -= ln_factorial(c);
        if c > 0 {
            if pi == 0.0 {
                return Ok(0.0);
            }
            log_prob += c as f64 * math::ln(pi);
        }
    }
    Ok(math::exp(log_prob))
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| math::ln(i as f64)).sum()
}

/// `⌈ln α / ln(1 - ξ)⌉`.
pub fn required_l(xi: f64, alpha: f64) -> Result<u64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Domain(alloc::format!(
            "ξ must lie in (0, 1), got {xi}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(alloc::format!(
            "α must lie in (0, 1), got {alpha}"
        )));
    }
    let ratio = math::ln(alpha) / libm::log1p(-xi);
    Ok((libm::ceil(ratio) as u64).max(1))
}

/// Closed-form upper bound on the required `L` in terms of `ε`, `k`, `α`:
/// `((2(k-1)/ε + 2)^k e^{(2(k-1)/ε + 1) KL} - 1) ln(1/α)`.
pub fn remark_bound(epsilon: f64, k: usize, alpha: f64, kl_qp: f64) -> f64 {
    let a = 2.0 * (k as f64 - 1.0) / epsilon;
    (libm::pow(a + 2.0, k as f64) * math::exp((a + 1.0) * kl_qp) - 1.0) * math::ln(1.0 / alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduced {
    pub p: BinnedDistribution,
    pub p_star: BinnedDistribution,
    /// Bins kept, as indices into the original partition.
    pub kept: Vec<usize>,
    /// L1 distance between `p*` and its reduced, renormalized version.
    pub eps_prime: f64,
}

/// Drops bins where `p = 0 < p*` and renormalizes both distributions on the
/// remaining bins.
pub fn support_reduce(p: &BinnedDistribution, p_star: &BinnedDistribution) -> Result<Reduced> {
    check_same_k(p, p_star)?;
    let kept: Vec<usize> = (0..p.k())
        .filter(|&i| !(p.probs()[i] == 0.0 && p_star.probs()[i] > 0.0))
        .collect();
    if kept.len() == p.k() {
        return Ok(Reduced {
            p: p.clone(),
            p_star: p_star.clone(),
            kept,
            eps_prime: 0.0,
        });
    }
    let kept_star: f64 = kept.iter().map(|&i| p_star.probs()[i]).sum();
    if !(kept_star > 0.0) {
        return Err(Error::Irreducible);
    }
    let p_red =
        BinnedDistribution::from_weights(&kept.iter().map(|&i| p.probs()[i]).collect::<Vec<_>>())?;
    let star_red = BinnedDistribution::from_weights(
        &kept.iter().map(|&i| p_star.probs()[i]).collect::<Vec<_>>(),
    )?;
    let mut lifted = vec![0.0; p.k()];
    for (j, &i) in kept.iter().enumerate() {
        lifted[i] = star_red.probs()[j];
    }
    let eps_prime = l1(&lifted, p_star.probs());
    Ok(Reduced {
        p: p_red,
        p_star: star_red,
        kept,
        eps_prime,
    })
}

/// Fraction of `trials` in which at least one of `l` size-`m` samples from
/// `p` lands within `epsilon` of `p*` in L1.
pub fn certify<R: Rng + ?Sized>(
    p: &BinnedDistribution,
    p_star: &BinnedDistribution,
    m: usize,
    l: u64,
    epsilon: f64,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_same_k(p, p_star)?;
    if trials == 0 {
        return Err(Error::Input("trials must be >= 1".into()));
    }
    if m == 0 {
        return Err(Error::Input("m must be >= 1".into()));
    }
    let dist = WeightedIndex::new(p.probs()).map_err(|e| Error::Input(alloc::format!("{e}")))?;
    let k = p.k();
    let mut counts = vec![0usize; k];
    let mut hat = vec![0.0; k];
    let mut successes = 0usize;
    for _ in 0..trials {
        let mut hit = false;
        for _ in 0..l {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..m {
                counts[dist.sample(rng)] += 1;
            }
            for (h, &c) in hat.iter_mut().zip(&counts) {
                *h = c as f64 / m as f64;
            }
            if l1(&hat, p_star.probs()) <= epsilon + L1_SLACK {
                hit = true;
                break;
            }
        }
        successes += usize::from(hit);
    }
    Ok(successes as f64 / trials as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub kl: f64,
    pub xi: f64,
    pub required_l: u64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    /// Present when `supp p* ⊆ supp p`.
    pub raw: Option<CoverageRow>,
    /// Present when bins had to be dropped; tolerance is `ε - ε'`.
    pub reduced: Option<(CoverageRow, f64)>,
}

fn coverage_row(
    p: &BinnedDistribution,
    p_star: &BinnedDistribution,
    epsilon: f64,
    alpha: f64,
    trials: usize,
    rng: &mut VidsRng,
) -> Result<CoverageRow> {
    let k = p.k();
    let m = required_m(epsilon, k)?;
    let q = rounded_target(p_star, m)?;
    let d = kl(&q, p)?;
    let xi = xi_bound(&q, p, m, k)?;
    let required = if xi >= 1.0 { 1 } else { required_l(xi, alpha)? };
    let success_rate = certify(p, p_star, m, required, epsilon, trials, rng)?;
    Ok(CoverageRow {
        k,
        m,
        epsilon,
        kl: d,
        xi,
        required_l: required,
        success_rate,
    })
}

/// Runs the full calculator: `m`, `q`, `ξ`, required `L` and a Monte Carlo
/// certification, falling back to the reduced-support path when needed.
pub fn coverage_report(
    p: &BinnedDistribution,
    p_star: &BinnedDistribution,
    epsilon: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    check_same_k(p, p_star)?;
    let mut r = rng::stream(seed, rng::STREAM_CERTIFY);
    let reduced = support_reduce(p, p_star)?;
    if reduced.eps_prime == 0.0 {
        return Ok(CoverageReport {
            raw: Some(coverage_row(p, p_star, epsilon, alpha, trials, &mut r)?),
            reduced: None,
        });
    }
    let tol = epsilon - reduced.eps_prime;
    if !(tol > 0.0) {
        return Err(Error::Domain(alloc::format!(
            "support reduction costs ε' = {} which exhausts the tolerance ε = {epsilon}",
            reduced.eps_prime
        )));
    }
    let row = coverage_row(&reduced.p, &reduced.p_star, tol, alpha, trials, &mut r)?;
    Ok(CoverageReport {
        raw: None,
        reduced: Some((row, reduced.eps_prime)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bd(p: &[f64]) -> BinnedDistribution {
        BinnedDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn binning_examples() {
        let part = Partition::equal_width(0.0, 1.0, 2).unwrap();
        assert_eq!(bin_values(&[0.1, 0.9], &part).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(
            bin_values(&[0.1, 0.2, 0.3], &part).unwrap().probs(),
            &[1.0, 0.0]
        );
        assert_eq!(part.bin_of(&[1.0]).unwrap(), 1);
        assert!(bin_values(&[1.5], &part).is_err());
    }

    #[test]
    fn grid_partition_is_capped() {
        let rows = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let part = Partition::from_rows(&refs, 10).unwrap();
        assert_eq!(part.bins(), 64);
    }

    #[test]
    fn rounded_target_examples() {
        assert_eq!(
            rounded_target(&bd(&[0.5, 0.5]), 4).unwrap().probs(),
            &[0.5, 0.5]
        );
        let q = rounded_target(&bd(&[0.3, 0.7]), 4).unwrap();
        assert_eq!(q.probs(), &[0.25, 0.75]);
        assert!((l1(q.probs(), &[0.3, 0.7]) - 0.1).abs() < 1e-12);
        assert_eq!(rounded_target(&bd(&[1.0]), 7).unwrap().probs(), &[1.0]);
    }

    #[test]
    fn kl_and_l1_examples() {
        let p = bd(&[0.2, 0.3, 0.5]);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        assert_eq!(l1(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
        let v = kl(&bd(&[0.25, 0.75]), &bd(&[0.5, 0.5])).unwrap();
        assert!((v - 0.130_812_035_941_137_5).abs() < 1e-12, "{v}");
        assert_eq!(
            kl(&bd(&[0.5, 0.5]), &bd(&[1.0, 0.0])),
            Err(Error::SupportViolation { bin: 1 })
        );
    }

    #[test]
    fn xi_and_required_l_examples() {
        let u = bd(&[0.5, 0.5]);
        assert!((xi_bound(&u, &u, 4, 2).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(xi_bound(&u, &u, 0, 2).unwrap(), 1.0);
        assert_eq!(required_l(0.04, 0.05).unwrap(), 74);
        assert_eq!(required_l(0.5, 0.5).unwrap(), 1);
        assert!(required_l(0.0, 0.05).is_err());
        assert!(required_l(1.0, 0.05).is_err());
    }

    #[test]
    fn support_reduce_examples() {
        let same = support_reduce(&bd(&[0.5, 0.5]), &bd(&[0.2, 0.8])).unwrap();
        assert_eq!(same.eps_prime, 0.0);
        assert_eq!(same.p_star.probs(), &[0.2, 0.8]);

        let r = support_reduce(&bd(&[1.0, 0.0]), &bd(&[0.9, 0.1])).unwrap();
        assert_eq!(r.p.probs(), &[1.0]);
        assert_eq!(r.p_star.probs(), &[1.0]);
        assert!((r.eps_prime - 0.2).abs() < 1e-12);

        assert_eq!(
            support_reduce(&bd(&[0.0, 1.0]), &bd(&[1.0, 0.0])),
            Err(Error::Irreducible)
        );
    }

    #[test]
    fn vacuous_tolerance_always_succeeds() {
        let mut r = rng::rng_from_seed(4);
        let rate = certify(&bd(&[0.7, 0.3]), &bd(&[0.1, 0.9]), 3, 1, 2.0, 500, &mut r).unwrap();
        assert_eq!(rate, 1.0);
    }
}

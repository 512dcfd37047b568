//! Point and uncertainty metrics.
//!
//! Predicted class is `p ≥ 0.5`; confidence is `max(p, 1 - p)`.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

pub const DEFAULT_ACE_BINS: usize = 10;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim("metric inputs", a, b));
    }
    if a == 0 {
        return Err(Error::Input("metrics need at least one example".into()));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), targets.len())?;
    let mse = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(math::sqrt(mse))
}

pub fn predicted_class(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn accuracy(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| predicted_class(p) == y)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Adaptive calibration error over `bins` equal-mass confidence bins.
///
/// Examples are sorted by confidence and split into contiguous groups whose
/// sizes differ by at most one.
pub fn ace(probs: &[f64], labels: &[f64], bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if bins == 0 || bins > probs.len() {
        return Err(Error::Input(alloc::format!(
            "ace needs 1 <= R <= N, got R = {bins}, N = {}",
            probs.len()
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let conf = |p: f64| p.max(1.0 - p);
    order.sort_by(|&a, &b| conf(probs[a]).total_cmp(&conf(probs[b])).then(a.cmp(&b)));
    let n = probs.len();
    let mut total = 0.0;
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        let group = &order[lo..hi];
        let size = group.len() as f64;
        let acc = group
            .iter()
            .filter(|&&i| predicted_class(probs[i]) == labels[i])
            .count() as f64
            / size;
        let c = group.iter().map(|&i| conf(probs[i])).sum::<f64>() / size;
        total += (acc - c).abs();
    }
    Ok(total / bins as f64)
}

/// `mean(std | in_a) / mean(std | in_b)`.
pub fn spread_profile(stds: &[f64], in_a: &[bool], in_b: &[bool]) -> Result<f64> {
    check_lengths(stds.len(), in_a.len())?;
    check_lengths(stds.len(), in_b.len())?;
    let region_mean = |mask: &[bool]| -> Result<f64> {
        let picked: Vec<f64> = stds
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .collect();
        if picked.is_empty() {
            return Err(Error::Input("spread profile region is empty".into()));
        }
        Ok(math::mean(&picked))
    };
    Ok(region_mean(in_a)? / region_mean(in_b)?)
}

/// Average ranks, ties sharing the mean of their positions (1-based).
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| out[k] = rank);
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let (ma, mb) = (math::mean(a), math::mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Input("correlation of a constant sequence".into()));
    }
    Ok(sab / math::sqrt(saa * sbb))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// Sample mean and standard error (`s / √n`, `s` with `n - 1`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = math::mean(values);
    if n < 2 {
        return (m, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (m, math::sqrt(ss / (n - 1) as f64 / n as f64))
}

pub fn median(values: &[f64]) -> f64 {
    crate::data::median(values)
}

/// Predictive summaries aligned with the true outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PredictionSet {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        check_lengths(mean.len(), std.len())?;
        check_lengths(mean.len(), targets.len())?;
        if std.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Input("predictive std must be nonnegative".into()));
        }
        Ok(PredictionSet { mean, std, targets })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.mean, &self.targets)
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(&self.mean, &self.targets)
    }

    pub fn ace(&self, bins: usize) -> Result<f64> {
        ace(&self.mean, &self.targets, bins)
    }
}

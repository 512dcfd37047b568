//! Scalar helpers shared by the likelihoods, the prior and the metrics.

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// `ln σ(x)`, finite for any finite `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log-density of `N(y; mean, 1)`.
pub fn log_std_normal(y: f64, mean: f64) -> f64 {
    let r = y - mean;
    -0.5 * LN_2PI - 0.5 * r * r
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by `len`).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

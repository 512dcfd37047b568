//! Synthetic generators, the K-means shift split and standardization.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math;
use crate::model::{Dataset, Task};
use crate::rng::{self, VidsRng};
use crate::{Error, Result};

/// Noise standard deviation of the heteroscedastic benchmark at `x`.
pub fn hetero_noise_std(x: f64) -> f64 {
    x / 10.0
}

/// `y = βx + ε(x)` with `ε(x) ~ N(0, (x/10)²)`; train `x ~ U[0, a]`, test
/// `x ~ U[0, b]`.
pub fn gen_hetero_linear(
    a: f64,
    b: f64,
    beta: f64,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(a > 0.0 && a < b) {
        return Err(Error::Input(alloc::format!(
            "need 0 < a < b, got a = {a}, b = {b}"
        )));
    }
    let mut r = rng::stream(seed, rng::STREAM_DATA);
    let draw = |hi: f64, count: usize, r: &mut VidsRng| -> Result<Dataset> {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.random::<f64>() * hi;
            xs.push(x);
            ys.push(beta * x + hetero_noise_std(x) * rng::standard_normal(r));
        }
        Dataset::new(xs, 1, ys, Task::Regression)
    };
    let train = draw(a, n, &mut r)?;
    let test = draw(b, m, &mut r)?;
    Ok((train, test))
}

/// Beta(1/2, 1/2) draw via the arcsine inverse CDF.
pub fn sample_arcsine<R: Rng + ?Sized>(r: &mut R) -> f64 {
    let s = libm::sin(PI * r.random::<f64>() / 2.0);
    s * s
}

/// Success probability of the logistic gap benchmark.
pub fn gap_rho(x: f64) -> f64 {
    math::sigmoid(-5.0 + 10.0 * x)
}

/// `x ~ Beta(1/2, 1/2)`, `y ~ Bernoulli(σ(10x - 5))`. Training rows with
/// `x ∈ (t, 1 - t)` are rejected until `n` are accepted; test rows are not
/// filtered.
pub fn gen_logistic_gap(t: f64, n: usize, m: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(t > 0.0 && t < 0.5) {
        return Err(Error::Input(alloc::format!(
            "gap threshold must lie in (0, 0.5), got {t}"
        )));
    }
    let mut r = rng::stream(seed, rng::STREAM_DATA);
    let label = |x: f64, r: &mut VidsRng| f64::from(u8::from(r.random::<f64>() < gap_rho(x)));
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while xs.len() < n {
        let x = sample_arcsine(&mut r);
        if x > t && x < 1.0 - t {
            continue;
        }
        ys.push(label(x, &mut r));
        xs.push(x);
    }
    let train = Dataset::new(xs, 1, ys, Task::Classification)?;
    let (mut xs, mut ys) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for _ in 0..m {
        let x = sample_arcsine(&mut r);
        ys.push(label(x, &mut r));
        xs.push(x);
    }
    let test = Dataset::new(xs, 1, ys, Task::Classification)?;
    Ok((train, test))
}

/// Covariates of the two-feature logistic prior example: `x1 ~ N(1, 1)`
/// everywhere, `x2 = 1/2` in training and `x2 ~ N(mean, std)` at test time.
pub fn gen_prior_example(
    n_train: usize,
    n_test: usize,
    test_x2_mean: f64,
    test_x2_std: f64,
    seed: u64,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut r = rng::stream(seed, rng::STREAM_DATA);
    let train = (0..n_train)
        .map(|_| [1.0 + rng::standard_normal(&mut r), 0.5])
        .collect();
    let test = (0..n_test)
        .map(|_| {
            let x1 = 1.0 + rng::standard_normal(&mut r);
            [
                x1,
                test_x2_mean + test_x2_std * rng::standard_normal(&mut r),
            ]
        })
        .collect();
    (train, test)
}

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_MAX_RESEEDS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
}

impl KMeans {
    /// Mean Euclidean distance from members to their centroid, per cluster.
    pub fn spreads(&self, rows: &[&[f64]]) -> Vec<f64> {
        let k = self.centroids.len();
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (row, &c) in rows.iter().zip(&self.assignments) {
            sum[c] += math::sqrt(sq_dist(row, &self.centroids[c]));
            count[c] += 1;
        }
        sum.iter()
            .zip(&count)
            .map(|(s, &n)| s / n.max(1) as f64)
            .collect()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed(rows: &[&[f64]], k: usize, r: &mut VidsRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![rows[r.random_range(0..rows.len())].to_vec()];
    while centroids.len() < k {
        let d2: Vec<f64> = rows.iter().map(|row| nearest(row, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut idx = rows.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            r.random_range(0..rows.len())
        };
        centroids.push(rows[pick].to_vec());
    }
    centroids
}

fn lloyd(rows: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> Option<KMeans> {
    let k = centroids.len();
    let d = rows[0].len();
    let mut assignments: Vec<usize> = rows.iter().map(|row| nearest(row, &centroids).0).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row.iter()) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
        let next: Vec<usize> = rows.iter().map(|row| nearest(row, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let mut counts = vec![0usize; k];
    assignments.iter().for_each(|&c| counts[c] += 1);
    if counts.contains(&0) {
        return None;
    }
    Some(KMeans {
        centroids,
        assignments,
    })
}

/// Lloyd's algorithm with k-means++ seeding, reseeding on empty clusters.
pub fn kmeans(rows: &[&[f64]], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || rows.len() < k {
        return Err(Error::Input(alloc::format!(
            "k-means needs 1 <= k <= N, got k = {k}, N = {}",
            rows.len()
        )));
    }
    for attempt in 0..KMEANS_MAX_RESEEDS {
        let mut r = rng::rng_from_seed(rng::keyed_seed(
            rng::derive_seed(seed, rng::STREAM_DATA),
            &[attempt as u64],
        ));
        if let Some(result) = lloyd(rows, plus_plus_seed(rows, k, &mut r)) {
            return Ok(result);
        }
    }
    Err(Error::EmptyCluster {
        attempts: KMEANS_MAX_RESEEDS,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub clusters: usize,
    pub train_majority_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            clusters: 2,
            train_majority_ratio: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Source row indices, ascending.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Cluster with the largest spread; it dominates the training split.
    pub majority_cluster: usize,
    pub assignments: Vec<usize>,
    pub spreads: Vec<f64>,
}

/// Picks `(major, minor)` counts with `major / (major + minor) ≈ ratio`,
/// shrinking both when the minority pool is too small.
fn split_counts(major_pool: usize, minor_pool: usize, ratio: f64) -> (usize, usize) {
    let minor_for = |major: usize| libm::round(major as f64 * (1.0 - ratio) / ratio) as usize;
    let mut major = libm::floor(ratio * major_pool as f64 + 1e-9) as usize;
    let mut minor = minor_for(major);
    if minor > minor_pool {
        major = libm::floor(major as f64 * minor_pool as f64 / minor as f64) as usize;
        minor = minor_for(major).min(minor_pool);
    }
    (major, minor)
}

/// Clusters the covariates and builds a train split dominated by the
/// high-spread cluster and a test split dominated by the rest.
pub fn kmeans_shift_split(data: &Dataset, spec: &SplitSpec) -> Result<ShiftSplit> {
    if spec.clusters < 2 {
        return Err(Error::Input("shift split needs at least 2 clusters".into()));
    }
    if !(spec.train_majority_ratio > 0.5 && spec.train_majority_ratio <= 1.0) {
        return Err(Error::Input(alloc::format!(
            "train majority ratio must lie in (0.5, 1], got {}",
            spec.train_majority_ratio
        )));
    }
    if data.len() < 2 * spec.clusters {
        return Err(Error::Input(alloc::format!(
            "need at least {} rows, got {}",
            2 * spec.clusters,
            data.len()
        )));
    }
    let rows: Vec<&[f64]> = data.rows().collect();
    let km = kmeans(&rows, spec.clusters, spec.seed)?;
    let spreads = km.spreads(&rows);
    let majority = (0..spreads.len())
        .max_by(|&a, &b| spreads[a].total_cmp(&spreads[b]).then(b.cmp(&a)))
        .unwrap_or(0);

    let mut r = rng::stream(spec.seed, rng::STREAM_ENVS);
    let mut high = km.members(majority);
    let mut low: Vec<usize> = (0..data.len())
        .filter(|&i| km.assignments[i] != majority)
        .collect();
    high.shuffle(&mut r);
    low.shuffle(&mut r);

    let ratio = spec.train_majority_ratio;
    let (train_high, train_low) = split_counts(
        high.len(),
        low.len() - libm::floor(ratio * low.len() as f64 + 1e-9) as usize,
        ratio,
    );
    let (test_low, test_high) = split_counts(low.len(), high.len() - train_high, ratio);

    let mut train_rows: Vec<usize> = high[..train_high]
        .iter()
        .chain(&low[test_low..test_low + train_low])
        .copied()
        .collect();
    let mut test_rows: Vec<usize> = low[..test_low]
        .iter()
        .chain(&high[train_high..train_high + test_high])
        .copied()
        .collect();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(ShiftSplit {
        train: data.subset(&train_rows)?,
        test: data.subset(&test_rows)?,
        train_rows,
        test_rows,
        majority_cluster: majority,
        assignments: km.assignments,
        spreads,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnTransform {
    pub center: f64,
    pub scale: f64,
    /// Constant columns are passed through unchanged.
    pub constant: bool,
}

impl ColumnTransform {
    fn fit(values: &[f64]) -> Self {
        let scale = math::sqrt(math::variance(values));
        if !(scale > 0.0) {
            return ColumnTransform {
                center: 0.0,
                scale: 1.0,
                constant: true,
            };
        }
        ColumnTransform {
            center: median(values),
            scale,
            constant: false,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.center
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-column `(v - median) / std` fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub columns: Vec<ColumnTransform>,
    /// Only regression targets are transformed.
    pub target: Option<ColumnTransform>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let columns = (0..train.width())
            .map(|j| ColumnTransform::fit(&train.column(j)))
            .collect();
        let target = (train.task() == Task::Regression).then(|| ColumnTransform::fit(train.y()));
        Standardizer { columns, target }
    }

    /// Indices of columns passed through because their training std is 0.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| self.columns[j].constant)
            .collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .constant_columns()
            .into_iter()
            .map(|j| alloc::format!("column {j} is constant in training data; left unscaled"))
            .collect();
        if self.target.as_ref().is_some_and(|t| t.constant) {
            out.push("target is constant in training data; left unscaled".into());
        }
        out
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.width() != self.columns.len() {
            return Err(Error::dim(
                "standardize width",
                self.columns.len(),
                data.width(),
            ));
        }
        let w = self.columns.len();
        let x = data
            .x()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.columns[i % w].apply(v))
            .collect();
        let y = match &self.target {
            Some(t) => data.y().iter().map(|&v| t.apply(v)).collect(),
            None => data.y().to_vec(),
        };
        Dataset::new(x, w, y, data.task())
    }

    /// Maps standardized targets (or predictive means) back to the original scale.
    pub fn inverse_target(&self, v: f64) -> f64 {
        self.target.as_ref().map_or(v, |t| t.inverse(v))
    }

    /// Maps a standardized predictive std back to the original scale.
    pub fn inverse_target_scale(&self, s: f64) -> f64 {
        self.target.as_ref().map_or(s, |t| s * t.scale)
    }

    pub fn inverse_covariates(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.columns)
            .map(|(&v, c)| c.inverse(v))
            .collect()
    }
}

pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train);
    Ok((s.apply(train)?, s.apply(test)?, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hetero_supports() {
        let (tr, te) = gen_hetero_linear(0.5, 1.0, 1.0, 200, 200, 3).unwrap();
        assert!(tr.x().iter().all(|&x| (0.0..=0.5).contains(&x)));
        assert!(te.x().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(gen_hetero_linear(1.0, 1.0, 1.0, 2, 2, 0).is_err());
    }

    #[test]
    fn gap_is_empty_in_training() {
        let (tr, te) = gen_logistic_gap(0.3, 500, 500, 1).unwrap();
        assert_eq!(tr.len(), 500);
        assert!(tr.x().iter().all(|&x| x <= 0.3 || x >= 0.7));
        assert!(te.x().iter().any(|&x| x > 0.3 && x < 0.7));
        assert_eq!(gap_rho(0.5), 0.5);
    }

    #[test]
    fn standardize_hand_example() {
        let train =
            Dataset::new(vec![1.0, 2.0, 3.0], 1, vec![0.0; 3], Task::Classification).unwrap();
        let (tr, _, s) = standardize(&train, &train).unwrap();
        assert!((tr.x()[2] - 1.224_744_871_391_589).abs() < 1e-12);
        assert!((s.columns[0].inverse(tr.x()[2]) - 3.0).abs() < 1e-12);
        assert!(s.target.is_none());
    }

    #[test]
    fn constant_column_passes_through() {
        let train = Dataset::new(
            vec![5.0, 1.0, 5.0, 2.0],
            2,
            vec![0.0, 1.0],
            Task::Regression,
        )
        .unwrap();
        let (tr, _, s) = standardize(&train, &train).unwrap();
        assert_eq!(s.constant_columns(), vec![0]);
        assert_eq!(tr.x()[0], 5.0);
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn split_counts_follow_ratio() {
        assert_eq!(split_counts(100, 10, 0.9), (90, 10));
        assert_eq!(split_counts(100, 5, 0.9), (45, 5));
        assert_eq!(split_counts(10, 0, 1.0), (10, 0));
    }
}

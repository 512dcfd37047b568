//! Datasets, the embedding network, the affine prediction head and its
//! likelihoods.
//!
//! The base predictor is `f_θ(g_ξ(x))`: a dense embedding `g` into `R^k`
//! followed by an affine head `θ = (w, b)` of length `k + 1`. For regression
//! the head output is the mean of a unit-variance Gaussian, for binary
//! classification it is a logit.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math;
use crate::nn::{self, Activation, DenseNet, Direction, Layer, OutputObjective};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "regression" => Some(Task::Regression),
            "classification" => Some(Task::Classification),
            _ => None,
        }
    }
}

/// Covariates (row-major `len × width`) with one outcome per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    width: usize,
    y: Vec<f64>,
    task: Task,
}

impl Dataset {
    pub fn new(x: Vec<f64>, width: usize, y: Vec<f64>, task: Task) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Input("dataset must have at least one row".into()));
        }
        if width == 0 {
            return Err(Error::Input(
                "dataset must have at least one covariate".into(),
            ));
        }
        if x.len() != width * y.len() {
            return Err(Error::dim("dataset covariates", width * y.len(), x.len()));
        }
        if task == Task::Classification {
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Input(alloc::format!(
                    "classification label at row {i} is {} (expected 0 or 1)",
                    y[i]
                )));
            }
        }
        Ok(Dataset { x, width, y, task })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, task: Task) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Input(alloc::format!(
                    "row {i} has {} covariates, expected {width}",
                    row.len()
                )));
            }
            x.extend_from_slice(row);
        }
        Dataset::new(x, width, y, task)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.x.chunks_exact(self.width)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(indices.len() * self.width);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(alloc::format!("row index {i} out of range")));
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset::new(x, self.width, y, self.task)
    }

    /// Column `j` of the covariates.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

/// Head parameters `θ`: `k` weights followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams(Vec<f64>);

impl HeadParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("head needs at least a bias".into()));
        }
        Ok(HeadParams(values))
    }

    pub fn zeros(embed_width: usize) -> Self {
        HeadParams(vec![0.0; embed_width + 1])
    }

    pub fn embed_width(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn output(&self, embed: &[f64]) -> Result<f64> {
        if embed.len() != self.embed_width() {
            return Err(Error::dim("head input", self.embed_width(), embed.len()));
        }
        Ok(head_output(&self.0, embed))
    }
}

/// `w · e + b` for `theta = (w, b)`; no width check.
pub(crate) fn head_output(theta: &[f64], embed: &[f64]) -> f64 {
    let k = embed.len();
    math::dot(&theta[..k], embed) + theta[k]
}

/// Log-likelihood of outcome `y` given the head output (mean or logit).
pub(crate) fn log_lik_at(y: f64, output: f64, task: Task) -> f64 {
    match task {
        Task::Regression => math::log_std_normal(y, output),
        Task::Classification => {
            y * math::log_sigmoid(output) + (1.0 - y) * math::log_sigmoid(-output)
        }
    }
}

/// Derivative of [`log_lik_at`] with respect to the head output.
pub(crate) fn log_lik_slope(y: f64, output: f64, task: Task) -> f64 {
    match task {
        Task::Regression => y - output,
        Task::Classification => y - math::sigmoid(output),
    }
}

/// `log p(y | x, θ)` for an embedded covariate.
pub fn log_lik(y: f64, embed: &[f64], theta: &HeadParams, task: Task) -> Result<f64> {
    if task == Task::Classification && y != 0.0 && y != 1.0 {
        return Err(Error::Input(alloc::format!(
            "classification outcome {y} is not 0 or 1"
        )));
    }
    Ok(log_lik_at(y, theta.output(embed)?, task))
}

/// Architecture of the embedding `g: R^d -> R^k`; the last width is `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingArch {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl EmbeddingArch {
    pub fn relu(widths: Vec<usize>) -> Self {
        EmbeddingArch {
            widths,
            activation: Activation::Relu,
        }
    }

    pub fn embed_width(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    net: DenseNet,
}

impl EmbeddingModel {
    pub fn new(net: DenseNet) -> Self {
        EmbeddingModel { net }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn embed_width(&self) -> usize {
        self.net.output_width()
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x)
    }

    pub fn embed_dataset(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.rows().map(|r| self.embed(r)).collect()
    }

    /// Splits a base network (embedding layers + 1-output head layer) into
    /// the embedding and the head parameters.
    pub fn split_base(base: DenseNet) -> Result<(EmbeddingModel, HeadParams)> {
        let mut layers = base.into_layers();
        if layers.len() < 2 {
            return Err(Error::Input(
                "base network needs embedding layers and a head".into(),
            ));
        }
        let head = layers.pop().unwrap();
        if head.outputs() != 1 {
            return Err(Error::dim("head outputs", 1, head.outputs()));
        }
        let mut theta = head.weights().to_vec();
        theta.push(head.bias()[0]);
        Ok((
            EmbeddingModel::new(DenseNet::new(layers)?),
            HeadParams(theta),
        ))
    }

    /// Inverse of [`EmbeddingModel::split_base`].
    pub fn join_base(&self, head: &HeadParams) -> Result<DenseNet> {
        let k = self.embed_width();
        if head.embed_width() != k {
            return Err(Error::dim("head width", k + 1, head.as_slice().len()));
        }
        let mut layers = self.net.clone().into_layers();
        layers.push(Layer::new(
            k,
            1,
            head.as_slice()[..k].to_vec(),
            vec![head.as_slice()[k]],
            Activation::Identity,
        )?);
        DenseNet::new(layers)
    }
}

/// Coordinate-wise mean of a set of embeddings.
///
/// Summands are reduced in a canonical order (lexicographic on their
/// values), so the result is bit-identical for any permutation of the input.
pub fn aggregate(embeds: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeds
        .first()
        .ok_or_else(|| Error::Input("cannot aggregate an empty set of embeddings".into()))?;
    let k = first.len();
    if let Some(bad) = embeds.iter().find(|e| e.len() != k) {
        return Err(Error::dim("embedding width", k, bad.len()));
    }
    let mut order: Vec<usize> = (0..embeds.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&embeds[a], &embeds[b]));
    let mut sum = vec![0.0; k];
    for i in order {
        for (s, v) in sum.iter_mut().zip(&embeds[i]) {
            *s += v;
        }
    }
    let n = embeds.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// An embedded conditioning set with cached sufficient statistics, shared
/// by the likelihood and the prior.
#[derive(Clone, Debug)]
pub struct ConditioningSet {
    embeds: Vec<Vec<f64>>,
    y: Vec<f64>,
    task: Task,
    summary: Vec<f64>,
    /// `Σ ẽ ẽᵀ` over augmented embeddings `ẽ = (e, 1)`, row-major.
    gram: Vec<f64>,
    /// `Σ ẽ`.
    sum_aug: Vec<f64>,
    /// `Σ y ẽ`.
    cross: Vec<f64>,
    sum_y2: f64,
}

impl ConditioningSet {
    pub fn new(embeds: Vec<Vec<f64>>, y: Vec<f64>, task: Task) -> Result<Self> {
        if embeds.len() != y.len() {
            return Err(Error::dim("conditioning outcomes", embeds.len(), y.len()));
        }
        let summary = aggregate(&embeds)?;
        if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input(
                "classification outcomes must be 0 or 1".into(),
            ));
        }
        let d = summary.len() + 1;
        let mut gram = vec![0.0; d * d];
        let mut sum_aug = vec![0.0; d];
        let mut cross = vec![0.0; d];
        let mut aug = vec![1.0; d];
        for (e, &yi) in embeds.iter().zip(&y) {
            aug[..d - 1].copy_from_slice(e);
            for a in 0..d {
                sum_aug[a] += aug[a];
                cross[a] += yi * aug[a];
                for b in 0..d {
                    gram[a * d + b] += aug[a] * aug[b];
                }
            }
        }
        let sum_y2 = y.iter().map(|v| v * v).sum();
        Ok(ConditioningSet {
            embeds,
            y,
            task,
            summary,
            gram,
            sum_aug,
            cross,
            sum_y2,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn embeds(&self) -> &[Vec<f64>] {
        &self.embeds
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn embed_width(&self) -> usize {
        self.summary.len()
    }

    /// Aggregated (mean) embedding of the set.
    pub fn summary(&self) -> &[f64] {
        &self.summary
    }

    pub(crate) fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub(crate) fn sum_aug(&self) -> &[f64] {
        &self.sum_aug
    }

    /// `Σ_i log p(y_i | x_i, θ)` and its gradient in `θ`.
    pub fn log_lik_sum(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = theta.len();
        match self.task {
            Task::Regression => {
                let g_theta = mat_vec(&self.gram, theta);
                let quad = math::dot(theta, &g_theta);
                let lin = math::dot(theta, &self.cross);
                let n = self.len() as f64;
                let value = -0.5 * n * math::LN_2PI - 0.5 * (self.sum_y2 - 2.0 * lin + quad);
                let grad = self
                    .cross
                    .iter()
                    .zip(&g_theta)
                    .map(|(c, g)| c - g)
                    .collect();
                (value, grad)
            }
            Task::Classification => {
                let mut value = 0.0;
                let mut grad = vec![0.0; d];
                for (e, &yi) in self.embeds.iter().zip(&self.y) {
                    let l = head_output(theta, e);
                    value += log_lik_at(yi, l, Task::Classification);
                    let s = log_lik_slope(yi, l, Task::Classification);
                    for (g, v) in grad.iter_mut().zip(e) {
                        *g += s * v;
                    }
                    grad[d - 1] += s;
                }
                (value, grad)
            }
        }
    }
}

pub(crate) fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks_exact(v.len())
        .map(|row| math::dot(row, v))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 3000,
            learning_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub embedding: EmbeddingModel,
    pub head: HeadParams,
    /// Mean training log-likelihood before each epoch's step, then after the last.
    pub trace: Vec<f64>,
}

struct MeanLogLik<'a> {
    y: &'a [f64],
    task: Task,
}

impl OutputObjective for MeanLogLik<'_> {
    fn evaluate(&self, outputs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = self.y.len() as f64;
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (o, &y) in outputs.iter().zip(self.y) {
            value += log_lik_at(y, o[0], self.task);
            grads.push(vec![log_lik_slope(y, o[0], self.task) / n]);
        }
        Ok((value / n, grads))
    }
}

/// Maximum-likelihood fit of embedding and head jointly, by full-batch
/// gradient ascent on the mean log-likelihood.
pub fn pretrain_embedding(
    data: &Dataset,
    arch: &EmbeddingArch,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Pretrained> {
    if cfg.epochs == 0 {
        return Err(Error::Config("pretraining needs at least one epoch".into()));
    }
    if arch.widths.is_empty() {
        return Err(Error::Config("embedding needs at least one layer".into()));
    }
    let mut widths = Vec::with_capacity(arch.widths.len() + 2);
    widths.push(data.width());
    widths.extend_from_slice(&arch.widths);
    widths.push(1);
    let mut activations = vec![arch.activation; arch.widths.len()];
    activations.push(Activation::Identity);
    let mut init_rng = rng::stream(seed, rng::STREAM_INIT);
    let mut net = DenseNet::init(&widths, &activations, &mut init_rng)?;
    // Zero head so early residuals cannot push live units dead.
    let head_layer = net.layers().len() - 1;
    net.layer_mut(head_layer)
        .weights_mut()
        .iter_mut()
        .for_each(|w| *w = 0.0);

    let inputs: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();
    let objective = MeanLogLik {
        y: data.y(),
        task: data.task(),
    };
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (value, tape) = nn::grad(&net, &inputs, &objective)?;
        if !value.is_finite() || !tape.is_finite() {
            return Err(Error::NonFinite {
                stage: "pretrain",
                iteration: epoch,
                detail: alloc::format!("mean log-likelihood {value}"),
            });
        }
        trace.push(value);
        nn::sgd_step(&mut net, &tape, cfg.learning_rate, Direction::Ascent)?;
    }
    let outputs = net.forward_batch(&inputs)?;
    let last = objective.value(&outputs)?;
    if !last.is_finite() {
        return Err(Error::NonFinite {
            stage: "pretrain",
            iteration: cfg.epochs,
            detail: last.to_string(),
        });
    }
    trace.push(last);
    let (embedding, head) = EmbeddingModel::split_base(net)?;
    Ok(Pretrained {
        embedding,
        head,
        trace,
    })
}

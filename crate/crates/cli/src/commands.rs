//! One function per subcommand. Each stage reads its inputs from the seed
//! directory `<out>/seed_<s>/`, writes its artifacts there, and records a
//! `<stage>.manifest` with the config hash, the seed, and content hashes of
//! every input and output file.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use vids_core::data::{self, SplitSpec};
use vids_core::environments;
use vids_core::model::{aggregate, pretrain_embedding, Dataset, EmbeddingModel, Task};
use vids_core::posterior::InferenceNet;
use vids_core::theory::{coverage_report, BinnedDistribution, CoverageRow};
use vids_core::{metrics, prior, rng};

use crate::config::{ExperimentConfig, TaskSection};
use crate::error::{CliError, CliResult};
use crate::io::{self, Table};

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SPLIT_CSV: &str = "split.csv";
pub const STANDARDIZER_CSV: &str = "standardizer.csv";
pub const BASE_CKPT: &str = "base.ckpt";
pub const PRETRAIN_TRACE_CSV: &str = "pretrain_trace.csv";
pub const INFERENCE_CKPT: &str = "inference.ckpt";
pub const TRACE_CSV: &str = "trace.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const SAMPLES_CSV: &str = "prediction_samples.csv";
pub const PHI_CSV: &str = "phi.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const ENVCHECK_TXT: &str = "envcheck.txt";
pub const GRID_TRAIN_CSV: &str = "prior_grid_train.csv";
pub const GRID_SHIFTED_CSV: &str = "prior_grid_shifted.csv";

/// A parsed config together with the command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub config_hash: String,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

impl Run {
    pub fn new(config_text: &str, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Run> {
        let cfg = ExperimentConfig::parse(config_text)?;
        let out = out
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| CliError::config("no output directory: set `out` or pass --out"))?;
        let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
        Ok(Run {
            config_hash: io::content_hash(config_text.as_bytes()),
            cfg,
            out,
            seeds,
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed_{seed}"))
    }

    fn prepared_dir(&self, seed: u64) -> CliResult<PathBuf> {
        let dir = self.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    stage: &'a str,
    seed: u64,
    config_sha256: &'a str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn write_manifest(
    run: &Run,
    dir: &Path,
    stage: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&str],
) -> CliResult<()> {
    let hashes = |paths: Vec<PathBuf>| -> CliResult<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| {
                let key = p.strip_prefix(dir).unwrap_or(p).display().to_string();
                Ok((key, io::file_hash(p)?))
            })
            .collect()
    };
    let m = Manifest {
        stage,
        seed,
        config_sha256: &run.config_hash,
        inputs: hashes(inputs.iter().map(|p| p.to_path_buf()).collect())?,
        outputs: hashes(outputs.iter().map(|o| dir.join(o)).collect())?,
    };
    let path = dir.join(format!("{stage}.manifest"));
    let text = toml::to_string(&m).map_err(|e| CliError::new("io", e.to_string()))?;
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn require(dir: &Path, file: &str, producer: &str) -> CliResult<PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::missing(&p, producer))
    }
}

fn load_split(run: &Run, dir: &Path, file: &str) -> CliResult<Table> {
    let task = run.cfg.task()?;
    io::load_csv(&require(dir, file, "gen-data")?, task.target(), task.task())
}

fn load_base(dir: &Path) -> CliResult<(EmbeddingModel, vids_core::model::HeadParams)> {
    let net = io::read_checkpoint(&require(dir, BASE_CKPT, "pretrain")?)?;
    Ok(EmbeddingModel::split_base(net)?)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn gen_data(run: &Run, seed: u64) -> CliResult<()> {
    let dir = run.prepared_dir(seed)?;
    let task = run.cfg.task()?;
    let mut inputs: Vec<PathBuf> = Vec::new();
    let mut outputs = vec![TRAIN_CSV, TEST_CSV, SPLIT_CSV];
    let split_header = ["split", "source_row", "cluster"].map(String::from);
    let (train, test, covariates) = match task {
        TaskSection::Hetero(h) => {
            let (tr, te) = data::gen_hetero_linear(h.a, h.b, h.beta, h.n_train, h.n_test, seed)?;
            write_generated_split(&dir.join(SPLIT_CSV), &split_header, tr.len(), te.len())?;
            (tr, te, vec!["x".to_owned()])
        }
        TaskSection::Gap(g) => {
            let (tr, te) = data::gen_logistic_gap(g.t, g.n_train, g.n_test, seed)?;
            write_generated_split(&dir.join(SPLIT_CSV), &split_header, tr.len(), te.len())?;
            (tr, te, vec!["x".to_owned()])
        }
        TaskSection::Csv(c) => {
            let table = io::load_csv(&c.path, &c.target, c.task.into())?;
            inputs.push(c.path.clone());
            let spec = SplitSpec {
                clusters: c.clusters,
                train_majority_ratio: c.train_majority_ratio,
                seed,
            };
            let split = data::kmeans_shift_split(&table.data, &spec)?;
            let rows = split
                .train_rows
                .iter()
                .map(|&r| ("train", r))
                .chain(split.test_rows.iter().map(|&r| ("test", r)))
                .map(|(s, r)| {
                    vec![
                        s.to_owned(),
                        r.to_string(),
                        split.assignments[r].to_string(),
                    ]
                });
            io::write_csv(&dir.join(SPLIT_CSV), &split_header, rows)?;
            let (tr, te) = if c.standardize {
                let (tr, te, s) = data::standardize(&split.train, &split.test)?;
                for w in s.warnings() {
                    log::warn!("{w}");
                }
                let names = table.covariates.iter().chain(std::iter::once(&c.target));
                let cols = s
                    .columns
                    .iter()
                    .map(Some)
                    .chain(std::iter::once(s.target.as_ref()));
                let rows = names.zip(cols).filter_map(|(n, t)| {
                    t.map(|t| {
                        vec![
                            n.clone(),
                            fmt(t.center),
                            fmt(t.scale),
                            t.constant.to_string(),
                        ]
                    })
                });
                io::write_csv(
                    &dir.join(STANDARDIZER_CSV),
                    &["column", "center", "scale", "constant"].map(String::from),
                    rows,
                )?;
                outputs.push(STANDARDIZER_CSV);
                (tr, te)
            } else {
                (split.train, split.test)
            };
            (tr, te, table.covariates)
        }
    };
    io::write_dataset(&dir.join(TRAIN_CSV), &train, &covariates, task.target())?;
    io::write_dataset(&dir.join(TEST_CSV), &test, &covariates, task.target())?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(run, &dir, "gen-data", seed, &inputs, &outputs)
}

fn write_generated_split(path: &Path, header: &[String], n: usize, m: usize) -> CliResult<()> {
    let rows = (0..n)
        .map(|r| ("train", r))
        .chain((0..m).map(|r| ("test", r)))
        .map(|(s, r)| vec![s.to_owned(), r.to_string(), String::new()]);
    io::write_csv(path, header, rows)
}

pub fn pretrain(run: &Run, seed: u64) -> CliResult<()> {
    let dir = run.prepared_dir(seed)?;
    let train = load_split(run, &dir, TRAIN_CSV)?;
    let arch = run.cfg.model.arch()?;
    let pre = pretrain_embedding(&train.data, &arch, &run.cfg.model.pretrain(), seed)?;
    log::info!(
        "seed {seed}: pretraining mean log-likelihood {:?} -> {:?}",
        pre.trace.first(),
        pre.trace.last()
    );
    io::write_checkpoint(&dir.join(BASE_CKPT), &pre.embedding.join_base(&pre.head)?)?;
    io::write_csv(
        &dir.join(PRETRAIN_TRACE_CSV),
        &["epoch", "mean_log_lik"].map(String::from),
        pre.trace
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt(*v)]),
    )?;
    write_manifest(
        run,
        &dir,
        "pretrain",
        seed,
        &[&dir.join(TRAIN_CSV)],
        &[BASE_CKPT, PRETRAIN_TRACE_CSV],
    )
}

pub fn fit(run: &Run, seed: u64) -> CliResult<()> {
    let dir = run.prepared_dir(seed)?;
    let train = load_split(run, &dir, TRAIN_CSV)?;
    let (embedding, head) = load_base(&dir)?;
    let task = train.data.task();
    let cfg = run.cfg.train.resolve(task, embedding.embed_width(), seed)?;
    let prior = run.cfg.prior.resolve(task, train.data.y())?;
    let result = environments::fit_with_prior(&train.data, &embedding, &head, &cfg, &prior)?;
    if let (Some(a), Some(b)) = (result.trace.first(), result.trace.last()) {
        log::info!("seed {seed}: objective {} -> {}", a.objective, b.objective);
    }
    io::write_checkpoint(&dir.join(INFERENCE_CKPT), result.net.net())?;
    io::write_csv(
        &dir.join(TRACE_CSV),
        &[
            "iter",
            "objective",
            "var_penalty",
            "env_loss_min",
            "env_loss_max",
        ]
        .map(String::from),
        result.trace.iter().map(|r| {
            vec![
                r.iter.to_string(),
                fmt(r.objective),
                fmt(r.var_penalty),
                fmt(r.env_loss_min),
                fmt(r.env_loss_max),
            ]
        }),
    )?;
    write_manifest(
        run,
        &dir,
        "fit",
        seed,
        &[&dir.join(TRAIN_CSV), &dir.join(BASE_CKPT)],
        &[INFERENCE_CKPT, TRACE_CSV],
    )
}

pub fn predict(run: &Run, seed: u64) -> CliResult<()> {
    let dir = run.prepared_dir(seed)?;
    let train = load_split(run, &dir, TRAIN_CSV)?;
    let test = load_split(run, &dir, TEST_CSV)?;
    let (embedding, _) = load_base(&dir)?;
    let h = InferenceNet::new(io::read_checkpoint(&require(&dir, INFERENCE_CKPT, "fit")?)?)?;
    let task = train.data.task();
    let samples = run
        .cfg
        .train
        .resolve(task, embedding.embed_width(), seed)?
        .predictive_samples;
    let summary = aggregate(&embedding.embed_dataset(&train.data)?)?;
    let stream = rng::derive_seed(seed, rng::STREAM_PREDICT);

    let mut pred_rows = Vec::with_capacity(test.data.len());
    let mut phi_rows = Vec::with_capacity(test.data.len());
    let mut sample_rows = Vec::new();
    for (i, x) in test.data.rows().enumerate() {
        let e = embedding.embed(x)?;
        let phi = h.infer_phi(&summary, &e)?;
        let mut r = rng::rng_from_seed(rng::keyed_seed(stream, &[i as u64]));
        let p = environments::predict_from_phi(&phi, &e, task, samples, &mut r)?;
        let mut row: Vec<String> = x.iter().copied().map(fmt).collect();
        row.extend([fmt(p.mean), fmt(p.std)]);
        pred_rows.push(row);
        let mut prow = vec![i.to_string()];
        prow.extend(phi.mu.iter().chain(&phi.log_std).copied().map(fmt));
        phi_rows.push(prow);
        if run.cfg.predict.write_samples {
            let mut srow = vec![i.to_string()];
            srow.extend(p.samples.iter().copied().map(fmt));
            sample_rows.push(srow);
        }
    }
    let mut header = test.covariates.clone();
    header.extend(["pred_mean", "pred_std"].map(String::from));
    io::write_csv(&dir.join(PREDICTIONS_CSV), &header, pred_rows)?;
    let d = embedding.embed_width() + 1;
    let phi_header: Vec<String> = std::iter::once("index".to_owned())
        .chain((0..d).map(|j| format!("mu_{j}")))
        .chain((0..d).map(|j| format!("logstd_{j}")))
        .collect();
    io::write_csv(&dir.join(PHI_CSV), &phi_header, phi_rows)?;
    let mut outputs = vec![PREDICTIONS_CSV, PHI_CSV];
    if run.cfg.predict.write_samples {
        let header: Vec<String> = std::iter::once("index".to_owned())
            .chain((0..samples).map(|j| format!("s_{j}")))
            .collect();
        io::write_csv(&dir.join(SAMPLES_CSV), &header, sample_rows)?;
        outputs.push(SAMPLES_CSV);
    }
    let inputs = [TRAIN_CSV, TEST_CSV, BASE_CKPT, INFERENCE_CKPT].map(|f| dir.join(f));
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(run, &dir, "predict", seed, &inputs, &outputs)
}

/// Metric name/value pairs for one seed, in a fixed order.
pub fn seed_metrics(run: &Run, seed: u64) -> CliResult<Vec<(String, f64)>> {
    let dir = run.seed_dir(seed);
    let test = load_split(run, &dir, TEST_CSV)?;
    let cols = io::read_columns(
        &require(&dir, PREDICTIONS_CSV, "predict")?,
        &["pred_mean", "pred_std"],
    )?;
    let (mean, std) = (&cols[0], &cols[1]);
    if mean.len() != test.data.len() {
        return Err(CliError::input(format!(
            "{PREDICTIONS_CSV} has {} rows but {TEST_CSV} has {}",
            mean.len(),
            test.data.len()
        )));
    }
    let set = metrics::PredictionSet::new(mean.clone(), std.clone(), test.data.y().to_vec())?;
    let mut out = Vec::new();
    match test.data.task() {
        Task::Regression => out.push(("rmse".to_owned(), set.rmse()?)),
        Task::Classification => {
            out.push(("accuracy".to_owned(), set.accuracy()?));
            out.push(("ace".to_owned(), set.ace(run.cfg.metrics.ace_bins)?));
        }
    }
    let shape = |name: &str, r: vids_core::Result<f64>| match r {
        Ok(v) => (name.to_owned(), v),
        Err(e) => {
            log::warn!("seed {seed}: {name} undefined: {e}");
            (name.to_owned(), f64::NAN)
        }
    };
    match run.cfg.task()? {
        TaskSection::Hetero(h) => {
            let (xs, ss): (Vec<f64>, Vec<f64>) = test
                .data
                .x()
                .iter()
                .zip(std)
                .filter(|(&x, _)| x > h.a)
                .map(|(&x, &s)| (x, s))
                .unzip();
            out.push(shape(
                "spearman_std_extrapolation",
                metrics::spearman(&xs, &ss),
            ));
        }
        TaskSection::Gap(g) => {
            let gap: Vec<bool> = test
                .data
                .x()
                .iter()
                .map(|&x| x > g.t && x < 1.0 - g.t)
                .collect();
            let edge: Vec<bool> = gap.iter().map(|v| !v).collect();
            out.push(shape(
                "spread_ratio_gap",
                metrics::spread_profile(std, &gap, &edge),
            ));
        }
        TaskSection::Csv(_) => {}
    }
    Ok(out)
}

pub fn eval(run: &Run) -> CliResult<()> {
    let header = ["metric", "value", "stderr", "n_seeds"].map(String::from);
    let mut by_metric: Vec<(String, Vec<f64>)> = Vec::new();
    for &seed in &run.seeds {
        let dir = run.prepared_dir(seed)?;
        let values = seed_metrics(run, seed)?;
        io::write_csv(
            &dir.join(METRICS_CSV),
            &header,
            values
                .iter()
                .map(|(n, v)| vec![n.clone(), fmt(*v), String::new(), "1".to_owned()]),
        )?;
        write_manifest(
            run,
            &dir,
            "eval",
            seed,
            &[&dir.join(TEST_CSV), &dir.join(PREDICTIONS_CSV)],
            &[METRICS_CSV],
        )?;
        for (name, v) in values {
            match by_metric.iter_mut().find(|(n, _)| *n == name) {
                Some((_, vs)) => vs.push(v),
                None => by_metric.push((name, vec![v])),
            }
        }
    }
    let rows = by_metric.iter().map(|(name, vs)| {
        let (m, se) = metrics::mean_stderr(vs);
        vec![name.clone(), fmt(m), fmt(se), vs.len().to_string()]
    });
    fs::create_dir_all(&run.out).map_err(|e| CliError::io(&run.out, e))?;
    io::write_csv(&run.out.join(METRICS_CSV), &header, rows)
}

fn coverage_line(mode: &str, r: &CoverageRow) -> String {
    format!(
        "{mode:<8} {:>3} {:>5} {:>9.4} {:>10.6} {:>12.6e} {:>11} {:>12.4}",
        r.k, r.m, r.epsilon, r.kl, r.xi, r.required_l, r.success_rate
    )
}

/// Coverage table for the configured bin distributions; returns the text.
pub fn envcheck(run: &Run, seed: u64) -> CliResult<String> {
    let sec = run
        .cfg
        .envcheck
        .as_ref()
        .ok_or_else(|| CliError::config("missing [envcheck] section"))?;
    let p = BinnedDistribution::from_weights(&sec.p)?;
    let p_star = BinnedDistribution::from_weights(&sec.p_star)?;
    let report = coverage_report(&p, &p_star, sec.epsilon, sec.alpha, sec.trials, seed)?;
    let mut text = format!(
        "{:<8} {:>3} {:>5} {:>9} {:>10} {:>12} {:>11} {:>12}\n",
        "mode", "k", "m", "epsilon", "kl", "xi", "required_L", "success_rate"
    );
    if let Some(r) = &report.raw {
        text.push_str(&coverage_line("raw", r));
        text.push('\n');
    }
    if let Some((r, eps_prime)) = &report.reduced {
        text.push_str(&coverage_line("reduced", r));
        text.push('\n');
        text.push_str(&format!("eps_prime {eps_prime}\n"));
    }
    text.push_str(&format!("alpha {} trials {}\n", sec.alpha, sec.trials));
    let dir = run.prepared_dir(seed)?;
    let path = dir.join(ENVCHECK_TXT);
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    write_manifest(run, &dir, "envcheck", seed, &[], &[ENVCHECK_TXT])?;
    Ok(text)
}

pub fn prior_grid(run: &Run, seed: u64) -> CliResult<()> {
    let sec = run.cfg.prior_grid.clone().unwrap_or_default();
    let (train, test) =
        data::gen_prior_example(sec.n_train, sec.n_test, sec.shift_mean, sec.shift_std, seed);
    let spec = sec.spec();
    let dir = run.prepared_dir(seed)?;
    let header = ["beta_a", "beta_b", "energy"].map(String::from);
    for (file, t) in [(GRID_TRAIN_CSV, &[][..]), (GRID_SHIFTED_CSV, &test[..])] {
        let g = prior::prior_grid(&train, t, &spec)?;
        let rows = g.a_values.iter().enumerate().flat_map(|(i, &a)| {
            let g = &g;
            g.b_values
                .iter()
                .enumerate()
                .map(move |(j, &b)| vec![fmt(a), fmt(b), fmt(g.at(i, j))])
        });
        io::write_csv(&dir.join(file), &header, rows)?;
    }
    write_manifest(
        run,
        &dir,
        "prior-grid",
        seed,
        &[],
        &[GRID_TRAIN_CSV, GRID_SHIFTED_CSV],
    )
}

/// Reads a split written by `gen-data`.
pub fn load_dataset(run: &Run, seed: u64, file: &str) -> CliResult<Dataset> {
    Ok(load_split(run, &run.seed_dir(seed), file)?.data)
}

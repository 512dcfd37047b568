use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use vids::io::{load_csv, read_columns};
use vids::run_args;
use vids_core::model::Task;
use vids_core::rng;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn vids(config: &Path, cmd: &str, extra: &[&str]) -> vids::CliResult<String> {
    let mut args = vec!["vids", cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    run_args(args)
}

/// Every file under `dir`, relative path and bytes, sorted by path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

const SMALL_HETERO: &str = r#"
seeds = [1, 2]
[task]
kind = "hetero"
n_train = 60
n_test = 40
[model]
pretrain_epochs = 100
[train]
environments = 3
env_train_size = 30
env_test_size = 4
iterations = 3
inference_hidden = [16, 8]
predictive_samples = 50
[predict]
write_samples = true
[envcheck]
p = [0.5, 0.5]
p_star = [0.5, 0.5]
epsilon = 0.5
alpha = 0.05
trials = 500
"#;

#[test]
fn generated_splits_have_requested_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let out = tmp.path().join("o");
    vids(
        &cfg,
        "gen-data",
        &["--out", out.to_str().unwrap(), "--seed", "5"],
    )
    .unwrap();
    let train = load_csv(&out.join("seed_5/train.csv"), "y", Task::Regression).unwrap();
    let test = load_csv(&out.join("seed_5/test.csv"), "y", Task::Regression).unwrap();
    assert_eq!((train.data.len(), test.data.len()), (60, 40));
    assert!(!out.join("seed_1").exists());
}

#[test]
fn every_stage_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = out.to_str().unwrap();
        for cmd in [
            "gen-data",
            "pretrain",
            "fit",
            "predict",
            "eval",
            "envcheck",
            "prior-grid",
        ] {
            vids(&cfg, cmd, &["--out", o]).unwrap();
        }
        snaps.push(snapshot(&out));
    }
    let names: Vec<_> = snaps[0]
        .iter()
        .map(|(p, _)| p.display().to_string())
        .collect();
    for f in [
        "seed_1/inference.ckpt",
        "seed_2/predictions.csv",
        "seed_2/prediction_samples.csv",
        "metrics.csv",
    ] {
        assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
    }
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn manifests_record_seed_config_and_input_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    vids(&cfg, "gen-data", &["--out", o, "--seed", "3"]).unwrap();
    vids(&cfg, "pretrain", &["--out", o, "--seed", "3"]).unwrap();
    let text = fs::read_to_string(out.join("seed_3/pretrain.manifest")).unwrap();
    let m: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(m["seed"].as_integer(), Some(3));
    assert_eq!(
        m["config_sha256"].as_str().unwrap(),
        vids::io::content_hash(SMALL_HETERO.as_bytes())
    );
    let train_hash = vids::io::file_hash(&out.join("seed_3/train.csv")).unwrap();
    assert_eq!(m["inputs"]["train.csv"].as_str().unwrap(), train_hash);
    assert!(m["outputs"].as_table().unwrap().contains_key("base.ckpt"));
}

#[test]
fn kmeans_split_of_blob_fixture_follows_the_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let mut r = rng::rng_from_seed(0);
    let mut csv = String::from("id,a,b,label,target\n");
    for i in 0..200 {
        let (c, s) = if i < 100 { (0.0, 2.0) } else { (10.0, 0.3) };
        let a = c + s * rng::standard_normal(&mut r);
        let b = c + s * rng::standard_normal(&mut r);
        csv.push_str(&format!("{i},{a},{b},blob{},{}\n", i / 100, a + b));
    }
    write(tmp.path(), "blobs.csv", &csv);
    let cfg = write(
        tmp.path(),
        "c.toml",
        &format!(
            "[task]\nkind = \"csv\"\npath = \"{}\"\ntarget = \"target\"\ntask = \"regression\"\n",
            tmp.path().join("blobs.csv").display()
        ),
    );
    let out = tmp.path().join("o");
    vids(&cfg, "gen-data", &["--out", out.to_str().unwrap()]).unwrap();
    let mut reader = csv::Reader::from_path(out.join("seed_0/split.csv")).unwrap();
    let rows: Vec<(String, usize)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_owned(), r[1].parse().unwrap())
        })
        .collect();
    let count = |split: &str, wide: bool| {
        rows.iter()
            .filter(|(s, i)| s == split && (*i < 100) == wide)
            .count()
    };
    assert_eq!((count("train", true), count("train", false)), (90, 10));
    assert_eq!((count("test", false), count("test", true)), (90, 10));
    let train = load_csv(&out.join("seed_0/train.csv"), "target", Task::Regression).unwrap();
    // `id` is numeric and kept; `label` is dropped.
    assert_eq!(train.covariates, ["id", "a", "b"]);
    assert!(out.join("seed_0/standardizer.csv").exists());
}

#[test]
fn eval_of_exact_predictions_reports_zero_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    vids(&cfg, "gen-data", &["--out", o, "--seed", "1"]).unwrap();
    let cols = read_columns(&out.join("seed_1/test.csv"), &["x", "y"]).unwrap();
    let mut text = String::from("x,pred_mean,pred_std\n");
    for (i, (x, y)) in cols[0].iter().zip(&cols[1]).enumerate() {
        text.push_str(&format!("{x},{y},{}\n", 0.01 * (1 + i) as f64));
    }
    write(&out.join("seed_1"), "predictions.csv", &text);
    vids(&cfg, "eval", &["--out", o, "--seed", "1"]).unwrap();
    let m = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(
        m.starts_with("metric,value,stderr,n_seeds\nrmse,0,0,1\n"),
        "{m}"
    );
}

#[test]
fn missing_prerequisites_name_the_producing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let o = tmp.path().join("o");
    let o = o.to_str().unwrap();
    let e = vids(&cfg, "fit", &["--out", o]).unwrap_err();
    assert_eq!((e.stage, e.kind), ("fit", "missing-prerequisite"));
    assert!(e.message.contains("gen-data"));
    vids(&cfg, "gen-data", &["--out", o]).unwrap();
    let e = vids(&cfg, "predict", &["--out", o]).unwrap_err();
    assert!(
        e.message.contains("base.ckpt") && e.message.contains("pretrain"),
        "{e}"
    );
}

#[test]
fn envcheck_reports_the_coverage_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &SMALL_HETERO.replace("trials = 500", "trials = 10000"),
    );
    let out = tmp.path().join("o");
    let text = vids(
        &cfg,
        "envcheck",
        &["--out", out.to_str().unwrap(), "--seed", "0"],
    )
    .unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(&row[..3], ["raw", "2", "4"]);
    assert!((row[5].parse::<f64>().unwrap() - 0.04).abs() < 1e-12);
    assert_eq!(row[6], "74");
    assert!(row[7].parse::<f64>().unwrap() >= 0.95);
    assert_eq!(
        fs::read_to_string(out.join("seed_0/envcheck.txt")).unwrap(),
        text
    );

    let wide = write(
        tmp.path(),
        "w.toml",
        &SMALL_HETERO.replace("epsilon = 0.5", "epsilon = 2.0"),
    );
    let text = vids(&wide, "envcheck", &["--out", out.to_str().unwrap()]).unwrap();
    assert_eq!(
        text.lines().nth(1).unwrap().split_whitespace().nth(7),
        Some("1.0000")
    );

    let disjoint = write(
        tmp.path(),
        "d.toml",
        &SMALL_HETERO
            .replace("p_star = [0.5, 0.5]", "p_star = [0.0, 1.0]")
            .replace("p = [0.5, 0.5]", "p = [1.0, 0.0]"),
    );
    let e = vids(&disjoint, "envcheck", &["--out", out.to_str().unwrap()]).unwrap_err();
    assert_eq!(e.kind, "domain");
    assert!(e.message.contains("irreducible"), "{e}");
}

#[test]
fn prior_grids_show_the_exchangeability_ridge() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_HETERO);
    let out = tmp.path().join("o");
    vids(
        &cfg,
        "prior-grid",
        &["--out", out.to_str().unwrap(), "--seed", "0"],
    )
    .unwrap();
    let grid = |f: &str| {
        let c = read_columns(&out.join("seed_0").join(f), &["beta_a", "beta_b", "energy"]).unwrap();
        assert_eq!(c[2].len(), 41 * 41);
        c[2].clone()
    };
    // Default axes: β0 step 0.1, β2 step 0.2, training x2 = 1/2, so
    // (β0 + δ, β2 − 2δ) is cell (i + 1, j − 1).
    let max_ridge_gap = |e: &[f64]| {
        let mut worst: f64 = 0.0;
        for i in 0..40 {
            for j in 1..41 {
                worst = worst.max((e[i * 41 + j] - e[(i + 1) * 41 + j - 1]).abs());
            }
        }
        worst
    };
    assert!(max_ridge_gap(&grid("prior_grid_train.csv")) <= 1e-9);
    assert!(max_ridge_gap(&grid("prior_grid_shifted.csv")) > 1e-3);
}

#[test]
fn csv_loader_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "two.csv", "a,b,y\n1.5,-2,0.25\n3,4e-3,1\n");
    let t = load_csv(&p, "y", Task::Regression).unwrap();
    assert_eq!(t.data.len(), 2);
    assert_eq!(t.data.x(), [1.5, -2.0, 3.0, 4e-3]);
    assert_eq!(t.data.y(), [0.25, 1.0]);

    let e = load_csv(&p, "z", Task::Regression).unwrap_err();
    assert!(e.message.contains("`z`"), "{e}");

    let p = write(
        tmp.path(),
        "mixed.csv",
        "a,name,b,y\n1,foo,2,3\n4,bar,5,6\n",
    );
    let t = load_csv(&p, "y", Task::Regression).unwrap();
    assert_eq!(t.data.width(), 2);
    assert_eq!(t.dropped, ["name"]);

    let p = write(tmp.path(), "bad.csv", "a,y\n1,2\n3,4\noops,6\n");
    let e = load_csv(&p, "y", Task::Regression).unwrap_err();
    assert_eq!(e.kind, "parse");
    assert!(
        e.message.contains("row 2") && e.message.contains("`oops`"),
        "{e}"
    );
}

#[test]
fn binary_exits_nonzero_with_one_line_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[train]\niterashuns = 3\n");
    let out = Proc::new(env!("CARGO_BIN_EXE_vids"))
        .args([
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with("error stage=fit kind=config message=\""),
        "{err}"
    );

    let out = Proc::new(env!("CARGO_BIN_EXE_vids"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(out.status.success());
}

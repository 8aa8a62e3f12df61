//! End-to-end runs of the `plsi` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn plsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plsi"))
        .args(args)
        .env_remove("PLSI_SEED")
        .output()
        .expect("run plsi")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "plsi failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 800 rows with eight exposures and three covariates.
fn simulated(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("sim");
    ok(plsi(&["simulate", "--link", "sigmoid", "--n", "800", "--seed", "3", "--out", s(&out)]));
    out.join("data.csv")
}

fn data_args(data: &Path) -> Vec<String> {
    ["--data", s(data), "--exposures", "x*", "--covariates", "z*", "--outcome", "y"]
        .iter()
        .map(|a| a.to_string())
        .collect()
}

fn run(cmd: &str, data: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.to_string()];
    args.extend(data_args(data));
    args.extend(["--hidden", "8"].map(String::from));
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "80"].map(String::from));
    }
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    plsi(&refs)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn bootstrap_report_has_one_row_per_coefficient() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir);
    let out = dir.path().join("boot");
    ok(run("bootstrap", &data, &["--replicates", "12", "--out", s(&out)]));

    let text = fs::read_to_string(out.join("inference.txt")).unwrap();
    assert!(text.lines().next().unwrap().contains("95% CI"));
    let rows = csv_rows(&out.join("inference.csv"));
    let params: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        params,
        [
            "beta1", "beta2", "beta3", "beta4", "beta5", "beta6", "beta7", "beta8", "gamma0", "gamma1",
            "gamma2", "gamma3"
        ]
    );
    assert_eq!(rows[8][1], "(intercept)");
    for r in &rows {
        let v: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] >= 0.0);
        assert!(v[2] <= v[0] && v[0] <= v[3]);
    }
    let kept = csv_rows(&out.join("replicates.csv")).len();
    let footer = text.lines().last().unwrap();
    assert!(footer.starts_with(&format!("# {kept} of 12")), "{footer}");
    assert!(out.join("manifest.json").exists());
    assert!(out.join("replicates.ckpt").exists());

    // Curve on a custom grid, with the true link attached.
    let curve = dir.path().join("curve");
    let truth = dir.path().join("sim").join("truth.json");
    ok(plsi(&[
        "curve", "--bootstrap", s(&out), "--grid-min", "-1", "--grid-max", "1", "--grid-points", "5",
        "--truth", s(&truth), "--out", s(&curve),
    ]));
    let c = fs::read_to_string(curve.join("curve.csv")).unwrap();
    assert_eq!(c.lines().next().unwrap(), "s,g_hat,g_mean,lo,hi,g_true");
    let grid: Vec<f64> = csv_rows(&curve.join("curve.csv")).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(grid, [-1.0, -0.5, 0.0, 0.5, 1.0]);

    // A wider alpha gives narrower intervals around the same fit.
    let narrow = dir.path().join("narrow");
    ok(run(
        "bootstrap",
        &data,
        &["--replicates", "12", "--alpha", "0.5", "--checkpoint", s(&out.join("model.ckpt")), "--out", s(&narrow)],
    ));
    let wide_rows = rows;
    let narrow_rows = csv_rows(&narrow.join("inference.csv"));
    for (w, n) in wide_rows.iter().zip(&narrow_rows) {
        let width = |r: &Vec<String>| r[5].parse::<f64>().unwrap() - r[4].parse::<f64>().unwrap();
        assert_eq!(w[2], n[2]);
        assert!(width(n) < width(w), "{} {} {}", w[0], width(n), width(w));
    }
    assert!(fs::read_to_string(narrow.join("inference.txt")).unwrap().contains("50% CI"));
}

#[test]
fn zero_epoch_warm_start_returns_the_saved_model() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir);
    let first = dir.path().join("first");
    ok(run("fit", &data, &["--out", s(&first)]));
    let again = dir.path().join("again");
    ok(run(
        "fit",
        &data,
        &["--warm-start", s(&first.join("model.ckpt")), "--epochs", "0", "--out", s(&again)],
    ));
    assert_eq!(
        fs::read(first.join("coefficients.csv")).unwrap(),
        fs::read(again.join("coefficients.csv")).unwrap()
    );

    let pred = dir.path().join("pred");
    ok(plsi(&[
        "predict", "--checkpoint", s(&first.join("model.ckpt")), "--data", s(&data), "--out", s(&pred),
    ]));
    assert_eq!(csv_rows(&pred.join("predictions.csv")).len(), 800);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let sim = |name: &str, seed_env: Option<&str>, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_plsi"));
        cmd.args(["simulate", "--n", "50", "--out", s(&out)]).args(extra).env_remove("PLSI_SEED");
        if let Some(v) = seed_env {
            cmd.env("PLSI_SEED", v);
        }
        ok(cmd.output().unwrap());
        fs::read(out.join("data.csv")).unwrap()
    };
    let from_env = sim("env", Some("5"), &[]);
    let from_flag = sim("flag", None, &["--seed", "5"]);
    let other = sim("other", Some("6"), &[]);
    let flag_wins = sim("wins", Some("6"), &["--seed", "5"]);
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(from_env, other);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir);
    let out = dir.path().join("o");

    assert_eq!(plsi(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(plsi(&["simulate", "--n", "-3", "--out", s(&out)]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    assert_eq!(run("fit", &missing, &["--out", s(&out)]).status.code(), Some(2));

    let mut args = data_args(&data);
    args[5] = "nope".into();
    let mut full = vec!["fit".to_string()];
    full.extend(args);
    full.extend(["--out".to_string(), s(&out).to_string()]);
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    assert_eq!(plsi(&refs).status.code(), Some(2), "unknown covariate column");

    // A continuous outcome cannot be binomial.
    assert_eq!(run("fit", &data, &["--family", "binomial", "--out", s(&out)]).status.code(), Some(3));

    // A learning rate this large blows up the fit.
    assert_eq!(run("fit", &data, &["--learning-rate", "1e200", "--out", s(&out)]).status.code(), Some(4));

    // Every replicate fit diverges, so inference fails.
    let fitted = dir.path().join("fitted");
    ok(run("fit", &data, &["--out", s(&fitted)]));
    let code = run(
        "bootstrap",
        &data,
        &[
            "--checkpoint", s(&fitted.join("model.ckpt")), "--replicates", "4", "--learning-rate", "1e200",
            "--out", s(&out),
        ],
    )
    .status
    .code();
    assert_eq!(code, Some(5));
}

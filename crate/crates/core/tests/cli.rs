use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use are_estimation::data::{Dataset, Observation};
use are_estimation::io::{read_matrix_csv, write_matrix_csv};
use nalgebra::{dmatrix, dvector};
use serde_json::Value;
use tempfile::TempDir;

fn are_est(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_are-est"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const EXP1_DARE: &str = r#"{
  "A": [[-0.2, -0.4, -0.6], [0.4, -0.7, -0.3], [-1.0, -0.8, -0.2]],
  "B": [[0.1, -0.6], [-0.2, 0.8], [0.4, -0.9]],
  "Q": [[0.4, -0.2, 0.7], [-0.2, 1.7, -0.7], [0.7, -0.7, 1.9]],
  "R": [[1.7, 0.4], [0.4, 1.8]]
}"#;

#[test]
fn dare_exp1_residual_small() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "dare.json");
    fs::write(&cfg, EXP1_DARE).unwrap();
    let out = are_est(&["dare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["K"].as_array().unwrap().len(), 2);
}

#[test]
fn dare_zero_dynamics_gives_zero_gain() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "dare.json");
    fs::write(
        &cfg,
        r#"{"A": [[0.0]], "B": [[1.0]], "Q": [[2.0]], "R": [[1.0]]}"#,
    )
    .unwrap();
    let out = are_est(&["dare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["K"][0][0].as_f64().unwrap(), 0.0);
    assert_eq!(v["P"][0][0].as_f64().unwrap(), 2.0);
}

#[test]
fn dare_uncontrollable_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "dare.json");
    fs::write(
        &cfg,
        r#"{"A": [[1.0, 0.0], [0.0, 1.0]], "B": [[1.0], [1.0]], "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]}"#,
    )
    .unwrap();
    let out = are_est(&["dare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NotControllable"));
}

#[test]
fn config_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "dare.json");
    fs::write(&cfg, r#"{"A": [[1.0]]}"#).unwrap();
    assert_eq!(are_est(&["dare", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(
        are_est(&["dare", "--config", &path(&dir, "missing.json")])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(are_est(&["frobnicate"]).status.code(), Some(1));
    let out = path(&dir, "out");
    assert_eq!(
        are_est(&["experiment", "exp1", "--rank-rule", "bogus", "--out", &out])
            .status
            .code(),
        Some(1)
    );
    let bad = path(&dir, "bad.json");
    fs::write(&bad, r#"{"n": 3, "m": 1, "cost_kind": {"kind": "Nope"}}"#).unwrap();
    assert_eq!(
        are_est(&["experiment", "exp2", "--config", &bad, "--out", &out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(are_est(&["--help"]).status.code(), Some(0));
}

#[test]
fn estimate_exp1_and_distance_round_trip() {
    let dir = TempDir::new().unwrap();
    let bundle = path(&dir, "exp1");
    assert_eq!(
        are_est(&["experiment", "exp1", "--out", &bundle])
            .status
            .code(),
        Some(0)
    );
    let prior = path(&dir, "prior.json");
    fs::write(&prior, r#"{"mode": "Dense"}"#).unwrap();
    let est = path(&dir, "est");
    let dataset = format!("{bundle}/dataset.csv");
    let out = are_est(&["estimate", &dataset, &prior, "--out", &est]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report = read_json(format!("{est}/report.json"));
    assert_eq!(report["dim"], 3);
    assert_eq!(report["N_rows"], 12);
    assert_eq!(report["N_v"], 15);
    assert_eq!(report["recovery"]["status"], "indeterminate");
    for f in [
        "theta_hat.csv",
        "theta_hat.json",
        "singular_values.csv",
        "solution_basis.csv",
    ] {
        assert!(Path::new(&est).join(f).exists(), "{f}");
    }
    let sidecar = read_json(format!("{est}/theta_hat.json"));
    assert_eq!(sidecar["pair_index"].as_array().unwrap().len(), 12);

    let basis = format!("{est}/{}", report["solution_basis"].as_str().unwrap());
    assert_eq!(read_matrix_csv(&basis).unwrap().shape(), (15, 3));
    let same = are_est(&["distance", &basis, &basis]);
    assert!(stdout(&same).parse::<f64>().unwrap() < 1e-15);
    let truth = format!("{bundle}/basis_S.csv");
    let d: f64 = stdout(&are_est(&["distance", &truth, &basis]))
        .parse()
        .unwrap();
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn estimate_fixed_rank_rule() {
    let dir = TempDir::new().unwrap();
    let bundle = path(&dir, "exp1");
    are_est(&["experiment", "exp1", "--out", &bundle]);
    let prior = path(&dir, "prior.json");
    fs::write(&prior, r#"{"mode": "Dense"}"#).unwrap();
    let est = path(&dir, "est");
    let dataset = format!("{bundle}/dataset.csv");
    let out = are_est(&[
        "estimate",
        &dataset,
        &prior,
        "--rank-rule",
        "fixed:1",
        "--out",
        &est,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(format!("{est}/report.json"));
    assert_eq!(report["dim"], 1);
    assert_eq!(report["rank_rule"], "fixed:1");
    assert_eq!(report["recovery"]["status"], "recovered");
}

#[test]
fn estimate_without_feedback_exits_2() {
    let dir = TempDir::new().unwrap();
    let obs = vec![
        Observation::new(dvector![1.0], dvector![0.5], dvector![0.2]),
        Observation::new(dvector![-0.3], dvector![0.1], dvector![0.7]),
    ];
    let dataset = path(&dir, "data.csv");
    Dataset::new(obs, 0).unwrap().write_csv(&dataset).unwrap();
    let prior = path(&dir, "prior.json");
    fs::write(&prior, r#"{"mode": "Dense"}"#).unwrap();
    let out = are_est(&["estimate", &dataset, &prior, "--out", &path(&dir, "est")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("EmptyFeedbackSet"));
}

#[test]
fn distance_examples() {
    let dir = TempDir::new().unwrap();
    let e1 = path(&dir, "e1.csv");
    let e2 = path(&dir, "e2.csv");
    let tilted = path(&dir, "t.csv");
    write_matrix_csv(&e1, &dmatrix![1.0; 0.0]).unwrap();
    write_matrix_csv(&e2, &dmatrix![0.0; 1.0]).unwrap();
    let t = 30f64.to_radians();
    write_matrix_csv(&tilted, &dmatrix![t.cos(); t.sin()]).unwrap();
    let d = |a: &str, b: &str| {
        stdout(&are_est(&["distance", a, b]))
            .parse::<f64>()
            .unwrap()
    };
    assert!(d(&e1, &e1) < 1e-15);
    assert!((d(&e1, &e2) - 1.0).abs() < 1e-15);
    assert!((d(&e1, &tilted) - 0.5).abs() < 1e-12);

    let plane = path(&dir, "plane.csv");
    write_matrix_csv(&plane, &dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
    let mismatch = are_est(&["distance", &e1, &plane]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("DimensionMismatch"));
}

#[test]
fn experiments_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "exp3.json");
    fs::write(
        &cfg,
        r#"{"n": 3, "m": 1, "N_d": 30, "runs": 2, "sigma2": [1e-14],
            "cost_kind": {"kind": "SparseConditioned", "zeros_q": 2, "zeros_r": 0, "cond": 10.0},
            "noise": {"sigma2": 0.0, "exploration_norm": 0.2, "state_norm_gate": 0.5}}"#,
    )
    .unwrap();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    for out in [&a, &b] {
        let res = are_est(&[
            "experiment",
            "exp3",
            "--config",
            &cfg,
            "--seed",
            "5",
            "--sigma2",
            "1e-14,1e-12",
            "--out",
            out,
        ]);
        assert_eq!(
            res.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    for f in ["distances.csv", "summary.json", "config.json", "prior.json"] {
        assert_eq!(
            fs::read(Path::new(&a).join(f)).unwrap(),
            fs::read(Path::new(&b).join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(Path::new(&a).join("distances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.starts_with("sigma2,run,noise_seed,N_d_prime,d_est,d_si\n"));
    let echo = read_json(Path::new(&a).join("config.json"));
    assert_eq!(echo["seeds"]["system"], 5);
    assert_eq!(echo["sigma2"].as_array().unwrap().len(), 2);
}

#[test]
fn exp2_bundle() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "exp2.json");
    fs::write(
        &cfg,
        r#"{"n": 6, "m": 3, "cost_kind": {"kind": "DiagonalUniform", "lo": 0.01, "hi": 1.0}, "seeds": {"system": 3, "cost": 3, "data": 3, "noise": 0}}"#,
    )
    .unwrap();
    let out = path(&dir, "e2");
    let res = are_est(&["experiment", "exp2", "--config", &cfg, "--out", &out]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let summary = read_json(Path::new(&out).join("summary.json"));
    assert_eq!(summary["N_d"], 8);
    assert!(summary["distance"].as_f64().unwrap() <= 1e-6);
    assert!(summary["sysid_same_data_error"]
        .as_str()
        .unwrap()
        .contains("RankDeficient"));
    assert!(Path::new(&out)
        .join("singular_values_theta_hat.csv")
        .exists());
}

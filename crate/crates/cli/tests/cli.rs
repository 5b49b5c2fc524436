use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use valley::model::{ModelParams, ValleyBuilder};

fn valley(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valley"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_model(dir: &Path, name: &str, params: &ModelParams) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, params.to_json_pretty()).unwrap();
    path
}

/// Six-step valley with a fit target and unfit intermediates, as in the introductory example.
fn six_step_valley() -> ModelParams {
    ValleyBuilder::new(
        &[-0.5, -1.0, -1.5, -1.25, -0.75, 1.0],
        &[-5.0, -1.0, -0.25, -1.5, -2.0, -0.05],
    )
    .rates(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0], &[0.0; 7])
    .build()
    .unwrap()
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with("{\"error\""))
        .expect("error record on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = valley(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn validate_accepts_the_six_step_valley() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", &six_step_valley());
    let out = valley(&["validate", model.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["valid"], Value::Bool(true));
    for c in v["report"]["checks"].as_array().unwrap() {
        assert_eq!(c["passed"], Value::Bool(true));
    }
}

#[test]
fn validate_rejects_a_fit_intermediate_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let params = ValleyBuilder::new(&[0.3, 1.0], &[-1.0, -1.0])
        .rates(&[1.0, 1.0, 2.0], &[0.0; 3])
        .build()
        .unwrap();
    let model = write_model(dir.path(), "m.json", &params);
    let out = valley(&["validate", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "invalid_model");
}

#[test]
fn malformed_model_exits_2_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"v": 1, "L": 1, "b": [1, 1], "d": [0], "c": [1, 1, 1, 1], "kernel": "one_sided", "K": 10, "mu": 0.1}"#).unwrap();
    let out = valley(&["predict", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["code"], 2);
}

#[test]
fn missing_file_is_a_runtime_failure() {
    let out = valley(&["predict", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"]["kind"], "runtime");
}

fn predict_at(k: u64, mu: f64) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let params = ValleyBuilder::new(&[-0.5, 1.0], &[-1.0, -0.5])
        .rates(&[1.0, 1.0, 2.0], &[0.0; 3])
        .capacity(k)
        .mu(mu)
        .build()
        .unwrap();
    let model = write_model(dir.path(), "m.json", &params);
    let out = valley(&["predict", model.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn predict_reports_regime_and_alpha() {
    // ln K / ln(1/mu) = 4 / 1.5 exceeds L = 2.
    let v = predict_at(10_000, 10f64.powf(-1.5));
    assert_eq!(v["regime"], "large_mutation");
    assert!((v["alpha"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-12);
    // ln K / ln(1/mu) = 4 / (8/3).
    let v = predict_at(10_000, 10f64.powf(-8.0 / 3.0));
    assert_eq!(v["regime"], "small_mutation_power");
    assert!((v["alpha"].as_f64().unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn resolved_config_goes_to_stderr_first() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", &six_step_valley());
    let out = valley(&["--seed", "17", "predict", model.to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let first = stderr.lines().next().unwrap();
    assert!(first.starts_with("config: "));
    let cfg: Value = serde_json::from_str(first.trim_start_matches("config: ")).unwrap();
    assert_eq!(cfg["seed"], 17);
}

#[test]
fn simulate_is_determined_by_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let params = ValleyBuilder::new(&[-0.5, 1.0], &[-1.0, -0.5])
        .rates(&[1.0, 1.0, 2.0], &[0.0; 3])
        .capacity(200)
        .mu(0.01)
        .build()
        .unwrap();
    let model = write_model(dir.path(), "m.json", &params);
    let m = model.to_str().unwrap();
    let args = [
        "--seed",
        "5",
        "simulate",
        m,
        "--horizon",
        "20",
        "--watch",
        "2:0.5",
        "--stop",
        "any",
    ];
    let a = valley(&args);
    let b = valley(&args);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(a.stdout, b.stdout);
    let c = valley(&[
        "--seed",
        "6",
        "simulate",
        m,
        "--horizon",
        "20",
        "--watch",
        "2:0.5",
        "--stop",
        "any",
    ]);
    assert_ne!(a.stdout, c.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["stopping_times"].is_object());
}

#[test]
fn ode_csv_has_header_and_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let params = ValleyBuilder::new(&[-0.5, 1.0], &[-1.0, -0.5])
        .rates(&[1.0, 1.0, 2.0], &[0.0; 3])
        .mu(0.01)
        .build()
        .unwrap();
    let model = write_model(dir.path(), "m.json", &params);
    let out = valley(&[
        "--format",
        "csv",
        "ode",
        model.to_str().unwrap(),
        "--t-end",
        "5",
        "--points",
        "11",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn tropical_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", &six_step_valley());
    let out_dir = dir.path().join("out");
    let out = valley(&[
        "--out",
        out_dir.to_str().unwrap(),
        "tropical",
        model.to_str().unwrap(),
        "--mu-list",
        "1e-3,1e-4",
        "--t-end",
        "4",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn bad_flag_value_exits_1() {
    let out = valley(&["--threads", "0", "predict", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "usage");
}

#[test]
fn oracle_ruin_is_reproducible() {
    let args = [
        "--seed", "3", "oracle", "ruin", "--b", "1", "--d", "2", "--i", "0", "--j", "1", "--k",
        "3", "--n", "20000",
    ];
    let a = valley(&args);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(a.stdout, valley(&args).stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    // Ruin from 1 to 3 before 0 with up-probability 1/3: (1 - 2) / (1 - 8) = 1/7.
    let f = v["frequency"].as_f64().unwrap();
    assert!((f - 1.0 / 7.0).abs() < 5.0 * v["std_error"].as_f64().unwrap());
}

#[test]
fn experiment_run_writes_report_and_is_seed_determined() {
    use valley::harness::{ExperimentKind, ExperimentPlan, HorizonPolicy, Sweep};
    let dir = tempfile::tempdir().unwrap();
    let model = ValleyBuilder::new(&[-1.0, 0.5], &[-1.0, -1.5])
        .rates(&[1.0, 1.0, 1.0], &[0.5, 1.5, 0.0])
        .build()
        .unwrap();
    let plan = ExperimentPlan {
        kind: ExperimentKind::Extinction,
        model,
        sweep: Sweep {
            k: vec![20],
            mu: vec![1e-12],
            alpha: Vec::new(),
        },
        replicas: 50,
        horizon: HorizonPolicy::Scaled {
            multiple: 20.0,
            fallback: Some(1e6),
        },
        epsilons: vec![0.1],
        watches: Vec::new(),
        master_seed: 1,
        threads: 1,
        output_dir: None,
        tropical: None,
    };
    let plan_path = dir.path().join("plan.json");
    std::fs::write(&plan_path, serde_json::to_string(&plan).unwrap()).unwrap();
    let run = |seed: &str, out: &Path| {
        let out = valley(&[
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
            "experiment",
            "run",
            plan_path.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("9", &a);
    run("9", &b);
    for name in ["summary.csv", "report.json"] {
        assert!(a.join(name).exists(), "{name}");
    }
    assert_eq!(
        std::fs::read(a.join("summary.csv")).unwrap(),
        std::fs::read(b.join("summary.csv")).unwrap()
    );
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("# model_hash="));
    assert!(summary.lines().next().unwrap().contains("seed=9"));
}

#[test]
fn man_page_renders() {
    let out = valley(&["man"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(".TH valley 1"));
}

//! End-to-end runs of the `bayeslogit` binary against the bundled cohort.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bayeslogit")
}

fn data(file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(file)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn data_args(out: &Path) -> Vec<String> {
    vec![
        "--patients".into(),
        data("patients.csv"),
        "--falls".into(),
        data("falls.csv"),
        "--schema".into(),
        data("schema.json"),
        "--out".into(),
        out.to_string_lossy().into_owned(),
    ]
}

#[test]
fn fit_intercept_only_writes_one_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["fit".to_string(), "--stage".into(), "1".into()];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    assert_eq!(fit["coefficients"].as_array().unwrap().len(), 1);
    assert_eq!(fit["stage"], 1);
    assert!(fit["sigma2_grid"].as_array().unwrap().is_empty());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn stage2_fit_reports_the_sigma2_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "fit".to_string(),
        "--stage".into(),
        "2".into(),
        "--vars".into(),
        "fall_time_category,location".into(),
    ];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    let grid = fit["sigma2_grid"].as_array().unwrap();
    assert!(grid.len() >= 25);
    let total: f64 = grid.iter().map(|g| g["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn bad_csv_exits_2_with_row_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("patients.csv");
    std::fs::write(&bad, "patient_id,age,fell\nA,,0\n").unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(&schema, r#"[{"name":"age","kind":"continuous","stage":"baseline"}]"#).unwrap();
    let falls = dir.path().join("falls.csv");
    std::fs::write(&falls, "").unwrap();

    let out_dir = dir.path().join("out");
    let out = run(&[
        "fit",
        "--stage",
        "1",
        "--patients",
        bad.to_str().unwrap(),
        "--falls",
        falls.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 2") && stderr.contains("age"), "stderr: {stderr}");
}

#[test]
fn select_writes_trace_and_top5_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "select".to_string(),
        "--stage".into(),
        "1".into(),
        "--pool".into(),
        "tinetti_gait,previous_falls,fearful,bai,age".into(),
    ];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap())
            .unwrap();
    let final_model: Vec<String> = trace["final_model"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(final_model.contains(&"previous_falls".to_string()), "final {final_model:?}");

    let table = std::fs::read_to_string(dir.path().join("top5.txt")).unwrap();
    assert!(table.contains("Weight") && table.contains("Model 1"));

    let ensemble: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ensemble.json")).unwrap())
            .unwrap();
    assert!(ensemble["top_models"].as_array().unwrap().len() <= 5);
}

#[test]
fn single_variable_pool_yields_two_step_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "select".to_string(),
        "--stage".into(),
        "1".into(),
        "--pool".into(),
        "previous_falls".into(),
    ];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success());
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap())
            .unwrap();
    assert_eq!(trace["steps"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_then_fit_recovers_coefficients_within_three_sds() {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        r#"[{"name":"x1","kind":"continuous","stage":"baseline"},
            {"name":"x2","kind":"continuous","stage":"baseline"}]"#,
    )
    .unwrap();
    let config = dir.path().join("sim.json");
    std::fs::write(
        &config,
        r#"{"seed": 99, "n_patients": 2000,
            "stage1": {"intercept": -0.5, "coefficients": {"x1": 1.0, "x2": -0.6}},
            "stage2": {"intercept": 0.0},
            "sigma2": 0.0,
            "falls_per_faller": {"distribution": "fixed", "k": 1}}"#,
    )
    .unwrap();
    let sim_out = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--schema",
        schema.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        sim_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fit_out = dir.path().join("fit");
    let out = run(&[
        "fit",
        "--stage",
        "1",
        "--vars",
        "x1,x2",
        "--patients",
        sim_out.join("patients.csv").to_str().unwrap(),
        "--falls",
        sim_out.join("falls.csv").to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit_out.join("fit.json")).unwrap()).unwrap();
    let truth = [("(intercept)", -0.5), ("x1", 1.0), ("x2", -0.6)];
    for (name, value) in truth {
        let c = fit["coefficients"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .unwrap();
        let mean = c["mean"].as_f64().unwrap();
        let sd = c["sd"].as_f64().unwrap();
        assert!(
            (mean - value).abs() <= 3.0 * sd,
            "{name}: {mean} vs truth {value} (sd {sd})"
        );
    }
}

#[test]
fn verify_passes_at_default_tolerance_and_fails_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "verify".to_string(),
        "--stage".into(),
        "1".into(),
        "--vars".into(),
        "tinetti_gait".into(),
        "--seed".into(),
        "7".into(),
    ];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert_eq!(verdict["pass"], true);

    let dir2 = tempfile::tempdir().unwrap();
    let mut args = vec![
        "verify".to_string(),
        "--stage".into(),
        "1".into(),
        "--vars".into(),
        "tinetti_gait".into(),
        "--seed".into(),
        "7".into(),
        "--tolerance".into(),
        "0".into(),
    ];
    args.extend(data_args(dir2.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn summarize_reports_the_bundle_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["summarize".to_string()];
    args.extend(data_args(dir.path()));
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("99 patients, 55 fallers, 335 falls"), "stdout: {stdout}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use heavyrush::sampler::ChainConfig;
use heavyrush_cli::commands::{cmd_diagnose, cmd_fit, cmd_simulate, cmd_study, simulated_paths, Outcome};
use heavyrush_cli::config::{FitConfig, StudyConfig};
use heavyrush_cli::ingest::{parse_dataset, IngestOptions};
use heavyrush_cli::report::FIT_REPORT_SCHEMA;
use heavyrush_cli::CliError;
use serde_json::Value;
use tempfile::TempDir;

const SCENARIO: &str = r#"{
  "graph": {"kind": "ring", "n": 6},
  "n_times": 5,
  "truth": {"beta0": 0.5, "lambda": 0.7, "sigma": 0.2, "alpha": 1.0, "kappa": {"kind": "gamma", "nu": 4.0}},
  "offsets": {"kind": "poisson", "mean": 30},
  "contamination": {"targets": [1]},
  "replicates": 2,
  "seed": 3
}"#;

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn quick() -> ChainConfig {
    ChainConfig {
        iterations: 400,
        burn_in: 200,
        thin: 2,
        leapfrog_steps: 16,
        seed: 9,
        ..Default::default()
    }
}

fn simulated(dir: &Path) -> PathBuf {
    let sim = dir.join("sim");
    cmd_simulate(&write(dir, "s.json", SCENARIO), &sim).unwrap();
    sim
}

fn fit_config(sim: &Path, model: &str, out: PathBuf) -> FitConfig {
    let paths = simulated_paths(sim, 0);
    FitConfig {
        counts: Some(paths.counts),
        adjacency: Some(paths.adjacency),
        model: Some(model.into()),
        out: Some(out),
        sampler: quick(),
        ..Default::default()
    }
}

fn schema_errors(instance: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(FIT_REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(instance).map(|e| format!("{e} at {}", e.instance_path)).collect()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_writes_one_dataset_and_truth_per_replicate() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let mut names: Vec<String> = fs::read_dir(&sim)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "adjacency.csv",
            "replicate_000_counts.csv",
            "replicate_000_truth.json",
            "replicate_001_counts.csv",
            "replicate_001_truth.json"
        ]
    );
    let truth: Value = serde_json::from_str(&read(&sim.join("replicate_001_truth.json"))).unwrap();
    assert_eq!(truth["contaminated_areas"], serde_json::json!([1]));
    assert_eq!(truth["kappa"].as_array().unwrap().len(), 6);
    // Everything written can be read back.
    for r in 0..2 {
        let got = parse_dataset(&simulated_paths(&sim, r), IngestOptions::default()).unwrap();
        assert_eq!((got.dataset.n_areas(), got.dataset.n_times()), (6, 5));
    }
}

#[test]
fn simulate_matches_golden_files() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["adjacency.csv", "replicate_000_counts.csv", "replicate_001_counts.csv"] {
        assert_eq!(read(&sim.join(name)), read(&golden.join(name)), "{name}");
    }
}

#[test]
fn unit_kappa_scenario_equals_rushworth_generation() {
    let dir = TempDir::new().unwrap();
    let plain = SCENARIO.replace(r#""kappa": {"kind": "gamma", "nu": 4.0}"#, r#""kappa": {"kind": "none"}"#);
    let ones = SCENARIO.replace(
        r#""kappa": {"kind": "gamma", "nu": 4.0}"#,
        r#""kappa": {"kind": "given", "values": [1, 1, 1, 1, 1, 1]}"#,
    );
    cmd_simulate(&write(dir.path(), "a.json", &plain), &dir.path().join("a")).unwrap();
    cmd_simulate(&write(dir.path(), "b.json", &ones), &dir.path().join("b")).unwrap();
    for r in ["replicate_000_counts.csv", "replicate_001_counts.csv"] {
        assert_eq!(read(&dir.path().join("a").join(r)), read(&dir.path().join("b").join(r)));
    }
}

#[test]
fn scenario_errors_name_the_json_pointer() {
    let dir = TempDir::new().unwrap();
    let bad = SCENARIO.replace(r#""sigma": 0.2"#, r#""sigma": "big""#);
    let err = cmd_simulate(&write(dir.path(), "bad.json", &bad), &dir.path().join("x")).unwrap_err();
    match err {
        CliError::Json { pointer, .. } => assert_eq!(pointer, "/truth/sigma"),
        other => panic!("{other}"),
    }
    let unknown = SCENARIO.replace(r#""seed": 3"#, r#""seed": 3, "colour": "red""#);
    let err = cmd_simulate(&write(dir.path(), "u.json", &unknown), &dir.path().join("y")).unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
}

#[test]
fn fit_reports_validate_against_the_schema() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    for model in ["R1", "HRalpha", "HRLPCalpha"] {
        let out = dir.path().join(model);
        let (report, _) = cmd_fit(&fit_config(&sim, model, out.clone())).unwrap();
        let doc: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
        assert_eq!(schema_errors(&doc), Vec::<String>::new(), "{model}");
        assert_eq!(doc["model"], model);
        assert_eq!(report.outliers.is_none(), model == "R1");
    }
    // One chain leaves R̂ undefined, which the schema allows as null.
    let mut cfg = fit_config(&sim, "HR1", dir.path().join("one"));
    cfg.sampler.chains = 1;
    cmd_fit(&cfg).unwrap();
    let doc: Value = serde_json::from_str(&read(&dir.path().join("one/report.json"))).unwrap();
    assert!(doc["parameters"][0]["rhat"].is_null());
    assert_eq!(schema_errors(&doc), Vec::<String>::new());
}

#[test]
fn schema_rejects_malformed_reports() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let out = dir.path().join("fit");
    cmd_fit(&fit_config(&sim, "HR1", out.clone())).unwrap();
    let doc: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    let mut wrong_model = doc.clone();
    wrong_model["model"] = "HR2".into();
    assert!(!schema_errors(&wrong_model).is_empty());
    let mut extra = doc.clone();
    extra["timestamp"] = "now".into();
    assert!(!schema_errors(&extra).is_empty());
    let mut missing = doc;
    missing.as_object_mut().unwrap().remove("waic");
    assert!(!schema_errors(&missing).is_empty());
}

#[test]
fn rushworth_report_has_no_kappa_section() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let (report, _) = cmd_fit(&fit_config(&sim, "R1", dir.path().join("fit"))).unwrap();
    assert!(report.outliers.is_none());
    assert!(report.parameters.iter().all(|p| !p.name.starts_with("kappa")));
    assert_eq!(report.notation, "R(1)");
}

#[test]
fn fit_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_fit(&fit_config(&sim, "HRalpha", a.clone())).unwrap();
    cmd_fit(&fit_config(&sim, "HRalpha", b.clone())).unwrap();
    for name in ["draws.csv", "loglik.csv", "summary.csv", "fitted.csv"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    // The report echoes its own output path; everything else must match.
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&read(p)).unwrap();
        v["config"]["out"] = Value::Null;
        v
    };
    assert_eq!(strip(&a.join("report.json")), strip(&b.join("report.json")));
}

#[test]
fn diagnose_reproduces_the_fit_summary() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let out = dir.path().join("fit");
    let (report, outcome) = cmd_fit(&fit_config(&sim, "HRLPC1", out.clone())).unwrap();
    let (diag, diag_outcome) = cmd_diagnose(&out, None).unwrap();
    assert_eq!(diag.parameters, report.parameters);
    assert_eq!(diag.waic, Some(report.waic));
    assert_eq!(diag.outliers, report.outliers);
    assert_eq!(diag.convergence, report.convergence);
    assert_eq!(outcome, diag_outcome);
    assert!(out.join("diagnostics.json").exists());
}

#[test]
fn missing_required_settings_are_input_errors() {
    let cfg = FitConfig::default();
    assert!(matches!(cmd_fit(&cfg), Err(CliError::Config(_))));
    let err = cmd_study(&StudyConfig::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

fn study_config(dir: &Path, out: &str, models: &[&str], replicates: usize) -> StudyConfig {
    let scenario = SCENARIO.replace(r#""replicates": 2"#, &format!(r#""replicates": {replicates}"#));
    StudyConfig {
        scenario: Some(write(dir, "study.json", &scenario)),
        models: Some(models.iter().map(|m| m.to_string()).collect()),
        out: Some(dir.join(out)),
        sampler: quick(),
    }
}

#[test]
fn one_replicate_two_models_gives_two_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = study_config(dir.path(), "study", &["R1", "HR1"], 1);
    let (report, _) = cmd_study(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    let rows = read(&dir.path().join("study/study_rows.csv"));
    assert_eq!(rows.lines().count(), 3);
    let detection = read(&dir.path().join("study/study_detection.csv"));
    assert!(detection.starts_with("model,sensitivity Small,sensitivity Medium low,"));
    // Only a converged κ model contributes a detection row.
    let hr1_ok = report.rows[1].converged();
    assert_eq!(detection.lines().count(), 1 + hr1_ok as usize);
    let areas = read(&dir.path().join("study/study_areas.csv"));
    assert_eq!(areas.lines().next().unwrap(), "area,offset,category,contaminated,HR1");
    assert_eq!(areas.lines().count(), 7);
}

#[test]
fn study_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = study_config(dir.path(), "a", &["Ralpha", "HRalpha"], 2);
    let b = StudyConfig {
        out: Some(dir.path().join("b")),
        ..a.clone()
    };
    cmd_study(&a).unwrap();
    cmd_study(&b).unwrap();
    for name in [
        "study.json",
        "study_rows.csv",
        "study_summary.csv",
        "study_detection.csv",
        "study_areas.csv",
    ] {
        assert_eq!(read(&dir.path().join("a").join(name)), read(&dir.path().join("b").join(name)), "{name}");
    }
}

#[test]
fn outcomes_map_to_exit_codes() {
    assert_eq!(Outcome::Success.exit_code(), 0);
    assert_eq!(Outcome::ConvergenceWarning.exit_code(), 2);
}

fn heavyrush(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_heavyrush")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let counts = sim.join("replicate_000_counts.csv");
    let adjacency = sim.join("adjacency.csv");
    let out = dir.path().join("fit");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let (code, _) = heavyrush(&[
        "--threads", "1", "fit", "--counts", &s(&counts), "--adjacency", &s(&adjacency), "--model", "HR1",
        "--iters", "400", "--burnin", "200", "--thin", "2", "--leapfrog", "16", "--out", &s(&out),
    ]);
    let doc: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    let converged = doc["convergence"]["converged"].as_bool().unwrap();
    assert_eq!(code, if converged { 0 } else { 2 });

    let (code, err) = heavyrush(&["fit", "--counts", "nope.csv", "--adjacency", &s(&adjacency), "--model", "R1", "--out", &s(&out)]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.csv"), "{err}");
    assert_eq!(heavyrush(&["fit", "--model", "HR9"]).0, 1);
    assert_eq!(heavyrush(&["frobnicate"]).0, 1);
    assert_eq!(heavyrush(&["--help"]).0, 0);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let sim = simulated(dir.path());
    let paths = simulated_paths(&sim, 0);
    let out = dir.path().join("fit");
    let config = serde_json::json!({
        "counts": paths.counts,
        "adjacency": paths.adjacency,
        "model": "R1",
        "out": out,
        "sampler": {"iterations": 400, "burn_in": 200, "thin": 2, "leapfrog_steps": 16, "seed": 4}
    });
    let cfg_path = write(dir.path(), "fit.json", &config.to_string());
    let (code, err) = heavyrush(&["fit", "--config", cfg_path.to_str().unwrap(), "--model", "HRLPC1", "--seed", "5"]);
    assert!(code == 0 || code == 2, "{err}");
    let doc: Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    assert_eq!(doc["model"], "HRLPC1");
    assert_eq!(doc["seed"], 5);
    assert_eq!(doc["sampler"]["iterations"], 400);

    let bad = write(dir.path(), "bad.json", r#"{"sampler": {"iterations": -3}}"#);
    let (code, err) = heavyrush(&["fit", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("/sampler/iterations"), "{err}");
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let scenario = write(dir.path(), "s.json", SCENARIO);
    let run = |threads: &str, out: &str| {
        let out = dir.path().join(out);
        let (code, err) = heavyrush(&[
            "--threads", threads, "study", "--scenario", scenario.to_str().unwrap(), "--models", "HR1",
            "--iters", "300", "--burnin", "150", "--thin", "1", "--leapfrog", "16", "--out", out.to_str().unwrap(),
        ]);
        assert!(code == 0 || code == 2, "{err}");
        read(&out.join("study.json"))
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}

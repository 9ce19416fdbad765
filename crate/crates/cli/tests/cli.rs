//! End-to-end tests driving the compiled binary against the demo run
//! directory. Sweeps run in a temporary working directory so output
//! paths (resolved against the CWD) never touch the repository.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxcal_core::calibration::{CalibrationMode, ProbVector};
use ctxcal_core::harness::{Outcome, RecordWriter, RunRecord};

fn ctxcal() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxcal"))
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../demo/run.toml")
        .canonicalize()
        .expect("demo config exists")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("utf-8 stderr")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited normally")
}

/// Runs the full demo sweep in `dir` and returns the records path.
fn run_demo_sweep(dir: &Path) -> PathBuf {
    let output = ctxcal()
        .current_dir(dir)
        .args(["sweep", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "sweep failed: {}", stderr(&output));
    dir.join("out/demo-records.jsonl")
}

#[test]
fn render_is_byte_exact() {
    let output = ctxcal()
        .args(["render", "--config"])
        .arg(demo_config())
        .args([
            "--format",
            "sst2",
            "--shots",
            "0",
            "--raw",
            "--test-input",
            "A film.",
        ])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    assert_eq!(output.stdout, b"Review: A film.\nSentiment:");
}

#[test]
fn render_resolves_items_and_defaults_to_the_first_test_item() {
    let by_item = ctxcal()
        .args(["render", "--config"])
        .arg(demo_config())
        .args(["--format", "sst2", "--shots", "0", "--raw", "--item", "n17"])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&by_item), 0, "{}", stderr(&by_item));
    assert_eq!(
        by_item.stdout,
        b"Review: A dismal drama that mistakes silence for depth.\nSentiment:".as_slice()
    );

    let default_item = ctxcal()
        .args(["render", "--config"])
        .arg(demo_config())
        .args(["--format", "sst2", "--shots", "0"])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&default_item), 0, "{}", stderr(&default_item));
    assert_eq!(
        stdout(&default_item),
        "Review: A delightful comedy with more on its mind than jokes.\nSentiment:\n"
    );

    let unknown = ctxcal()
        .args(["render", "--config"])
        .arg(demo_config())
        .args(["--format", "sst2", "--shots", "0", "--item", "zzz"])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&unknown), 4);
    assert!(
        stderr(&unknown).contains("unknown item id"),
        "{}",
        stderr(&unknown)
    );
}

#[test]
fn dry_run_plans_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let output = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--dry-run", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    assert!(
        stdout(&output).contains("planned 8 cells over 6 test items (48 records when complete)"),
        "{}",
        stdout(&output)
    );
    assert!(!dir.path().join("out").exists(), "dry run must not write");
}

#[test]
fn sweep_writes_records_guards_reruns_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let records = run_demo_sweep(dir.path());
    let lines = std::fs::read_to_string(&records).unwrap().lines().count();
    assert_eq!(lines, 48);

    let csv = std::fs::read_to_string(dir.path().join("out/demo-records.csv")).unwrap();
    assert!(
        csv.starts_with("calibration_mode,cells,mean,std,min,max,singleton,failed_items\n"),
        "{csv}"
    );
    assert!(csv.contains("diagonal,4,1,0,1,1,false,0"), "{csv}");
    assert!(csv.contains("\nnone,4,0.875,"), "{csv}");

    let rerun = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&rerun), 2);
    assert!(
        stderr(&rerun).contains("already exists"),
        "{}",
        stderr(&rerun)
    );

    let resume = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--resume", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&resume), 0, "{}", stderr(&resume));
    let text = stdout(&resume);
    assert!(text.contains("8 already complete"), "{text}");
    assert!(text.contains("0 written"), "{text}");
}

#[test]
fn diagnose_reports_bias_from_sweep_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = run_demo_sweep(dir.path());
    let report_path = dir.path().join("report.json");
    let output = ctxcal()
        .args(["diagnose", "--records"])
        .arg(&records)
        .args(["--config"])
        .arg(demo_config())
        .args(["--mode", "none", "--shots", "4", "--out"])
        .arg(&report_path)
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("majority label bias"), "{text}");
    assert!(text.contains("recency bias"), "{text}");
    assert!(text.contains("threshold scan"), "{text}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["majority_curve"].is_object(), "{report}");
    assert!(report["threshold_best"]["accuracy"].is_number(), "{report}");
}

#[test]
fn diagnose_correlates_prediction_rates_with_a_frequency_table() {
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("records.jsonl");
    let labels = ["Alpha", "Beta", "Gamma"];
    // Prediction counts 10/6/4 against frequencies 100/60/40: the rates
    // are exactly proportional, so the correlation is exactly 1.
    let mut writer = RecordWriter::create(&records_path, false).unwrap();
    for i in 0..20 {
        let predicted = if i < 10 {
            "Alpha"
        } else if i < 16 {
            "Beta"
        } else {
            "Gamma"
        };
        writer
            .append(&RunRecord {
                run_id: "synthetic".into(),
                seed: 0,
                backend_id: "none".into(),
                format_id: "toy".into(),
                shots: 0,
                training_set_id: 0,
                permutation_index: 0,
                cf_set_id: 0,
                calibration_mode: CalibrationMode::None,
                test_item_id: format!("item-{i:02}"),
                example_labels: Vec::new(),
                gold: labels[i % 3].to_string(),
                outcome: Outcome::Classified {
                    raw: ProbVector::dense(&[0.5, 0.3, 0.2]).unwrap(),
                    calibrated: None,
                    prediction: predicted.to_string(),
                    correct: predicted == labels[i % 3],
                },
            })
            .unwrap();
    }
    drop(writer);
    let freq_path = dir.path().join("freq.json");
    std::fs::write(
        &freq_path,
        r#"{"Alpha": 100.0, "Beta": 60.0, "Gamma": 40.0}"#,
    )
    .unwrap();

    let output = ctxcal()
        .args(["diagnose", "--records"])
        .arg(&records_path)
        .args(["--labels", "Alpha,Beta,Gamma", "--freq-table"])
        .arg(&freq_path)
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let text = stdout(&output);
    assert!(
        text.contains("common token bias: label frequency vs prediction rate, r = 1.00"),
        "{text}"
    );
}

#[test]
fn calibrate_fits_the_probed_distribution() {
    let output = ctxcal()
        .args(["calibrate", "--config"])
        .arg(demo_config())
        .args(["--format", "sst2", "--shots", "0"])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    // Zero shots and no signal: the content-free probe sees the uniform
    // base weights, so the diagonal fit is exactly 2 per class.
    assert_eq!(report["diagonal"]["w_diag"], serde_json::json!([2.0, 2.0]));
    assert_eq!(report["ensemble"]["Positive"], serde_json::json!(0.5));
    assert_eq!(report["failed_inputs"], serde_json::json!([]));
}

#[test]
fn config_and_flag_errors_exit_with_usage_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "run_id = \"x\"\nbanana = 1\n").unwrap();
    let parse = ctxcal()
        .args(["sweep", "--config"])
        .arg(&bad_config)
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&parse), 2);
    assert!(stderr(&parse).contains("parsing"), "{}", stderr(&parse));

    let unknown_backend = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--backend", "nope", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&unknown_backend), 2);
    assert!(
        stderr(&unknown_backend).contains("unknown backend `nope`"),
        "{}",
        stderr(&unknown_backend)
    );

    // A dry run resolves the backend name too, without instantiating it.
    let unknown_backend_dry = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--backend", "nope", "--dry-run", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&unknown_backend_dry), 2);
    assert!(
        stderr(&unknown_backend_dry).contains("unknown backend `nope`"),
        "{}",
        stderr(&unknown_backend_dry)
    );

    let bad_mode = ctxcal()
        .args(["diagnose", "--records", "whatever.jsonl", "--mode", "bogus"])
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&bad_mode), 2);
    assert!(
        stderr(&bad_mode).contains("unknown calibration mode"),
        "{}",
        stderr(&bad_mode)
    );

    let bad_group = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--group-by", "flavor", "--config"])
        .arg(demo_config())
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&bad_group), 2);
}

#[test]
fn over_budget_plan_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    // Same grid as the demo but with a two-cell budget; inputs point at
    // the demo directory by absolute path.
    let demo_dir = demo_config().parent().unwrap().to_path_buf();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
run_id = "over-budget"
seed = 7
backend = "demo"

[dataset]
manifest = "{manifest}"

[backends.demo]
kind = "mock"
majority_strength = 1.0
recency_decay = 0.5

[backends.demo.base_weights]
Positive = 1.0
Negative = 1.0

[sweep]
budget = 2

[sweep.axes]
format_ids = ["sst2"]
shots = [0, 4]
n_training_sets = 3
calibration_modes = ["none", "diagonal"]

[output]
records = "out/records.jsonl"
"#,
            manifest = demo_dir.join("dataset.json").display()
        ),
    )
    .unwrap();

    let output = ctxcal()
        .current_dir(dir.path())
        .args(["sweep", "--config"])
        .arg(&config_path)
        .output()
        .expect("spawn ctxcal");
    assert_eq!(exit_code(&output), 4);
    assert!(
        stderr(&output).contains("over the budget"),
        "{}",
        stderr(&output)
    );
    assert!(
        !dir.path().join("out").exists(),
        "rejected plan must not write"
    );
}

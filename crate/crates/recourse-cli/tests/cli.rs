//! End-to-end tests of the `recourse` binary: every subcommand runs against
//! real files in a temporary directory, and exit codes follow the documented
//! contract (0 success, 1 usage, 2 data, 3 training failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recourse_core::harness::ExperimentReport;
use recourse_core::recourse_svm::RecourseSvmModel;
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recourse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary spawns")
}

fn assert_code(out: &Output, expected: i32) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "unexpected exit\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Generates a small linear synthetic CSV and returns its path.
fn synth(dir: &Path, name: &str, n_per_cell: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    let out = run(
        dir,
        &[
            "synth",
            "--kind",
            "linear",
            "--n-per-cell",
            n_per_cell,
            "--out",
            path.to_str().unwrap(),
            "--seed",
            seed,
        ],
    );
    assert_code(&out, 0);
    path
}

#[test]
fn help_exits_zero_and_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--help"]);
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "synth",
        "train-svm",
        "train-blackbox",
        "equalize",
        "evaluate",
        "experiment",
        "flipset",
        "--seed",
    ] {
        assert!(text.contains(name), "--help does not mention {name}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag.
    let out = run(dir.path(), &["synth", "--grind", "linear"]);
    assert_code(&out, 1);
    // Bad enum value.
    let out = run(dir.path(), &["synth", "--kind", "banana", "--out", "d.csv"]);
    assert_code(&out, 1);
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "train-svm",
            "--data",
            "no-such-file.csv",
            "--model",
            "m.json",
        ],
    );
    assert_code(&out, 2);
}

#[test]
fn single_class_data_fails_with_the_training_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one-class.csv");
    fs::write(
        &csv,
        "x1,x2,label,group\n0.0,1.0,0,1\n1.0,0.0,0,-1\n0.5,0.5,0,1\n1.0,1.0,0,-1\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &[
            "equalize",
            "--data",
            csv.to_str().unwrap(),
            "--out",
            "r.json",
        ],
    );
    assert_code(&out, 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("initial fit"),
        "error should name the failing stage, got: {stderr}"
    );
}

#[test]
fn synth_output_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let first = synth(dir.path(), "a.csv", "20", "7");
    let second = synth(dir.path(), "b.csv", "20", "7");
    let other_seed = synth(dir.path(), "c.csv", "20", "8");

    let first_bytes = fs::read(&first).unwrap();
    assert_eq!(
        first_bytes,
        fs::read(&second).unwrap(),
        "same seed, same file"
    );
    assert_ne!(
        first_bytes,
        fs::read(&other_seed).unwrap(),
        "different seed should change the data"
    );
    let text = String::from_utf8(first_bytes).unwrap();
    assert_eq!(text.lines().next(), Some("x1,x2,label,group"));
    assert_eq!(text.lines().count(), 81, "header plus 4 * 20 rows");

    // The file round-trips through the default loading flags.
    let out = run(
        dir.path(),
        &[
            "train-blackbox",
            "--data",
            first.to_str().unwrap(),
            "--blackbox",
            "forest",
            "--model",
            "bb.json",
            "--seed",
            "1",
        ],
    );
    assert_code(&out, 0);
    assert!(dir.path().join("bb.json").exists());
}

#[test]
fn train_svm_saves_a_model_that_passes_feasibility_on_reload() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "25", "3");
    let model_path = dir.path().join("m.json");
    let summary_path = dir.path().join("train.json");
    let out = run(
        dir.path(),
        &[
            "train-svm",
            "--data",
            data.to_str().unwrap(),
            "--lambda",
            "50",
            "--kernel",
            "poly:2",
            "--model",
            model_path.to_str().unwrap(),
            "--out",
            summary_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);

    // Loading re-checks every dual-feasibility invariant.
    let model = RecourseSvmModel::load(&model_path).expect("saved model is feasible");
    assert_eq!(model.kernel().to_string(), "poly:2");

    let summary: Value = serde_json::from_str(&fs::read_to_string(&summary_path).unwrap()).unwrap();
    let gap_before = summary["gap_baseline"]["u_abs"].as_f64().unwrap();
    let gap_after = summary["gap_final"]["u_abs"].as_f64().unwrap();
    assert!(
        gap_after <= gap_before,
        "regularization should not widen the gap ({gap_before} -> {gap_after})"
    );

    // The saved model evaluates cleanly on the same file.
    let eval_path = dir.path().join("eval.json");
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--out",
            eval_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);
    let eval: Value = serde_json::from_str(&fs::read_to_string(&eval_path).unwrap()).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() >= 0.9);
    assert!(eval["recourse"]["u_abs"].as_f64().unwrap().is_finite());
}

#[test]
fn equalize_writes_unit_interval_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "25", "11");
    let result_path = dir.path().join("result.json");
    let out = run(
        dir.path(),
        &[
            "equalize",
            "--data",
            data.to_str().unwrap(),
            "--blackbox",
            "logistic",
            "--surrogate-samples",
            "800",
            "--kernel-width",
            "2.0",
            "--seed",
            "5",
            "--out",
            result_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);

    let result: Value = serde_json::from_str(&fs::read_to_string(&result_path).unwrap()).unwrap();
    let weights = result["weights"].as_array().unwrap();
    assert_eq!(weights.len(), 100);
    for w in weights {
        let w = w.as_f64().unwrap();
        assert!(w > 0.0 && w <= 1.0, "weight {w} outside (0, 1]");
    }
    assert!(
        weights.iter().any(|w| w.as_f64().unwrap() < 1.0),
        "someone should get down-weighted"
    );
    assert!(result["before"]["u_abs"].as_f64().unwrap() >= 0.0);
    assert!(result["after"]["u_abs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn experiment_report_contains_the_full_statistics_block() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "24", "2");
    let report_path = dir.path().join("report.json");
    let records_path = dir.path().join("records.csv");
    let out = run(
        dir.path(),
        &[
            "experiment",
            "--dataset",
            "smoke",
            "--data",
            data.to_str().unwrap(),
            "--method",
            "svm",
            "--kernel",
            "linear",
            "--lambda-grid",
            "0,100",
            "--runs",
            "2",
            "--folds",
            "2",
            "--sample-size",
            "96",
            "--seed",
            "4",
            "--out",
            report_path.to_str().unwrap(),
            "--records",
            records_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);

    // A typed parse proves the full schema, statistics block included.
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.dataset, "smoke");
    assert_eq!(report.completed_runs, 2);
    let s = &report.statistics;
    for block in [
        &s.train_accuracy_before,
        &s.train_accuracy_after,
        &s.test_accuracy_before,
        &s.test_accuracy_after,
        &s.train_u_abs_before,
        &s.train_u_abs_after,
        &s.test_u_abs_before,
        &s.test_u_abs_after,
        &s.train_u_reduction,
        &s.test_u_reduction,
    ] {
        assert!(block.mean.is_finite() && block.median.is_finite());
        assert!(block.q25 <= block.median && block.median <= block.q75);
    }

    let records = fs::read_to_string(&records_path).unwrap();
    assert_eq!(
        records.lines().next(),
        Some("run,seed,phase,split,accuracy,u_abs,hyperparameters,degenerate")
    );
    assert_eq!(records.lines().count(), 9, "header plus 2 runs x 4 cells");
}

#[test]
fn bundled_german_dataset_resolves_from_the_repository_root() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("german.json");
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = run(
        &root,
        &[
            "experiment",
            "--dataset",
            "german",
            "--method",
            "svm",
            "--kernel",
            "poly:2",
            "--lambda-grid",
            "100",
            "--runs",
            "2",
            "--folds",
            "2",
            "--sample-size",
            "200",
            "--seed",
            "3",
            "--out",
            report_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.dataset, "german");
    assert_eq!(report.completed_runs, 2);
}

#[test]
fn flipset_moves_a_negative_row_across_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", "25", "9");
    let model_path = dir.path().join("m.json");
    let out = run(
        dir.path(),
        &[
            "train-svm",
            "--data",
            data.to_str().unwrap(),
            "--lambda",
            "0",
            "--model",
            model_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);

    // Rows 50..99 hold the negatives of the synthetic layout.
    let flip_path = dir.path().join("flip.json");
    let out = run(
        dir.path(),
        &[
            "flipset",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--index",
            "60",
            "--out",
            flip_path.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);
    let flip: Value = serde_json::from_str(&fs::read_to_string(&flip_path).unwrap()).unwrap();
    assert_eq!(flip["target"].as_array().unwrap().len(), 2);
    assert!(flip["achieved_value"].as_f64().unwrap() >= 0.0);
    assert!(flip["cost_distance"].as_f64().unwrap() > 0.0);

    // Asking for a positively classified row is a usage error.
    let out = run(
        dir.path(),
        &[
            "flipset",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--index",
            "10",
        ],
    );
    assert_code(&out, 1);
}

//! End-to-end checks of the command-line surface: exit codes, artifact
//! layout, flag precedence and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn orbitgraph(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbitgraph"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn generate_writes_dataset_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = orbitgraph(
        &[
            "generate",
            "--out",
            "data.json",
            "--trajectories",
            "6",
            "--agents",
            "3",
            "3",
            "--steps",
            "16",
            "--seed",
            "11",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("wrote 6 trajectories"), "stdout: {text}");
    assert!(text.contains("3 agents x6"), "stdout: {text}");
    assert!(dir.path().join("data.json").exists());

    // Density floor from the calibration contract.
    let density: f64 = text
        .lines()
        .find(|l| l.starts_with("mean step-0 edge density"))
        .and_then(|l| l.rsplit(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(density >= 0.6, "density {density}");
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = orbitgraph(
            &[
                "generate", "--out", name, "--trajectories", "4", "--agents", "3", "4",
                "--steps", "14", "--seed", "9",
            ],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b, "same seed must produce byte-identical datasets");
}

#[test]
fn invalid_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = orbitgraph(
        &["generate", "--out", "x.json", "--trajectories", "0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("trajectory_count"));
}

#[test]
fn missing_dataset_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = orbitgraph(
        &["train", "--dataset", "missing.json", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = orbitgraph(&["generate", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

/// One small pipeline: generate -> train both arms -> evaluate -> predict
/// -> plot. Shared by several assertions to keep runtime down.
#[test]
fn full_pipeline_produces_coherent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let gen = orbitgraph(
        &[
            "generate", "--out", "data.json", "--trajectories", "6", "--agents", "3", "3",
            "--steps", "15", "--seed", "3",
        ],
        dir.path(),
    );
    assert!(gen.status.success(), "stderr: {}", stderr(&gen));

    for (arm, physics) in [("off_run", "off"), ("on_run", "on")] {
        let train = orbitgraph(
            &[
                "train", "--dataset", "data.json", "--physics", physics, "--out", arm,
                "--epochs", "2", "--seed", "5", "--model-seed", "6",
            ],
            dir.path(),
        );
        assert!(train.status.success(), "stderr: {}", stderr(&train));
        assert!(dir.path().join(arm).join("checkpoint_best.json").exists());
        let log = std::fs::read_to_string(dir.path().join(arm).join("training_log.csv")).unwrap();
        // Header plus exactly one row per epoch.
        assert_eq!(log.lines().count(), 3, "log: {log}");
        assert!(log.starts_with("epoch,train_loss,val_loss,lambda_phys,ar_ratio,seconds"));

        let eval = orbitgraph(
            &[
                "evaluate", "--checkpoint", &format!("{arm}/checkpoint_best.json"), "--dataset",
                "data.json", "--out", &format!("{arm}/eval"), "--label", arm,
            ],
            dir.path(),
        );
        assert!(eval.status.success(), "stderr: {}", stderr(&eval));
        assert!(dir.path().join(arm).join("eval/metrics.csv").exists());
        assert!(dir.path().join(arm).join("eval/curve.csv").exists());
    }

    // The ablation arm pins lambda_phys to zero in its log.
    let off_log = std::fs::read_to_string(dir.path().join("off_run/training_log.csv")).unwrap();
    for row in off_log.lines().skip(1) {
        let lambda: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(lambda, 0.0);
    }
    let on_log = std::fs::read_to_string(dir.path().join("on_run/training_log.csv")).unwrap();
    let first_lambda: f64 = on_log
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(first_lambda, 0.2);

    // Predict: 3 satellites -> 3 comparison SVGs + 1 curve SVG (plus CSVs).
    let predict = orbitgraph(
        &[
            "predict", "--checkpoint", "on_run/checkpoint_best.json", "--dataset", "data.json",
            "--trajectory-index", "0", "--out", "figs",
        ],
        dir.path(),
    );
    assert!(predict.status.success(), "stderr: {}", stderr(&predict));
    let svg_count = std::fs::read_dir(dir.path().join("figs"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|ext| ext == "svg")
        })
        .count();
    assert_eq!(svg_count, 4);
    let curve = std::fs::read_to_string(dir.path().join("figs/horizon_rmse.csv")).unwrap();
    assert_eq!(curve.lines().count(), 7, "header + one row per horizon step");
    let sat_csv = std::fs::read_to_string(dir.path().join("figs/sat1_comparison.csv")).unwrap();
    assert_eq!(sat_csv.lines().count(), 16, "header + one row per timestep");

    // Out-of-range index is a usage error.
    let bad = orbitgraph(
        &[
            "predict", "--checkpoint", "on_run/checkpoint_best.json", "--dataset", "data.json",
            "--trajectory-index", "99", "--out", "figs2",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("out of range"));

    // Plot merges the two runs; identical runs yield identical columns.
    let plot = orbitgraph(
        &["plot", "off_run/eval", "on_run/eval", "--out", "cmp"],
        dir.path(),
    );
    assert!(plot.status.success(), "stderr: {}", stderr(&plot));
    let table = std::fs::read_to_string(dir.path().join("cmp/comparison.txt")).unwrap();
    assert!(table.contains("Sat 1") && table.contains("off_run") && table.contains("on_run"));
    let csv = std::fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10, "header + 3 satellites x 3 axes");

    let self_plot = orbitgraph(
        &["plot", "on_run/eval", "on_run/eval", "--out", "cmp_same"],
        dir.path(),
    );
    assert!(self_plot.status.success());
    let same = std::fs::read_to_string(dir.path().join("cmp_same/comparison.csv")).unwrap();
    for row in same.lines().skip(1) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[2], cells[3], "row: {row}");
    }
}

#[test]
fn train_rerun_reproduces_the_log_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let gen = orbitgraph(
        &[
            "generate", "--out", "data.json", "--trajectories", "4", "--agents", "3", "3",
            "--steps", "14", "--seed", "2",
        ],
        dir.path(),
    );
    assert!(gen.status.success());

    let strip_seconds = |text: &str| -> String {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\n")
    };

    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    for run in ["r1", "r2"] {
        let train = orbitgraph(
            &[
                "train", "--dataset", "data.json", "--out", run, "--epochs", "2", "--seed",
                "4", "--model-seed", "5",
            ],
            dir.path(),
        );
        assert!(train.status.success(), "stderr: {}", stderr(&train));
        logs.push(strip_seconds(
            &std::fs::read_to_string(dir.path().join(run).join("training_log.csv")).unwrap(),
        ));
        checkpoints.push(std::fs::read(dir.path().join(run).join("checkpoint_best.json")).unwrap());
    }
    assert_eq!(logs[0], logs[1], "training logs differ beyond the timing column");
    assert_eq!(checkpoints[0], checkpoints[1], "checkpoints must be byte-identical");
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"scenario": {"trajectory_count": 3, "agent_count_range": [3, 3], "step_count": 14, "seed": 1}}"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();

    // File value applies when no flag is given.
    let from_file = orbitgraph(
        &["generate", "--config", "run.json", "--out", "a.json"],
        dir.path(),
    );
    assert!(from_file.status.success(), "stderr: {}", stderr(&from_file));
    assert!(stdout(&from_file).contains("wrote 3 trajectories"));

    // Flag wins over the file.
    let overridden = orbitgraph(
        &[
            "generate", "--config", "run.json", "--out", "b.json", "--trajectories", "5",
        ],
        dir.path(),
    );
    assert!(overridden.status.success());
    assert!(stdout(&overridden).contains("wrote 5 trajectories"));
}

//! CLI behavior tests: flag handling, error reporting, and file outputs.

use std::path::Path;
use std::process::{Command, Output};

fn smtm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smtm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn smtm")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = smtm(args, dir);
    assert!(
        out.status.success(),
        "smtm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(args: &[&str], dir: &Path) -> String {
    let out = smtm(args, dir);
    assert!(
        !out.status.success(),
        "smtm {args:?} unexpectedly succeeded"
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn setup_model_and_warm(dir: &Path) {
    ok(
        &[
            "gen-model",
            "--preset",
            "tiny",
            "--seed",
            "7",
            "--out",
            "model",
        ],
        dir,
    );
    ok(
        &[
            "gen-trace",
            "--classes",
            "6",
            "--frames",
            "36",
            "--dims",
            "16x16x16",
            "--round-robin",
            "--noise",
            "0.05",
            "--seed",
            "2",
            "--template-seed",
            "21",
            "--out",
            "warm",
        ],
        dir,
    );
    ok(
        &[
            "warmup",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--trace",
            "warm/trace.bin",
            "--out",
            "centers",
        ],
        dir,
    );
}

#[test]
fn inspect_model_prints_layers_and_totals() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-model",
            "--preset",
            "six-exit",
            "--seed",
            "1",
            "--out",
            "model",
        ],
        dir.path(),
    );
    let text = ok(
        &[
            "inspect-model",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
        ],
        dir.path(),
    );
    assert!(text.contains("conv2d"));
    assert!(text.contains("gap"));
    assert!(text.contains("6 exit points"));
    assert!(text.contains("semantic centers take"));
}

#[test]
fn gen_trace_with_explicit_freqs_and_drift() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-trace",
            "--classes",
            "3",
            "--frames",
            "30",
            "--dims",
            "4x6x6",
            "--freqs",
            "0.5,0.3,0.2",
            "--burstiness",
            "2",
            "--noise",
            "0.1",
            "--seed",
            "5",
            "--template-drift",
            "0.4",
            "--out",
            "t",
        ],
        dir.path(),
    );
    let trace = smtm::trace::TraceFile::load(&dir.path().join("t/trace.bin")).unwrap();
    assert_eq!(trace.num_frames(), 30);
    assert_eq!(trace.dims(), (4, 6, 6));
    assert!(trace.has_labels());

    // Frequencies that do not sum to 1 are rejected.
    let err = fails(
        &[
            "gen-trace",
            "--classes",
            "3",
            "--frames",
            "30",
            "--dims",
            "4x6x6",
            "--freqs",
            "0.5,0.3,0.3",
            "--out",
            "t2",
        ],
        dir.path(),
    );
    assert!(err.contains("sum to 1"), "stderr: {err}");
}

#[test]
fn gen_trace_seed_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-trace",
        "--classes",
        "2",
        "--frames",
        "8",
        "--dims",
        "2x4x4",
        "--out",
    ];
    for (out, seed) in [("a", "11"), ("b", "11"), ("c", "12")] {
        let mut full: Vec<&str> = args.to_vec();
        full.push(out);
        let output = Command::new(env!("CARGO_BIN_EXE_smtm"))
            .args(&full)
            .current_dir(dir.path())
            .env("SMTM_SEED", seed)
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    let a = std::fs::read(dir.path().join("a/trace.bin")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.bin")).unwrap();
    let c = std::fs::read(dir.path().join("c/trace.bin")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn warmup_warns_about_missing_classes() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-model",
            "--preset",
            "tiny",
            "--seed",
            "7",
            "--out",
            "model",
        ],
        dir.path(),
    );
    ok(
        &[
            "gen-trace",
            "--classes",
            "3",
            "--frames",
            "9",
            "--dims",
            "16x16x16",
            "--round-robin",
            "--seed",
            "2",
            "--out",
            "warm",
        ],
        dir.path(),
    );
    // Declare 5 classes while the trace only covers 3.
    let text = ok(
        &[
            "warmup",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--trace",
            "warm/trace.bin",
            "--classes",
            "5",
            "--out",
            "centers",
        ],
        dir.path(),
    );
    assert!(text.contains("warning"), "stdout: {text}");
    assert!(text.contains("[3, 4]"), "stdout: {text}");
}

#[test]
fn run_rejects_mismatched_trace_shape() {
    let dir = tempfile::tempdir().unwrap();
    setup_model_and_warm(dir.path());
    ok(
        &[
            "gen-trace",
            "--classes",
            "6",
            "--frames",
            "10",
            "--dims",
            "2x4x4",
            "--seed",
            "3",
            "--out",
            "bad",
        ],
        dir.path(),
    );
    let err = fails(
        &[
            "run",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--centers",
            "centers/centers.bin",
            "--trace",
            "bad/trace.bin",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(err.contains("frame 0"), "stderr: {err}");
    assert!(err.contains("shape"), "stderr: {err}");
}

#[test]
fn run_emits_reports_and_respects_flags() {
    let dir = tempfile::tempdir().unwrap();
    setup_model_and_warm(dir.path());
    ok(
        &[
            "gen-trace",
            "--classes",
            "6",
            "--frames",
            "60",
            "--dims",
            "16x16x16",
            "--zipf",
            "1.4",
            "--burstiness",
            "4",
            "--noise",
            "0.08",
            "--seed",
            "9",
            "--template-seed",
            "21",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    let stdout = ok(
        &[
            "run",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--centers",
            "centers/centers.bin",
            "--trace",
            "eval/trace.bin",
            "--tau",
            "0.2",
            "--adaptive-size",
            "--adaptive-centers",
            "--window",
            "20",
            "--cl",
            "0.9",
            "--replacement-period",
            "2",
            "--dump-tables",
            "--dump-similarities",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(stdout.contains("60 frames"));
    for file in [
        "metrics.json",
        "frames.csv",
        "tables.csv",
        "similarities.csv",
        "separabilities.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("r").join(file).exists(), "missing {file}");
    }
    let sims = std::fs::read_to_string(dir.path().join("r/similarities.csv")).unwrap();
    assert!(sims.starts_with("frame_id,layer_id,class_id,similarity"));
    assert!(sims.lines().count() > 1, "no similarity rows captured");
    let manifest = std::fs::read_to_string(dir.path().join("r/manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"run\""));
    assert!(manifest.contains("\"mode\": \"adaptive\""));
    assert!(manifest.contains("\"window\": 20"));

    // The per-frame log has one row per frame plus a header.
    let frames = std::fs::read_to_string(dir.path().join("r/frames.csv")).unwrap();
    assert_eq!(frames.lines().count(), 61);
    assert!(frames.starts_with("frame_id,ground_truth,predicted,exit_layer,ac,flops,fast_mem"));

    // tables.csv carries one block of class rows per replacement event
    // (every 2 frames here).
    let tables = std::fs::read_to_string(dir.path().join("r/tables.csv")).unwrap();
    assert_eq!(tables.lines().count(), 1 + 6 * 30);
}

#[test]
fn sweep_requires_taus_and_accepts_inf() {
    let dir = tempfile::tempdir().unwrap();
    setup_model_and_warm(dir.path());
    ok(
        &[
            "gen-trace",
            "--classes",
            "6",
            "--frames",
            "40",
            "--dims",
            "16x16x16",
            "--zipf",
            "1.4",
            "--seed",
            "9",
            "--template-seed",
            "21",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    let err = fails(
        &[
            "sweep",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--centers",
            "centers/centers.bin",
            "--trace",
            "eval/trace.bin",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert!(err.contains("--taus"), "stderr: {err}");

    ok(
        &[
            "sweep",
            "--model",
            "model/model.json",
            "--weights",
            "model/weights.bin",
            "--centers",
            "centers/centers.bin",
            "--trace",
            "eval/trace.bin",
            "--taus",
            "0.2,inf",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("inf,"), "csv: {csv}");
    // The inf row realizes baseline equivalence: zero drop, zero exits.
    assert!(last.ends_with(",0,0"), "csv: {csv}");
}

#[test]
fn replay_rejects_garbage_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bogus.json"), "{\"command\": \"explode\"}").unwrap();
    let err = fails(
        &["replay", "--manifest", "bogus.json", "--out", "r"],
        dir.path(),
    );
    assert!(!err.is_empty());
}

#[test]
fn bad_tau_is_rejected_at_parse_time() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(
        &[
            "run",
            "--model",
            "m",
            "--weights",
            "w",
            "--centers",
            "c",
            "--trace",
            "t",
            "--tau=-3",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(err.contains("tau must be >= 0"), "stderr: {err}");
}

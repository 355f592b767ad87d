use std::path::Path;
use std::process::{Command, Output};

use ldct_core::cli::write_fresh_model;
use ldct_core::network::Variant;

fn ldct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldct"))
        .args(args)
        .env("LDCT_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ldct(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        ldct(&[
            "simulate",
            "--input",
            "/nonexistent/x",
            "--output",
            "/tmp/y"
        ])
        .status
        .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = ldct(&[
        "simulate",
        "--input",
        p(&empty),
        "--output",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_ldct"))
        .args(["inspect"])
        .env("LDCT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_reports_receptive_field_and_counts() {
    let out = ldct(&["inspect", "--arch", "drl-e", "--filters", "64"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("receptive field: 37"), "{text}");
    assert!(text.contains("edge"));
    assert!(text.contains("trainable parameters"));
}

#[test]
fn eval_of_identical_dirs_reports_identical() {
    let dir = tempfile::tempdir().unwrap();
    let nd = dir.path().join("nd");
    assert!(ldct(&[
        "phantom",
        "--output",
        p(&nd),
        "--count",
        "2",
        "--size",
        "32"
    ])
    .status
    .success());
    let out = ldct(&["eval", "--pred", p(&nd), "--ref", p(&nd)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.lines()
            .last()
            .unwrap()
            .starts_with("MEAN,,,identical,1"),
        "{text}"
    );
}

#[test]
fn eval_with_missing_counterpart_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(
        ldct(&["phantom", "--output", p(&a), "--count", "3", "--size", "24"])
            .status
            .success()
    );
    assert!(
        ldct(&["phantom", "--output", p(&b), "--count", "2", "--size", "24"])
            .status
            .success()
    );
    let csv = dir.path().join("m.csv");
    let out = ldct(&["eval", "--pred", p(&a), "--ref", p(&b), "--output", p(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("phantom_0002.pgm"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn simulate_writes_sidecars_and_eval_sees_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (nd, ld) = (dir.path().join("nd"), dir.path().join("ld"));
    assert!(ldct(&[
        "phantom",
        "--output",
        p(&nd),
        "--count",
        "2",
        "--size",
        "32"
    ])
    .status
    .success());
    let out = ldct(&[
        "simulate",
        "--input",
        p(&nd),
        "--output",
        p(&ld),
        "--i0",
        "500",
        "--angles",
        "90",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ld.join("phantom_0000.json")).unwrap())
            .unwrap();
    assert_eq!(meta["simulation"]["i0"], 500.0);
    assert_eq!(meta["source"], "phantom_0000.pgm");
    let out = ldct(&["eval", "--pred", p(&ld), "--ref", p(&nd)]);
    assert!(out.status.success());
    let last = stdout(&out).lines().last().unwrap().to_string();
    assert!(!last.contains("identical"), "{last}");
}

#[test]
fn denoise_large_slice_with_lung_window() {
    let dir = tempfile::tempdir().unwrap();
    let nd = dir.path().join("nd");
    assert!(ldct(&[
        "phantom",
        "--output",
        p(&nd),
        "--count",
        "1",
        "--size",
        "512"
    ])
    .status
    .success());
    let model = dir.path().join("fresh.ldws");
    write_fresh_model(&model, Variant::DrlE, 4, 1).unwrap();
    let out_dir = dir.path().join("out");
    let out = ldct(&[
        "denoise",
        "--model",
        p(&model),
        "--input",
        p(&nd),
        "--output",
        p(&out_dir),
        "--window",
        "lung",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pgm = ldct_core::io::read_pgm(&out_dir.join("phantom_0000.pgm")).unwrap();
    assert_eq!((pgm.width, pgm.height), (512, 512));
    assert!(out_dir.join("phantom_0000.json").is_file());
    let png = image::open(out_dir.join("phantom_0000.png")).unwrap();
    assert_eq!((png.width(), png.height()), (512, 512));
}

#[test]
fn denoise_rejects_unreadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ldws");
    std::fs::write(&junk, b"nope").unwrap();
    let out = ldct(&[
        "denoise",
        "--model",
        p(&junk),
        "--input",
        p(dir.path()),
        "--output",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn training_setup(root: &Path) -> std::path::PathBuf {
    let (nd, ld) = (root.join("nd"), root.join("ld"));
    assert!(ldct(&[
        "phantom",
        "--output",
        p(&nd),
        "--count",
        "4",
        "--size",
        "32",
        "--seed",
        "8"
    ])
    .status
    .success());
    assert!(ldct(&[
        "simulate",
        "--input",
        p(&nd),
        "--output",
        p(&ld),
        "--angles",
        "90"
    ])
    .status
    .success());
    let cfg = root.join("run.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"patch": 16, "stride": 16, "epochs": [1, 2], "batch": 2, "n_filters": 4},
            "data": {"low_dose": "ld", "normal_dose": "nd"},
            "extractor": {"weights": "missing.ldws"}}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn perceptual_training_without_extractor_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_setup(dir.path());
    let out = ldct(&[
        "train",
        "--config",
        p(&cfg),
        "--loss",
        "mp",
        "--output",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("missing pretrained extractor weights"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn interrupted_training_resumes_to_the_same_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_setup(dir.path());
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let out = ldct(&[
        "train",
        "--config",
        p(&cfg),
        "--loss",
        "m",
        "--output",
        p(&full),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = ldct(&[
        "train",
        "--config",
        p(&cfg),
        "--loss",
        "m",
        "--output",
        p(&part),
        "--stop-after",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ck = part.join("checkpoint.ldws");
    let out = ldct(&[
        "train",
        "--config",
        p(&cfg),
        "--loss",
        "m",
        "--output",
        p(&part),
        "--resume",
        p(&ck),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    assert_eq!(
        std::fs::read(full.join("checkpoint.ldws")).unwrap(),
        std::fs::read(&ck).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(full.join("loss.csv")).unwrap(),
        std::fs::read_to_string(part.join("loss.csv")).unwrap()
    );
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(full.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 3);
    assert_eq!(split["test"].as_array().unwrap().len(), 1);

    // a checkpoint from a different configuration is refused
    let other = dir.path().join("other.json");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("\"batch\": 2", "\"batch\": 3");
    std::fs::write(&other, text).unwrap();
    let out = ldct(&[
        "train",
        "--config",
        p(&other),
        "--loss",
        "m",
        "--output",
        p(&part),
        "--resume",
        p(&ck),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

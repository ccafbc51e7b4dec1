//! Drives the `enhope` binary end to end on small synthetic data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use enhope::data::write_csv;
use enhope::synthetic::{blobs, BlobSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_enhope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(classes: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let train = blobs(&BlobSpec::simple(60 * classes, classes, classes.max(4), 8.0, 1)).unwrap();
        let test = blobs(&BlobSpec::simple(20 * classes, classes, classes.max(4), 8.0, 2)).unwrap();
        write_csv(&train, dir.path().join("train.csv")).unwrap();
        write_csv(&test, dir.path().join("test.csv")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, model: &str, extra: &[&str]) -> String {
        let train = self.path("train.csv");
        let out = self.path(model);
        let mut args = vec![
            "train", "--data", p(&train), "--out", p(&out), "--factors", "16", "--hidden", "8", "--quiet",
        ];
        if !extra.contains(&"--epochs") {
            args.extend_from_slice(&["--epochs", "3"]);
        }
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn header_word(bytes: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap())
}

#[test]
fn train_records_defaults_and_exemplar_count() {
    let fx = Fixture::new(3);
    let stdout = fx.train("m.bin", &["--mode", "kmeans", "--z", "3"]);
    assert!(stdout.contains("z=3"));
    let bytes = std::fs::read(fx.path("m.bin")).unwrap();
    assert_eq!(&bytes[..4], b"ENHP");
    // version, variant, H, h, F, m, O, z, c
    assert_eq!((0..9).map(|i| header_word(&bytes, i)).collect::<Vec<_>>(), vec![1, 0, 4, 2, 16, 8, 2, 3, 3]);
}

#[test]
fn pairwise_mode_records_no_exemplars() {
    let fx = Fixture::new(2);
    fx.train("m.bin", &["--mode", "none"]);
    let bytes = std::fs::read(fx.path("m.bin")).unwrap();
    assert_eq!(header_word(&bytes, 7), 0);
    let out = run(&["train", "--data", p(&fx.path("train.csv")), "--out", p(&fx.path("x.bin")), "--mode", "none", "--z", "4"]);
    assert!(!out.status.success());
}

#[test]
fn identical_invocations_write_identical_models() {
    let fx = Fixture::new(3);
    fx.train("a.bin", &["--z", "6", "--seed", "7"]);
    fx.train("b.bin", &["--z", "6", "--seed", "7"]);
    fx.train("c.bin", &["--z", "6", "--seed", "8"]);
    let a = std::fs::read(fx.path("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(fx.path("b.bin")).unwrap());
    assert_ne!(a, std::fs::read(fx.path("c.bin")).unwrap());
}

#[test]
fn embed_writes_points_then_exemplars_deterministically() {
    let fx = Fixture::new(3);
    fx.train("m.bin", &["--z", "3"]);
    let (model, test) = (fx.path("m.bin"), fx.path("test.csv"));
    ok(&["embed", "--model", p(&model), "--data", p(&test), "--out", p(&fx.path("e1.csv"))]);
    ok(&["embed", "--model", p(&model), "--data", p(&test), "--out", p(&fx.path("e2.csv"))]);
    let text = std::fs::read_to_string(fx.path("e1.csv")).unwrap();
    assert_eq!(text, std::fs::read_to_string(fx.path("e2.csv")).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y1,y2,label,is_exemplar"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 60 + 3);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
    assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 3);
}

fn fills(svg: &str) -> BTreeSet<String> {
    svg.split("fill=\"")
        .skip(1)
        .map(|s| s[..s.find('"').unwrap()].to_string())
        .filter(|c| c != "none")
        .collect()
}

#[test]
fn plot_colors_rings_and_legend() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    let svg = dir.path().join("e.svg");
    std::fs::write(&csv, "y1,y2,label,is_exemplar\n0,0,0,0\n1,1,1,0\n0.5,0.2,0,0\n0.1,0.1,0,1\n0.9,0.9,1,1\n").unwrap();
    ok(&["plot", "--input", p(&csv), "--out", p(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(fills(&text).len(), 2);
    assert_eq!(text.matches("class=\"exemplar\"").count(), 2);
    assert!(text.contains("fill=\"none\""));

    std::fs::write(&csv, "y1,y2,label,is_exemplar\n0,0,0,0\n1,1,1,0\n").unwrap();
    ok(&["plot", "--input", p(&csv), "--out", p(&svg)]);
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("class=\"exemplar\"").count(), 0);

    let mut body = String::from("y1,y2,label,is_exemplar\n");
    for c in 0..10 {
        body.push_str(&format!("{c},{},{c},0\n", c * c));
    }
    std::fs::write(&csv, body).unwrap();
    ok(&["plot", "--input", p(&csv), "--out", p(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("class=\"legend-entry\"").count(), 10);
    assert_eq!(fills(&text).len(), 10);

    std::fs::write(&csv, "y1,y2,label\n0,0,0\n").unwrap();
    let out = run(&["plot", "--input", p(&csv), "--out", p(&svg)]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[csv]"));
}

#[test]
fn evaluate_uses_auto_k_unless_overridden() {
    let fx = Fixture::new(3);
    fx.train("m.bin", &["--z", "3", "--epochs", "8"]);
    let (model, test) = (fx.path("m.bin"), fx.path("test.csv"));
    let auto = ok(&["evaluate", "--model", p(&model), "--data", p(&test)]);
    assert!(auto.contains("k=1\n"), "{auto}");
    let explicit = ok(&["evaluate", "--model", p(&model), "--data", p(&test), "--k", "3", "--parallel"]);
    assert!(explicit.contains("k=3\n"));
    let err: f64 = auto.lines().find_map(|l| l.strip_prefix("error=")).unwrap().parse().unwrap();
    assert!(err < 0.2, "error {err}");
}

#[test]
fn evaluate_pairwise_model_against_training_points() {
    let fx = Fixture::new(2);
    fx.train("m.bin", &["--mode", "none"]);
    let (model, test, train) = (fx.path("m.bin"), fx.path("test.csv"), fx.path("train.csv"));
    let out = run(&["evaluate", "--model", p(&model), "--data", p(&test)]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[argument]"));
    let text = ok(&["evaluate", "--model", p(&model), "--data", p(&test), "--train-data", p(&train)]);
    assert!(text.contains("z=0"));
}

#[test]
fn benchmark_reports_both_arms() {
    let fx = Fixture::new(3);
    fx.train("m.bin", &["--z", "3"]);
    let (model, test, train) = (fx.path("m.bin"), fx.path("test.csv"), fx.path("train.csv"));
    let json = fx.path("bench.json");
    let text = ok(&[
        "benchmark", "--model", p(&model), "--data", p(&test), "--train-data", p(&train), "--report", p(&json),
    ]);
    for key in ["exemplar_error=", "full_error=", "speedup=", "exemplar_seconds=", "full_seconds=", "repeats=3"] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(parsed["repeats"], 3);
    assert!(parsed["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn errors_are_single_prefixed_lines() {
    let fx = Fixture::new(2);
    let missing = fx.path("nope.csv");
    let out = run(&["train", "--data", p(&missing), "--out", p(&fx.path("m.bin"))]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(!out.status.success());
    assert!(err.starts_with("error[csv]: ") || err.starts_with("error[io]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[usage]: "));
    assert_eq!(err.trim_end().lines().count(), 1);

    // a 4-feature model on 6-feature data
    fx.train("m.bin", &["--z", "2"]);
    let wide = blobs(&BlobSpec::simple(20, 2, 6, 8.0, 3)).unwrap();
    write_csv(&wide, fx.path("wide.csv")).unwrap();
    let out = run(&["embed", "--model", p(&fx.path("m.bin")), "--data", p(&fx.path("wide.csv")), "--out", p(&fx.path("o.csv"))]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[dimension]: "));

    let out = bin().env("ENHOPE_THREADS", "zero").args(["plot", "--input", "x", "--out", "y"]).output().unwrap();
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[argument]: "));
}

#[test]
fn reads_idx_directories() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset");
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    // a fixed linear map keeps this quick; the point is the IDX plumbing
    ok(&[
        "train", "--data", data, "--map", "linear", "--mode", "kmeans", "--z", "10", "--epochs", "1", "--quiet",
        "--out", p(&model),
    ]);
    let text = ok(&["evaluate", "--model", p(&model), "--data", data, "--subset", "test"]);
    assert!(text.contains("n_test=2000"));
}

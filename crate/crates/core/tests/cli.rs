//! Runs the `vig-lrgc` binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vig-lrgc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_train(dir: &Path, out: &str, seed: &str) -> Output {
    bin(
        &[
            "train",
            "--synthetic",
            "--epochs",
            "2",
            "--seed",
            seed,
            "--set",
            "data.train_size=128",
            "--set",
            "data.test_size=32",
            "--out",
            out,
        ],
        dir,
    )
}

#[test]
fn train_smoke_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["train", "--synthetic", "--epochs", "2", "--out", "runs/t0"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("runs/t0");
    for f in ["metrics.csv", "model.ckpt", "manifest.cfg", "avg_neighbors_layer0.svg", "avg_neighbors_layer3.svg"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn seeded_runs_and_manifest_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(small_train(tmp.path(), out, "7").status.code(), Some(0));
    }
    let read = |p: &str| std::fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));

    let manifest = tmp.path().join("a/manifest.cfg");
    let o = bin(
        &["train", "--config", manifest.to_str().unwrap(), "--deterministic", "--out", "c"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read("a/metrics.csv"), read("c/metrics.csv"));
    assert_eq!(read("a/model.ckpt"), read("c/model.ckpt"));
    assert_eq!(read("a/manifest.cfg"), read("c/manifest.cfg"));

    assert_eq!(small_train(tmp.path(), "d", "8").status.code(), Some(0));
    assert_ne!(read("a/metrics.csv"), read("d/metrics.csv"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--synthetic", "--bogus"][..],
        &["train"],
        &["train", "--synthetic", "--set", "train.nope=1"],
        &["train", "--synthetic", "--data", "x"],
        &["frobnicate"],
        &["flops", "--preset", "huge"],
    ] {
        let o = bin(args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn grad_check_passes_and_catches_a_backward_bug() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["grad-check", "--coords", "4", "--list-kinks"], tmp.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("blocks.3.grapher.lrgc.tau"));
    assert!(text.contains("excluded kink coordinates:"));
    assert!(text.contains("PASS"));

    let o = bin(&["grad-check", "--coords", "4", "--inject-fault", "tanh-sign"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn inspect_graph_fresh_and_trained() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["inspect-graph", "--dump-layer", "2", "--out", "i"], tmp.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with(char::is_numeric)).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(f[1], "16.0000", "{row}");
    }

    let bound_of = |text: &str, layer: &str| -> f64 {
        let row = text.lines().find(|l| l.split_whitespace().next() == Some(layer)).unwrap();
        row.split_whitespace().nth(3).unwrap().parse().unwrap()
    };
    let csv = std::fs::read_to_string(tmp.path().join("i/scores_layer2.csv")).unwrap();
    let bound = bound_of(&text, "2");
    let values: Vec<f64> = csv.lines().flat_map(|l| l.split(',')).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 16 * 16);
    assert!(values.iter().all(|&v| (0.0..bound).contains(&v)));

    assert_eq!(small_train(tmp.path(), "t", "1").status.code(), Some(0));
    let o = bin(&["inspect-graph", "--checkpoint", "t/model.ckpt", "--sample", "3"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("histogram"));

    let o = bin(&["inspect-graph", "--checkpoint", "t/model.ckpt", "--dump-layer", "4"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));

    let o = bin(&["inspect-graph", "--checkpoint", "missing.ckpt"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing file"));

    let o = bin(&["eval", "--synthetic", "--checkpoint", "t/model.ckpt"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("top1"));
}

#[test]
fn flops_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["flops", "--preset", "imagenet"], tmp.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0));
    assert!(text.contains("convention: FLOPs = MACs"));

    let o = bin(&["flops"], tmp.path());
    let text = stdout(&o);
    let macs = |name: &str, text: &str| -> u64 {
        let row = text.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap();
        row.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    for part in vig_lrgc::flops::PARTS {
        assert!(macs(part, &text) > 0, "{part}");
    }
    let wide = stdout(&bin(&["flops", "--set", "model.width=64"], tmp.path()));
    assert_eq!(macs("logits", &wide), 4 * macs("logits", &text));
    assert_eq!(macs("aggregate", &wide), 4 * macs("aggregate", &text));
}

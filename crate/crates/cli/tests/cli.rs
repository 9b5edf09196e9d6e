//! End-to-end runs of the `wxstyle` binary on a small synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn wxstyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxstyle")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wxstyle(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path) {
    ok(&["synth", "--out", p(&dir.join("d")), "--count", "60", "--size", "32", "--sources", "3", "--seed", "1"]);
    ok(&["split", "--data", p(&dir.join("d")), "--out", p(&dir.join("s")), "--test-fraction", "0.25", "--seed", "3"]);
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> String {
    let (d, out) = (dir.join("d"), dir.join(out));
    let (tr, te) = (dir.join("s/train_ids.txt"), dir.join("s/test_ids.txt"));
    let mut args = vec!["train", "--data", p(&d), "--train-ids", p(&tr), "--val-ids", p(&te), "--out", p(&out)];
    args.extend_from_slice(extra);
    ok(&args)
}

fn reported_f1(stdout: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with("final mean F1")).expect("F1 line");
    line.rsplit(' ').next().unwrap().parse().unwrap()
}

#[test]
fn split_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path());
    let d = t.path().join("d");
    ok(&["split", "--data", p(&d), "--out", p(&t.path().join("s2")), "--test-fraction", "0.25", "--seed", "3"]);
    for f in ["train_ids.txt", "test_ids.txt", "split_report.txt"] {
        let a = std::fs::read(t.path().join("s").join(f)).unwrap();
        let b = std::fs::read(t.path().join("s2").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn train_evaluate_infer_and_replay() {
    let t = tempfile::tempdir().unwrap();
    corpus(t.path());
    let stdout = train(t.path(), "r", &["--family", "pm", "--input-size", "32", "--epochs", "2"]);
    let f1 = reported_f1(&stdout);

    let ck = t.path().join("r/checkpoint.wsck");
    let ids = t.path().join("s/test_ids.txt");
    let metrics = ok(&["evaluate", "--checkpoint", p(&ck), "--data", p(&t.path().join("d")), "--ids", p(&ids)]);
    let global = metrics.lines().find(|l| l.starts_with("global")).unwrap();
    assert!(global.contains(&format!("mean_f1={f1:.6}")), "{global} vs {f1}");

    // The run manifest replays to the same checkpoint.
    let stdout = train(t.path(), "r2", &["--config", p(&t.path().join("r/run.txt"))]);
    assert_eq!(reported_f1(&stdout), f1);
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(t.path().join("r2/checkpoint.wsck")).unwrap());

    let images = t.path().join("d/images");
    let mut frames: Vec<_> = std::fs::read_dir(&images).unwrap().map(|e| e.unwrap().path()).collect();
    frames.sort();
    let lines = ok(&["infer", "--checkpoint", p(&ck), p(&frames[0])]);
    let rows: Vec<Vec<&str>> = lines.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3, "one row per synthetic task");
    for row in rows {
        assert_eq!(row.len(), 3);
        let prob: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&prob));
    }

    let info = ok(&["inspect", "--checkpoint", p(&ck)]);
    assert!(info.contains("family=pm"), "{info}");
}

#[test]
fn hpo_stub_runs_and_resumes() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("h");
    let first = ok(&["hpo", "--stub", "--family", "rtm", "--generations", "4", "--seed", "5", "--out", p(&out)]);
    assert!(first.starts_with("best fitness"));
    assert!(out.join("best.toml").exists());
    let log = std::fs::read(out.join("evolution.txt")).unwrap();
    // A finished state resumes to the same result without further work.
    let again = ok(&["hpo", "--stub", "--family", "rtm", "--generations", "4", "--seed", "5", "--resume", "--out", p(&out)]);
    assert_eq!(first, again);
    assert_eq!(log, std::fs::read(out.join("evolution.txt")).unwrap());
}

#[test]
fn exit_codes_follow_error_classes() {
    let t = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| wxstyle(args).status.code().unwrap();
    assert_eq!(code(&["split", "--out", p(t.path())]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["split", "--data", p(&t.path().join("missing")), "--out", p(t.path())]), 3);
    assert_eq!(code(&["hpo", "--stub", "--mutation", "2", "--out", p(&t.path().join("h"))]), 4);
    corpus(t.path());
    let diverged = wxstyle(&[
        "train",
        "--data",
        p(&t.path().join("d")),
        "--family",
        "pm",
        "--input-size",
        "32",
        "--epochs",
        "2",
        "--lr",
        "1e9",
        "--out",
        p(&t.path().join("r")),
    ]);
    assert_eq!(diverged.status.code(), Some(5), "{}", String::from_utf8_lossy(&diverged.stderr));
}

//! End-to-end runs of the `signnet` binary on tiny corpora and models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--embed-dim",
    "8",
    "--heads",
    "2",
    "--encoder-layers",
    "1",
    "--decoder-layers",
    "1",
    "--batch-size",
    "4",
];

macro_rules! args {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}

fn tiny() -> Vec<String> {
    TINY.iter().map(|s| s.to_string()).collect()
}

fn signnet(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[String]) -> Output {
    let out = signnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_owned()
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = s.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "expected one error line in {s:?}");
    lines[0].to_owned()
}

fn corpus(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("corpus");
    ok(&args![
        "gen-corpus",
        "--out",
        p(&out),
        "--samples",
        "6",
        "--dev-samples",
        "2",
        "--vocab-size",
        "4",
        "--seed",
        seed,
    ]);
    out
}

fn train_t2p(dir: &Path, corpus: &Path, name: &str) -> PathBuf {
    let ckpt = dir.join(name);
    let mut args = args![
        "train-t2p",
        "--corpus",
        p(&corpus.join("train")),
        "--dev",
        p(&corpus.join("dev")),
        "--out",
        p(&ckpt),
        "--epochs",
        "2",
    ].to_vec();
    args.extend(tiny());
    ok(&args);
    ckpt
}

fn train_p2t(dir: &Path, corpus: &Path) -> PathBuf {
    let ckpt = dir.join("p2t.ckpt");
    let mut args = args![
        "train-p2t",
        "--corpus",
        p(&corpus.join("train")),
        "--out",
        p(&ckpt),
        "--epochs",
        "2",
        "--prob-loss",
        "neg_log",
    ].to_vec();
    args.extend(tiny());
    ok(&args);
    ckpt
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_corpus_writes_both_splits_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = corpus(a.path(), "5");
    let cb = corpus(b.path(), "5");
    let manifest = fs::read_to_string(ca.join("train/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
    assert_eq!(fs::read_to_string(ca.join("dev/manifest.tsv")).unwrap().lines().count(), 2);
    for split in ["train", "dev"] {
        assert_eq!(dir_bytes(&ca.join(split).join("poses")), dir_bytes(&cb.join(split).join("poses")));
        assert_eq!(dir_bytes(&ca.join(split)), dir_bytes(&cb.join(split)));
    }
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let d = tempfile::tempdir().unwrap();
            let c = corpus(d.path(), "1");
            let t2p = train_t2p(d.path(), &c, "t2p.ckpt");
            let p2t = train_p2t(d.path(), &c);
            let input = d.path().join("input.txt");
            fs::write(&input, "a\tRAIN SUN\nb\tCLOUD\nWIND RAIN\n").unwrap();
            let poses = d.path().join("poses");
            ok(&args![
                "generate",
                "--model",
                p(&t2p),
                "--input",
                p(&input),
                "--out",
                p(&poses),
                "--max-frames",
                "12",
            ]);
            let svg = d.path().join("svg");
            ok(&args!["render", "--pose", p(&poses.join("a.pose")), "--out", p(&svg), "--stride", "3"]);
            let files = |dir: &Path| dir_bytes(dir);
            let out = (
                fs::read(&t2p).unwrap(),
                fs::read(d.path().join("t2p.ckpt.log.jsonl")).unwrap(),
                fs::read(&p2t).unwrap(),
                fs::read(d.path().join("p2t.ckpt.log.jsonl")).unwrap(),
                files(&poses),
                files(&svg),
            );
            (d, out)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    assert_eq!(a.0, b.0, "t2p checkpoint");
    assert_eq!(a.1, b.1, "t2p log");
    assert_eq!(a.2, b.2, "p2t checkpoint");
    assert_eq!(a.3, b.3, "p2t log");
    assert_eq!(a.4, b.4, "pose files");
    assert_eq!(a.5, b.5, "svg files");
    let names: Vec<&str> = a.4.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["a.pose", "b.pose", "l0003.pose"]);
    assert!(!a.5.is_empty());
}

#[test]
fn generate_rejects_empty_lines_and_warns_on_unknown_tokens() {
    let d = tempfile::tempdir().unwrap();
    let c = corpus(d.path(), "2");
    let t2p = train_t2p(d.path(), &c, "t2p.ckpt");
    let input = d.path().join("bad.txt");
    fs::write(&input, "RAIN\n\nSUN\n").unwrap();
    let out = signnet(&args![
        "generate",
        "--model",
        p(&t2p),
        "--input",
        p(&input),
        "--out",
        p(&d.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("line 2"));

    fs::write(&input, "x\tRAIN NOPE\n").unwrap();
    let out = ok(&args![
        "generate",
        "--model",
        p(&t2p),
        "--input",
        p(&input),
        "--out",
        p(&d.path().join("o")),
        "--max-frames",
        "4",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("NOPE"));
    assert!(d.path().join("o/x.pose").exists());
}

#[test]
fn backtranslate_reports_every_pose_file() {
    let d = tempfile::tempdir().unwrap();
    let c = corpus(d.path(), "3");
    let p2t = train_p2t(d.path(), &c);
    let report = d.path().join("report.txt");
    ok(&args![
        "backtranslate",
        "--poses",
        p(&c.join("train/poses")),
        "--model",
        p(&p2t),
        "--references",
        p(&c.join("train")),
        "--out",
        p(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    let samples = text.split("[samples]\n").nth(1).unwrap().split("\n\n").next().unwrap();
    assert_eq!(samples.lines().count(), 1 + 6);
    assert!(text.contains("bleu_4\t"));
    assert!(text.contains("mean_dtw\t0.0000"), "ground-truth poses align with themselves");

    // Two-column references lack poses, so DTW is not available.
    let refs = d.path().join("refs.tsv");
    let manifest = fs::read_to_string(c.join("train/manifest.tsv")).unwrap();
    let two: String = manifest
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            format!("{}\t{}\n", f[0], f[1])
        })
        .collect();
    fs::write(&refs, two).unwrap();
    let out = ok(&args![
        "backtranslate",
        "--poses",
        p(&c.join("train/poses")),
        "--model",
        p(&p2t),
        "--references",
        p(&refs),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean_dtw\tn/a"));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "seed = 9\n[gen-corpus]\nsamples = 3\ndev-samples = 1\nvocab-size = 3\n").unwrap();
    let out = d.path().join("c");
    ok(&args!["gen-corpus", "--config", p(&cfg), "--out", p(&out), "--samples", "4"]);
    assert_eq!(fs::read_to_string(out.join("train/manifest.tsv")).unwrap().lines().count(), 4);
    let spec = fs::read_to_string(out.join("train/corpus_spec.json")).unwrap();
    assert!(spec.contains("\"seed\": 9"));

    fs::write(&cfg, "[gen-corpus]\nsampels = 3\n").unwrap();
    let bad = signnet(&args!["gen-corpus", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr_line(&bad).contains("sampels"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert!(signnet(&args!["--help"]).status.success());
    let unknown = signnet(&args!["train-t2p", "--bogus", "1"]);
    assert_eq!(unknown.status.code(), Some(1));
    stderr_line(&unknown);
    assert_eq!(signnet(&args!["render", "--pose", "x.pose"]).status.code(), Some(1), "missing --out");

    let missing = signnet(&args!["render", "--pose", p(&d.path().join("nope.pose")), "--out", p(d.path())]);
    assert_eq!(missing.status.code(), Some(2));
    let garbage = d.path().join("g.pose");
    fs::write(&garbage, "not a pose\n").unwrap();
    let bad = signnet(&args!["render", "--pose", p(&garbage), "--out", p(d.path())]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr_line(&bad).contains("parse"));

    let c = corpus(d.path(), "4");
    let mut args = args![
        "train-t2p",
        "--corpus",
        p(&c.join("train")),
        "--out",
        p(&d.path().join("x.ckpt")),
        "--lr",
        "1e300",
        "--grad-clip",
        "0",
        "--epochs",
        "5",
    ].to_vec();
    args.extend(tiny());
    let div = signnet(&args);
    assert_eq!(div.status.code(), Some(3), "{}", String::from_utf8_lossy(&div.stderr));
    assert!(stderr_line(&div).contains("diverged"));
}

#[test]
fn grid_with_a_failing_cell_still_reports() {
    let d = tempfile::tempdir().unwrap();
    let c = corpus(d.path(), "6");
    let p2t = train_p2t(d.path(), &c);
    let mut args = args![
        "grid",
        "--corpus",
        p(&c.join("train")),
        "--dev",
        p(&c.join("dev")),
        "--p2t",
        p(&p2t),
        "--cells",
        "5:5,-1:5",
        "--arms",
        "g2p",
        "--epochs",
        "1",
        "--log-dir",
        p(&d.path().join("logs")),
    ].to_vec();
    args.extend(tiny());
    let out = ok(&args);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("G2P-BLEU-1"));
    assert!(text.contains("FAILED"));
    assert!(d.path().join("logs/g2p_5_5.jsonl").exists());
}

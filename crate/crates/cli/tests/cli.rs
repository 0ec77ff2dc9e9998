use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn trex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trex")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = trex(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    trex(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

const TINY: &[&str] = &[
    "--embed-dim", "8", "--num-heads", "2", "--num-encoder-layers", "1", "--num-decoder-layers", "1",
    "--ffn-dim", "16", "--n-enc", "12", "--n-dec", "4", "--dropout", "0",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let (d, v) = (data.join("data.jsonl"), data.join("vocab.json"));
    let mut args = vec!["train", "--data", s(&d), "--vocab", s(&v), "--out", s(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args)
}

fn read_records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_data_is_byte_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let flags = ["--customers", "100", "--seed", "7"];
    gen(&a, &flags);
    gen(&b, &flags);
    for f in ["data.jsonl", "vocab.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read_records(&a.join("data.jsonl")).len(), 100);
    let cfg: Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["customers"], 100);
    assert_eq!(cfg["seed"], 7);
}

#[test]
fn gen_data_alternating_mix() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&["gen-data", "--customers", "30", "--archetype", "alternating:1.0", "--out", s(t.path())]);
    assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["alternating", "30"]), "{out}");
    assert!(!out.contains("frequency"));
}

#[test]
fn validation_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen-data", "--customers", "0", "--out", s(t.path())]), 2);
    assert_eq!(code(&["gen-data", "--no-such-flag"]), 2);
    let missing = t.path().join("missing.jsonl");
    assert_eq!(
        code(&["train", "--data", s(&missing), "--vocab", s(&missing), "--out", s(t.path())]),
        2
    );
    fs::write(t.path().join("bad.json"), r#"{"customer": 3}"#).unwrap();
    assert_eq!(
        code(&["gen-data", "--config", s(&t.path().join("bad.json")), "--out", s(t.path())]),
        2
    );
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"customers": 12, "seed": 3, "categories": 9}"#).unwrap();
    let out = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--customers", "5", "--out", s(&out)]);
    let echoed: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["customers"], 5);
    assert_eq!(echoed["seed"], 3);
    assert_eq!(echoed["categories"], 9);
    assert_eq!(read_records(&out.join("data.jsonl")).len(), 5);

    // the echoed config alone reproduces the run
    let again = t.path().join("again");
    ok(&["gen-data", "--config", s(&out.join("config.json")), "--out", s(&again)]);
    assert_eq!(fs::read(out.join("data.jsonl")).unwrap(), fs::read(again.join("data.jsonl")).unwrap());
}

#[test]
fn train_writes_checkpoint_and_log() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, &["--customers", "8", "--categories", "8", "--archetype", "frequency:1", "--seed", "2"]);
    let run = t.path().join("run");
    let stdout = train(&data, &run, &["--max-epochs", "3", "--learning-rate", "3e-3"]);
    assert!(run.join("model.ckpt").is_file());
    assert!(run.join("config.json").is_file());
    assert_eq!(read_records(&run.join("run_log.jsonl")).len(), 4);
    let line = stdout.lines().find(|l| l.starts_with("final train loss")).unwrap();
    let loss: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(loss.is_finite() && loss > 0.0);
}

#[test]
fn zero_epochs_keeps_initial_weights() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, &["--customers", "8", "--categories", "8", "--archetype", "frequency:1", "--seed", "4"]);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let stdout = train(&data, &a, &["--max-epochs", "0", "--seed", "11"]);
    assert!(stdout.contains("no epochs run"));
    train(&data, &b, &["--max-epochs", "0", "--seed", "11"]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(read_records(&a.join("run_log.jsonl")).len(), 1);
}

/// Personal top-frequency recall@k computed directly from the dataset file.
fn ptop_oracle(data: &Path, ks: &[usize]) -> Vec<f64> {
    let vocab: Vec<String> = serde_json::from_str(&fs::read_to_string(data.join("vocab.json")).unwrap()).unwrap();
    let id = |n: &str| vocab.iter().position(|v| v == n).unwrap();
    let mut sums = vec![0.0; ks.len()];
    let mut n = 0.0;
    for rec in read_records(&data.join("data.jsonl")) {
        let mut sessions: BTreeMap<i64, BTreeSet<usize>> = BTreeMap::new();
        for sess in rec["sessions"].as_array().unwrap() {
            let day = sess["day"].as_i64().unwrap();
            for c in sess["categories"].as_array().unwrap() {
                sessions.entry(day).or_default().insert(id(c.as_str().unwrap()));
            }
        }
        if sessions.len() < 3 {
            continue;
        }
        let (_, target) = sessions.pop_last().unwrap();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for c in sessions.values().flatten() {
            *counts.entry(*c).or_default() += 1;
        }
        let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, &k) in ks.iter().enumerate() {
            let hits = ranked.iter().take(k).filter(|(c, _)| target.contains(c)).count();
            sums[i] += hits as f64 / target.len() as f64;
        }
        n += 1.0;
    }
    sums.into_iter().map(|x| x / n).collect()
}

#[test]
fn evaluate_ptop_matches_oracle() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, &["--customers", "80", "--seed", "13"]);
    let out = t.path().join("eval");
    ok(&[
        "evaluate", "--system", "ptop", "--data", s(&data.join("data.jsonl")), "--vocab",
        s(&data.join("vocab.json")), "--ks", "2,6,10", "--out", s(&out),
    ]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report_ptop.json")).unwrap()).unwrap();
    let expected = ptop_oracle(&data, &[2, 6, 10]);
    let rows = report["per_k"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (row, want) in rows.iter().zip(expected) {
        let got = row["recall_mean"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "k={}: {got} vs {want}", row["k"]);
    }

    let csv = fs::read_to_string(out.join("per_k.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(ks, ["2", "6", "10"]);
    assert!(out.join("rank_match_ptop.csv").is_file());
}

#[test]
fn compare_and_predict() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(&data, &["--customers", "20", "--categories", "10", "--seed", "5"]);
    let run = t.path().join("run");
    train(&data, &run, &["--max-epochs", "2", "--learning-rate", "3e-3"]);
    let ckpt = run.join("model.ckpt");

    let out = t.path().join("eval");
    let stdout = ok(&[
        "evaluate", "--checkpoint", s(&ckpt), "--compare", "--data", s(&data.join("data.jsonl")), "--vocab",
        s(&data.join("vocab.json")), "--ks", "2,3", "--out", s(&out),
    ]);
    assert!(stdout.contains("trex - ptop"));
    let csv = fs::read_to_string(out.join("per_k.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2] == rows[0][2]));
    assert_eq!(rows.iter().map(|r| r[0]).collect::<BTreeSet<_>>(), BTreeSet::from(["trex", "ptop"]));

    let history = fs::read_to_string(data.join("data.jsonl")).unwrap().lines().next().unwrap().to_string();
    let stdout = ok(&["predict", "--checkpoint", s(&ckpt), "--history", &history, "--k", "5", "--partial", "cat_00,cat_01"]);
    let lines: Vec<(&str, f64)> = stdout
        .lines()
        .map(|l| {
            let (n, sc) = l.split_once('\t').unwrap();
            (n, sc.parse().unwrap())
        })
        .collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|(n, _)| *n != "cat_00" && *n != "cat_01"));
    assert!(lines.windows(2).all(|w| w[0].1 >= w[1].1));

    let file = t.path().join("history.json");
    fs::write(&file, &history).unwrap();
    assert_eq!(ok(&["predict", "--checkpoint", s(&ckpt), "--history", s(&file), "--k", "1"]).lines().count(), 1);

    assert_eq!(code(&["predict", "--checkpoint", s(&ckpt), "--history", &history, "--k", "0"]), 2);
    assert_eq!(
        code(&["predict", "--checkpoint", s(&ckpt), "--history", &history, "--partial", "nope"]),
        2
    );
}

#[test]
fn evaluate_rejects_foreign_vocabulary() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, &["--customers", "10", "--categories", "8", "--archetype", "frequency:1"]);
    gen(&b, &["--customers", "10", "--categories", "9", "--archetype", "frequency:1"]);
    let run = t.path().join("run");
    train(&a, &run, &["--max-epochs", "0"]);
    let out = trex(&[
        "evaluate", "--checkpoint", s(&run.join("model.ckpt")), "--data", s(&b.join("data.jsonl")), "--vocab",
        s(&b.join("vocab.json")), "--out", s(&t.path().join("e")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn memorized_customer_predicts_dominant_category() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    gen(
        &data,
        &[
            "--customers", "1", "--categories", "6", "--archetype", "frequency:1", "--favorites", "1",
            "--min-favorite-prob", "1", "--max-favorite-prob", "1", "--background-prob", "0", "--seed", "3",
        ],
    );
    let rec = &read_records(&data.join("data.jsonl"))[0];
    let dominant = rec["sessions"][0]["categories"][0].as_str().unwrap().to_string();
    let run = t.path().join("run");
    train(&data, &run, &["--max-epochs", "60", "--learning-rate", "1e-2", "--samples-per-customer", "8", "--patience", "60"]);
    let stdout = ok(&[
        "predict", "--checkpoint", s(&run.join("model.ckpt")), "--history", &serde_json::to_string(rec).unwrap(), "--k", "1",
    ]);
    assert_eq!(stdout.split('\t').next().unwrap(), dominant);
}

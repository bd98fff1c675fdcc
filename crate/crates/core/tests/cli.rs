use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use triderm::corpus::{looks_like_embedding, DistanceMatrix, EmbeddingSet};
use triderm::oracle::{MockMode, MockServer};

fn triderm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triderm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = triderm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    triderm(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Corpus {
    fn new(n_items: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--out-dir", s(&root), "--n-items", &n_items.to_string(), "--channels", "4"]);
        Corpus { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn p(&self, name: &str) -> String {
        s(&self.path(name)).to_string()
    }
}

/// The `[default: ..]` value of `--flag`, whether clap prints it on the flag's line or the next.
fn default_of(help: &str, flag: &str) -> String {
    let lines: Vec<&str> = help.lines().collect();
    let at = lines
        .iter()
        .position(|l| l.trim_start().starts_with(&format!("--{flag} ")))
        .unwrap_or_else(|| panic!("no --{flag} in help"));
    let text = lines[at..(at + 2).min(lines.len())].join(" ");
    let start = text.find("[default: ").unwrap_or_else(|| panic!("--{flag} shows no default")) + 10;
    text[start..start + text[start..].find(']').unwrap()].to_string()
}

#[test]
fn help_lists_documented_defaults() {
    let soe = ok(&["soe", "fit", "-h"]);
    for (flag, want) in [
        ("dim", "4"),
        ("margin", "0"),
        ("lr", "0.05"),
        ("batch-size", "2048"),
        ("epochs", "50"),
        ("init-sd", "0.1"),
    ] {
        assert_eq!(default_of(&soe, flag), want, "soe fit --{flag}");
    }
    let pool = ok(&["pool", "train", "-h"]);
    for (flag, want) in [
        ("lr", "0.001"),
        ("weight-decay", "0.00001"),
        ("lambda", "25"),
        ("mu", "25"),
        ("nu", "1"),
        ("dim", "512"),
        ("hidden", "128"),
        ("eps-ln", "0.00001"),
        ("lr-schedule", "cosine"),
        ("epochs", "50"),
        ("token-cap", "1024"),
    ] {
        assert_eq!(default_of(&pool, flag), want, "pool train --{flag}");
    }
    assert!(default_of(&pool, "batch-size").starts_with("32"));
    assert_eq!(default_of(&ok(&["fuse", "-h"]), "alpha"), "0.7");
}

#[test]
fn fit_then_score_reports_json() {
    let c = Corpus::new(12);
    let summary: Value = serde_json::from_str(&ok(&[
        "soe", "fit", "--triplets", &c.p("triplets.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("emb.csv"),
        "--holdout", "0.1",
    ]))
    .unwrap();
    assert!(summary["heldout_balanced_agreement"].as_f64().unwrap() > 0.8);
    let emb = EmbeddingSet::load(&c.path("emb.csv")).unwrap();
    assert_eq!((emb.len(), emb.dim()), (12, 4));

    let report: Value = serde_json::from_str(&ok(&[
        "metrics", "--embeddings", &c.p("emb.csv"), "--judgments", &c.p("triplets.jsonl"),
    ]))
    .unwrap();
    for key in ["balanced_agreement", "micro_agreement", "macro_f1", "kappa"] {
        assert!(report[key].as_f64().is_some(), "missing {key}");
    }
    assert_eq!(report["n_triplets"], 660);

    ok(&["metrics", "--embeddings", &c.p("emb.csv"), "--judgments", &c.p("triplets.jsonl"), "--format", "table",
        "--out", &c.p("report.txt")]);
    assert!(std::fs::read_to_string(c.path("report.txt")).unwrap().contains("kappa"));
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (Corpus::new(8), Corpus::new(8));
    for f in ["ids.txt", "latents.csv", "views.bin", "triplets.jsonl", "descriptions.jsonl"] {
        assert_eq!(std::fs::read(a.path(f)).unwrap(), std::fs::read(b.path(f)).unwrap(), "{f}");
    }
    for c in [&a, &b] {
        ok(&["soe", "fit", "--triplets", &c.p("triplets.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv"),
            "--epochs", "5", "--seed", "9"]);
    }
    assert_eq!(std::fs::read(a.path("e.csv")).unwrap(), std::fs::read(b.path("e.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let c = Corpus::new(6);
    assert_eq!(code(&["soe", "fit", "--no-such-flag"]), 1);
    assert_eq!(
        code(&["soe", "fit", "--triplets", &c.p("triplets.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv"),
            "--dim", "0"]),
        1
    );
    assert_eq!(
        code(&["soe", "fit", "--triplets", &c.p("missing.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv")]),
        2
    );
    std::fs::write(c.path("bad.jsonl"), "{\"anchor\": \"item000\"}\n").unwrap();
    assert_eq!(
        code(&["soe", "fit", "--triplets", &c.p("bad.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv")]),
        2
    );

    let server = MockServer::start(MockMode::Reject(401)).unwrap();
    let out = c.p("o.jsonl");
    assert_eq!(
        code(&["oracle", "--descriptions", &c.p("descriptions.jsonl"), "--out", &out, "--endpoint", &server.endpoint(),
            "--budget", "0.1"]),
        3
    );
    let garbage = MockServer::start(MockMode::Garbage).unwrap();
    assert_eq!(
        code(&["oracle", "--descriptions", &c.p("descriptions.jsonl"), "--out", &out, "--endpoint", &garbage.endpoint(),
            "--budget", "0.1"]),
        3
    );
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let c = Corpus::new(6);
    let base = [
        "soe", "fit", "--triplets", &c.p("triplets.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv"),
        "--epochs", "2",
    ];
    let dim = || EmbeddingSet::load(&c.path("e.csv")).unwrap().dim();
    ok(&base);
    assert_eq!(dim(), 4);

    std::fs::write(c.path("run.conf"), "# fitting\ndim = 3\nbatch_size = 64\nanchor-balanced = false\n").unwrap();
    let conf = c.p("run.conf");
    let mut with_conf = base.to_vec();
    with_conf.extend(["--config", &conf]);
    ok(&with_conf);
    assert_eq!(dim(), 3);

    with_conf.extend(["--dim", "2"]);
    ok(&with_conf);
    assert_eq!(dim(), 2);

    std::fs::write(c.path("bad.conf"), "dim = zero\n").unwrap();
    let bad = c.p("bad.conf");
    let mut with_bad = base.to_vec();
    with_bad.extend(["--config", &bad]);
    assert_eq!(code(&with_bad), 1);
}

#[test]
fn fuse_accepts_embeddings_or_distances() {
    let c = Corpus::new(10);
    ok(&["distances", "--embeddings", &c.p("latents.csv"), "--out", &c.p("d.csv"), "--metric", "cosine"]);
    let d_text = std::fs::read_to_string(c.path("d.csv")).unwrap();
    assert!(!looks_like_embedding(&d_text));
    assert!(looks_like_embedding(&std::fs::read_to_string(c.path("latents.csv")).unwrap()));
    for mode in ["uncertainty", "similarity"] {
        ok(&["fuse", "--vision", &c.p("latents.csv"), "--text", &c.p("d.csv"), "--out", &c.p("f.csv"), "--mode", mode]);
        let fused = DistanceMatrix::load(&c.path("f.csv")).unwrap();
        assert_eq!(fused.len(), 10);
        assert!(fused.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let near = ok(&["neighbors", "--input", &c.p("f.csv"), "--item", "item000", "-k", "3", "--format", "json"]);
    let v: Value = serde_json::from_str(&near).unwrap();
    assert!(v.to_string().contains("item0"));
}

#[test]
fn mock_oracle_feeds_soe() {
    let c = Corpus::new(8);
    let cache = c.p("cache");
    let run = || {
        ok(&["oracle", "--descriptions", &c.p("descriptions.jsonl"), "--out", &c.p("oracle.jsonl"), "--mock",
            "--cache-dir", &cache, "--budget", "0.5"])
    };
    run();
    let first = std::fs::read(c.path("oracle.jsonl")).unwrap();
    run();
    assert_eq!(std::fs::read(c.path("oracle.jsonl")).unwrap(), first);
    ok(&["soe", "fit", "--triplets", &c.p("oracle.jsonl"), "--items", &c.p("ids.txt"), "--out", &c.p("e.csv"),
        "--epochs", "5"]);
}

#[test]
fn small_ablation_runs() {
    let out = ok(&[
        "ablate", "--synthetic", "--n-items", "10", "--latent-dim", "2", "--dims", "1,2", "--budgets", "0.5,1",
        "--repeats", "2", "--epochs", "5", "--format", "json",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["dims"].as_array().unwrap().len(), 2);
    assert_eq!(v["budgets"][1]["agreements"].as_array().unwrap().len(), 2);
    let table = ok(&["ablate", "--synthetic", "--n-items", "8", "--dims", "2", "--budgets", "1", "--repeats", "1",
        "--epochs", "3"]);
    assert!(table.contains("embedding dim") && table.contains("100%"));
}

#[test]
fn pool_train_then_embed() {
    let c = Corpus::new(6);
    ok(&["pool", "train", "--views", &c.p("views.bin"), "--out", &c.p("head.csv"), "--dim", "6", "--hidden", "4",
        "--epochs", "2", "--batch-size", "4", "--loss-history", &c.p("loss.csv")]);
    assert_eq!(std::fs::read_to_string(c.path("loss.csv")).unwrap().lines().count(), 3);
    ok(&["embed", "--features", &c.p("views.bin"), "--head", &c.p("head.csv"), "--out", &c.p("emb.csv")]);
    let e = EmbeddingSet::load(&c.path("emb.csv")).unwrap();
    assert_eq!((e.len(), e.dim()), (6, 6));
}

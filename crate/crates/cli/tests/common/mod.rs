#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn gprompt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gprompt"))
        .args(args)
        .current_dir(dir)
        .env_remove("GPROMPT_THREADS")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str], dir: &Path) -> String {
    let out = gprompt(args, dir);
    assert!(
        out.status.success(),
        "gprompt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

/// SHA-256 of every regular file under `dir`, keyed by relative path.
pub fn checksums(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), hex);
            }
        }
    }
    out
}

pub const TINY_SYNTH: &str = r#"{"synth": {"num_nodes": 3, "topics": 2, "tokens_per_topic": 2,
    "common_tokens": 1, "vocab": 5, "hidden_dim": 4, "embed_dim": 3},
  "adapter": {"d_a": 3, "mlp_hidden": 5}}"#;

pub const SMALL_RUN: &str = r#"{"adapter": {"d_a": 16, "mlp_hidden": 32},
  "train": {"epochs": 8, "batch_pairs": 512},
  "few_shot": {"partitions": 2, "repeats": 2}}"#;

/// Full pipeline on the default synthetic bundle with a short training run.
pub fn pipeline(dir: &Path) {
    write(dir, "run.json", SMALL_RUN);
    fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
        [extra, &["--config", "run.json"][..]].concat()
    }
    ok(&with(&["gen-synth", "--out", "data"]), dir);
    ok(
        &with(&["train-adapter", "--bundle", "data/bundle.gpb", "--out", "train"]),
        dir,
    );
    ok(
        &with(&[
            "extract-features",
            "--bundle",
            "data/bundle.gpb",
            "--adapter",
            "train/adapter.gpa",
            "--out",
            "feat",
        ]),
        dir,
    );
    let feats = [
        "--features",
        "feat/features.gpf",
        "--bundle",
        "data/bundle.gpb",
        "--labels",
        "data/truth.json",
    ];
    ok(
        &with(
            &[
                &["zero-shot", "--vocab", "data/vocab_sets.json", "--out", "zs"],
                &feats[..],
            ]
            .concat(),
        ),
        dir,
    );
    ok(&with(&[&["few-shot", "--out", "fs"], &feats[..]].concat()), dir);
    ok(
        &with(&[&["interpret", "--positive-label", "2", "--out", "int"], &feats[..]].concat()),
        dir,
    );
    write(dir, "tiny.json", TINY_SYNTH);
    ok(
        &["gen-synth", "--config", "tiny.json", "--seed", "3", "--out", "tiny"],
        dir,
    );
    ok(
        &[
            "grad-check",
            "--config",
            "tiny.json",
            "--bundle",
            "tiny/bundle.gpb",
            "--out",
            "gc",
        ],
        dir,
    );
}

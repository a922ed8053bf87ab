//! Shared setup for CLI tests: golden fixture files plus a config document.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn write_fixture_with_config(dir: &Path) -> PathBuf {
    xrem_core::fixtures::write_golden_inputs(dir).expect("fixture files");
    let config = serde_json::json!({
        "corpus": {
            "reports": "reports.jsonl",
            "embeddings": "reports.emb",
            "embedding_ids": "reports.emb.ids.jsonl"
        },
        "queries": {
            "embeddings": "queries.emb",
            "embedding_ids": "queries.emb.ids.jsonl"
        },
        "scorers": {
            "itm": {"kind": "matrix", "path": "itm_scores.jsonl"},
            "nli": {"kind": "mock"},
            "pair": {"kind": "mock"}
        },
        "pipeline": {"i": 5, "k": 2, "filter": "nli"},
        "eval": {"references": "references.jsonl"},
        "humaneval": {"annotations": "annotations.jsonl"},
        "ablation": {"metric": ["itm"], "filter": ["nli"], "i": [5], "k": [2], "pt": [true]},
        "seed": 7
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

pub fn xrem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrem"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn xrem_ok(args: &[&str]) -> Output {
    let output = xrem(args);
    assert!(
        output.status.success(),
        "xrem {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

//! End-to-end CLI behavior on the golden fixture.
//!
//! Expected outputs live in `tests/fixtures/golden/`; run with `XREM_BLESS=1`
//! to regenerate them after an intentional change.

mod common;

use std::path::{Path, PathBuf};

use common::{read, write_fixture_with_config, xrem, xrem_ok};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("XREM_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted from its golden file");
}

struct Fixture {
    dir: tempfile::TempDir,
    config: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = write_fixture_with_config(dir.path())
            .to_str()
            .unwrap()
            .to_string();
        Fixture { dir, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str], out: &Path) {
        let mut full: Vec<&str> = args.to_vec();
        let out = out.to_str().unwrap();
        full.extend_from_slice(&["--config", &self.config, "--out", out]);
        xrem_ok(&full);
    }
}

#[test]
fn retrieve_matches_goldens() {
    let fixture = Fixture::new();
    let out = fixture.out("retrieve");
    fixture.run(&["retrieve"], &out);
    check_golden("composed.jsonl", &read(&out.join("composed.jsonl")));
    check_golden("trace.jsonl", &read(&out.join("trace.jsonl")));
}

#[test]
fn retrieve_output_equals_library_golden() {
    // The CLI trace must be the same bytes the library produces.
    let fixture = Fixture::new();
    let out = fixture.out("retrieve_lib");
    fixture.run(&["retrieve"], &out);
    let core_golden = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/golden/trace.jsonl");
    assert_eq!(read(&out.join("trace.jsonl")), read(&core_golden));
}

#[test]
fn mine_matches_library_golden() {
    // Same seed as the library golden: byte-identical dataset.
    let fixture = Fixture::new();
    let out = fixture.out("mine");
    fixture.run(&["mine", "--seed", "7"], &out);
    let core_golden = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/golden/dataset.jsonl");
    assert_eq!(read(&out.join("dataset.jsonl")), read(&core_golden));

    // Mining counts: 5 positives, 10 negatives.
    let lines = read(&out.join("dataset.jsonl"));
    assert_eq!(lines.lines().count(), 15);
    assert_eq!(lines.matches("\"positive\"").count(), 5);
    assert_eq!(lines.matches("\"negative\"").count(), 10);
}

#[test]
fn eval_from_run_matches_goldens_and_missing_columns_stay_empty() {
    let fixture = Fixture::new();
    let retrieve_out = fixture.out("run");
    fixture.run(&["retrieve"], &retrieve_out);
    let composed = retrieve_out.join("composed.jsonl");
    let trace = retrieve_out.join("trace.jsonl");
    let eval_out = fixture.out("eval");
    fixture.run(
        &[
            "eval",
            "--composed",
            composed.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ],
        &eval_out,
    );
    let summary = read(&eval_out.join("summary.csv"));
    check_golden("summary.csv", &summary);
    // Without external scores only the locally computed metrics have means.
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "metric,mean,n");
    assert_eq!(lines[1], "radcliq,,0");
    assert_eq!(lines[2], "radgraph_f1,,0");
    assert!(lines[3].starts_with("chexbert,0."));
    assert_eq!(lines[4], "bertscore,,0");
    assert!(lines[5].starts_with("bleu2,0."));
    check_golden("per_pair.jsonl", &read(&eval_out.join("per_pair.jsonl")));
}

#[test]
fn eval_with_external_scores_fills_composite() {
    let fixture = Fixture::new();
    let retrieve_out = fixture.out("run");
    fixture.run(&["retrieve"], &retrieve_out);
    let external = fixture.dir.path().join("external.jsonl");
    std::fs::write(
        &external,
        "{\"study_id\":\"q1\",\"bertscore\":0.8,\"radgraph_f1\":0.5}\n{\"study_id\":\"q2\",\"bertscore\":0.6}\n",
    )
    .unwrap();
    let eval_out = fixture.out("eval_ext");
    fixture.run(
        &[
            "eval",
            "--composed",
            retrieve_out.join("composed.jsonl").to_str().unwrap(),
            "--trace",
            retrieve_out.join("trace.jsonl").to_str().unwrap(),
            "--external-scores",
            external.to_str().unwrap(),
        ],
        &eval_out,
    );
    let summary = read(&eval_out.join("summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    // radcliq over the one pair with an ingested F1; bertscore over two.
    assert!(lines[1].starts_with("radcliq,"));
    assert!(lines[1].ends_with(",1"));
    assert!(lines[2].ends_with(",1"));
    assert!(lines[4].ends_with(",2"));
}

#[test]
fn eval_explicit_pairs_mode() {
    let fixture = Fixture::new();
    let pairs = fixture.dir.path().join("pairs.jsonl");
    let line = serde_json::json!({
        "study_id": "s1",
        "candidate": "no acute process",
        "reference": "no acute cardiopulmonary process",
        "candidate_labels": [1,0,0,0,0,0,0,0,0,0,0,0,0,0],
        "reference_labels": [1,1,0,0,0,0,0,0,0,0,0,0,0,0]
    });
    std::fs::write(&pairs, format!("{line}\n")).unwrap();
    let eval_out = fixture.out("eval_pairs");
    fixture.run(&["eval", "--pairs", pairs.to_str().unwrap()], &eval_out);
    let summary = read(&eval_out.join("summary.csv"));
    // chexbert = 1/sqrt(2), bleu2 = the hand fixture value 0.5067.
    assert!(summary.contains("chexbert,0.7071067811865475,1"));
    assert!(summary.contains("bleu2,0.5066641486392106,1"));
}

#[test]
fn human_eval_matches_goldens() {
    let fixture = Fixture::new();
    let out = fixture.out("humaneval");
    fixture.run(&["human-eval"], &out);
    check_golden("ecdf.csv", &read(&out.join("ecdf.csv")));
    check_golden("paired.csv", &read(&out.join("paired.csv")));
}

#[test]
fn human_eval_assign_is_seeded() {
    let fixture = Fixture::new();
    let ids = fixture.dir.path().join("studies.txt");
    std::fs::write(&ids, "s1\ns2\ns3\ns4\ns5\n").unwrap();
    let out_a = fixture.out("assign_a");
    fixture.run(&["human-eval", "--assign", ids.to_str().unwrap()], &out_a);
    let out_b = fixture.out("assign_b");
    fixture.run(&["human-eval", "--assign", ids.to_str().unwrap()], &out_b);
    let a = read(&out_a.join("assignments.jsonl"));
    assert_eq!(a, read(&out_b.join("assignments.jsonl")));
    assert!(a.starts_with("{\"seed\":7}\n"));
    assert_eq!(a.lines().count(), 6);
}

#[test]
fn ablate_matches_golden_and_equals_standalone_run() {
    let fixture = Fixture::new();
    let ablate_out = fixture.out("ablate");
    fixture.run(&["ablate"], &ablate_out);
    let ablation = read(&ablate_out.join("ablation.csv"));
    check_golden("ablation.csv", &ablation);

    // Cell equivalence: the single grid cell must reproduce, byte for byte,
    // the metric means of a standalone retrieve + eval run.
    let retrieve_out = fixture.out("standalone");
    fixture.run(&["retrieve"], &retrieve_out);
    let eval_out = fixture.out("standalone_eval");
    fixture.run(
        &[
            "eval",
            "--composed",
            retrieve_out.join("composed.jsonl").to_str().unwrap(),
            "--trace",
            retrieve_out.join("trace.jsonl").to_str().unwrap(),
        ],
        &eval_out,
    );
    let summary = read(&eval_out.join("summary.csv"));
    let mean_of = |metric: &str| -> String {
        summary
            .lines()
            .find(|l| l.starts_with(metric))
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .to_string()
    };
    let row = ablation.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(&cells[..5], &["itm", "nli", "5", "2", "true"]);
    assert_eq!(cells[5], mean_of("radcliq"));
    assert_eq!(cells[7], mean_of("chexbert"));
    assert_eq!(cells[9], mean_of("bleu2"));
}

#[test]
fn ablate_grid_rows_are_lexicographic() {
    let fixture = Fixture::new();
    // Rewrite the config with a 2x2 grid over metric and k.
    let config_text = read(Path::new(&fixture.config));
    let mut config: serde_json::Value = serde_json::from_str(&config_text).unwrap();
    config["ablation"] = serde_json::json!({
        "metric": ["itm", "cosine"],
        "filter": ["nli"],
        "i": [5],
        "k": [2, 1],
        "pt": [true]
    });
    let grid_config = fixture.dir.path().join("grid.json");
    std::fs::write(&grid_config, config.to_string()).unwrap();
    let out = fixture.out("grid");
    xrem_ok(&[
        "ablate",
        "--config",
        grid_config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("ablation.csv"));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(5).collect())
        .collect();
    assert_eq!(
        rows,
        vec![
            vec!["cosine", "nli", "5", "1", "true"],
            vec!["cosine", "nli", "5", "2", "true"],
            vec!["itm", "nli", "5", "1", "true"],
            vec!["itm", "nli", "5", "2", "true"],
        ]
    );
    // Rows with different k differ in the k column and may differ in metrics;
    // every cell ran (no empty metric rows for this valid grid).
    for line in csv.lines().skip(1) {
        assert!(!line.ends_with(",,,,,"));
    }
}

#[test]
fn filter_none_leaves_verdicts_empty() {
    let fixture = Fixture::new();
    let out = fixture.out("none");
    fixture.run(&["retrieve", "--filter", "none"], &out);
    let trace = read(&out.join("trace.jsonl"));
    for line in trace.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(value["verdicts"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn flag_overrides_config_per_knob() {
    let fixture = Fixture::new();
    // Config says k = 2; the flag narrows it to 1.
    let out = fixture.out("k1");
    fixture.run(&["retrieve", "--k", "1"], &out);
    let composed = read(&out.join("composed.jsonl"));
    let first: serde_json::Value = serde_json::from_str(composed.lines().next().unwrap()).unwrap();
    assert_eq!(first["report"], "no acute cardiopulmonary process");

    // Config says filter = nli; the flag switches the variant.
    let out = fixture.out("bs");
    fixture.run(&["retrieve", "--filter", "bertscore"], &out);
    let trace = read(&out.join("trace.jsonl"));
    assert!(trace.contains("\"below_threshold\"") || trace.contains("\"at_or_above_threshold\""));

    // Config says seed = 7; the flag changes the mining draw.
    let out_cfg = fixture.out("seed_cfg");
    fixture.run(&["mine"], &out_cfg);
    let out_flag = fixture.out("seed_flag");
    fixture.run(&["mine", "--seed", "99"], &out_flag);
    assert_ne!(
        read(&out_cfg.join("dataset.jsonl")),
        read(&out_flag.join("dataset.jsonl"))
    );
}

#[test]
fn missing_input_names_the_path() {
    let fixture = Fixture::new();
    std::fs::remove_file(fixture.dir.path().join("reports.emb")).unwrap();
    let out = fixture.out("broken");
    let output = xrem(&[
        "retrieve",
        "--config",
        &fixture.config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("reports.emb"), "stderr was: {stderr}");
    assert!(stderr.starts_with("error (data):"), "stderr was: {stderr}");
}

#[test]
fn unknown_filter_is_a_config_error() {
    let fixture = Fixture::new();
    let output = xrem(&[
        "retrieve",
        "--config",
        &fixture.config,
        "--filter",
        "fancy",
    ]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error (config):"));
}

#[test]
fn reruns_are_idempotent() {
    let fixture = Fixture::new();
    let out = fixture.out("idem");
    fixture.run(&["mine"], &out);
    let first = read(&out.join("dataset.jsonl"));
    fixture.run(&["mine"], &out);
    assert_eq!(first, read(&out.join("dataset.jsonl")));

    fixture.run(&["human-eval"], &out);
    let ecdf = read(&out.join("ecdf.csv"));
    fixture.run(&["human-eval"], &out);
    assert_eq!(ecdf, read(&out.join("ecdf.csv")));
}

//! Reference scorer server speaking the line-delimited JSON protocol.
//!
//! Reads one request per line from stdin, writes one response per line to
//! stdout in request order, and exits cleanly on end-of-input. Scores come
//! from the deterministic mock scorer, so a client paired with the same seed
//! can verify every response. Failure-injection flags let tests drive the
//! client's error paths:
//!
//!   --seed N          mock scorer seed (default 0)
//!   --die-after N     exit(1) instead of answering the (N+1)-th request
//!   --force-label S   answer every nli request with the given label verbatim
//!   --force-score S   answer every itm/pair entry with S (number if it
//!                     parses, otherwise a JSON string)
//!   --garbage         answer every request with a non-JSON line

use std::io::{BufRead, Write};
use std::process::exit;

use xrem_core::scoring::{
    ItmResponse, MockScorer, NliResponse, PairResponse, Scorer, WireRequest, WireScore,
};

struct Options {
    seed: u64,
    die_after: Option<u64>,
    force_label: Option<String>,
    force_score: Option<String>,
    garbage: bool,
}

fn parse_args() -> Options {
    let mut options = Options {
        seed: 0,
        die_after: None,
        force_label: None,
        force_score: None,
        garbage: false,
    };
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let mut value = |name: &str| {
            args.next().unwrap_or_else(|| {
                eprintln!("missing value for {name}");
                exit(2);
            })
        };
        match arg.as_str() {
            "--seed" => {
                options.seed = value("--seed").parse().unwrap_or_else(|e| {
                    eprintln!("bad --seed: {e}");
                    exit(2);
                })
            }
            "--die-after" => {
                options.die_after = Some(value("--die-after").parse().unwrap_or_else(|e| {
                    eprintln!("bad --die-after: {e}");
                    exit(2);
                }))
            }
            "--force-label" => options.force_label = Some(value("--force-label")),
            "--force-score" => options.force_score = Some(value("--force-score")),
            "--garbage" => options.garbage = true,
            "--help" | "-h" => {
                eprintln!("usage: xrem-mock-scorer [--seed N] [--die-after N] [--force-label S] [--force-score S] [--garbage]");
                exit(0);
            }
            other => {
                eprintln!("unknown flag {other}");
                exit(2);
            }
        }
    }
    options
}

fn wire_score(options: &Options, fallback: f64) -> WireScore {
    match &options.force_score {
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => WireScore::Number(v),
            _ => WireScore::Text(s.clone()),
        },
        None => WireScore::from_f64(fallback),
    }
}

fn main() {
    let options = parse_args();
    let mock = MockScorer::new(options.seed);
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let mut served: u64 = 0;

    for line in stdin.lock().lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                eprintln!("read error: {e}");
                exit(1);
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        if options.die_after == Some(served) {
            exit(1);
        }
        if options.garbage {
            writeln!(stdout, "this is not json").and_then(|_| stdout.flush()).ok();
            served += 1;
            continue;
        }
        let request: WireRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("bad request: {e}");
                exit(1);
            }
        };
        let response = match request {
            WireRequest::Itm {
                query_id,
                report_ids,
            } => {
                let ids: Vec<&str> = report_ids.iter().map(String::as_str).collect();
                let scores = mock
                    .itm_scores(&query_id, &ids)
                    .expect("mock scores are always finite");
                serde_json::to_string(&ItmResponse {
                    scores: scores
                        .iter()
                        .map(|s| wire_score(&options, s.value()))
                        .collect(),
                })
            }
            WireRequest::Nli {
                premise,
                hypothesis,
            } => {
                let label = match &options.force_label {
                    Some(label) => label.clone(),
                    None => mock
                        .nli_classify(&premise, &hypothesis)
                        .expect("mock nli is total")
                        .as_str()
                        .to_string(),
                };
                serde_json::to_string(&NliResponse { label })
            }
            WireRequest::Pair { a, b } => {
                let score = mock.text_pair_score(&a, &b).expect("mock pair is total");
                serde_json::to_string(&PairResponse {
                    score: wire_score(&options, score),
                })
            }
        };
        let response = response.expect("response serializes");
        if writeln!(stdout, "{response}").and_then(|_| stdout.flush()).is_err() {
            // Client went away; nothing left to serve.
            exit(0);
        }
        served += 1;
    }
}

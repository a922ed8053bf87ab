//! Property tests for the module invariants.

use proptest::prelude::*;

use xrem_core::corpus::{
    normalize, CorpusBundle, EmbeddingMatrix, LabelVector, Report, Section, LABEL_CLASSES,
};
use xrem_core::humaneval::{aes, mes, Annotation, Measure, ReportSource};
use xrem_core::metrics::bleu2;
use xrem_core::mining::manhattan;
use xrem_core::retrieval::cosine_top_i;
use xrem_core::scoring::{MockScorer, Scorer};

fn matrix_from(rows: Vec<Vec<f32>>) -> EmbeddingMatrix {
    let dim = rows[0].len();
    let ids = (0..rows.len()).map(|n| format!("r{n:03}")).collect();
    EmbeddingMatrix::new(ids, dim, rows.into_iter().flatten().collect()).unwrap()
}

fn nonzero_rows(dim: usize, max_rows: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(
        prop::collection::vec(-8i8..=8i8, dim)
            .prop_filter("nonzero row", |row| row.iter().any(|&x| x != 0))
            .prop_map(|row| row.into_iter().map(|x| x as f32 * 0.25).collect()),
        2..=max_rows,
    )
}

fn label_strategy() -> impl Strategy<Value = LabelVector> {
    prop::collection::vec(0u8..=3, LABEL_CLASSES)
        .prop_map(|v| LabelVector::try_from(v).unwrap())
}

fn words() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-z]{1,7}( [a-z]{1,7}){0,9}").unwrap()
}

proptest! {
    #[test]
    fn normalize_idempotent_and_unit(rows in nonzero_rows(4, 12)) {
        let m = matrix_from(rows);
        let once = normalize(&m).unwrap();
        let twice = normalize(&once).unwrap();
        prop_assert_eq!(&once, &twice);
        for row in 0..once.len() {
            let norm = xrem_core::corpus::l2_norm(once.row(row));
            prop_assert!((norm - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cosine_order_invariant_under_power_of_two_scaling(
        rows in nonzero_rows(4, 12),
        query in prop::collection::vec(-8i8..=8i8, 4)
            .prop_filter("nonzero query", |q| q.iter().any(|&x| x != 0)),
        exponents in prop::collection::vec(-3i32..=3, 12),
        query_exp in -3i32..=3,
    ) {
        // Scaling by powers of two is exact in floating point, so the ranked
        // id sequence must be bitwise identical.
        let query: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let scaled_query: Vec<f32> = query.iter().map(|&x| x * 2f32.powi(query_exp)).collect();
        let scaled_rows: Vec<Vec<f32>> = rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let factor = 2f32.powi(exponents[n % exponents.len()]);
                row.iter().map(|&x| x * factor).collect()
            })
            .collect();
        let m = matrix_from(rows);
        let scaled = matrix_from(scaled_rows);
        let i = m.len();
        let base: Vec<String> = cosine_top_i(&query, &m, i)
            .unwrap().into_iter().map(|c| c.report_id).collect();
        let varied: Vec<String> = cosine_top_i(&scaled_query, &scaled, i)
            .unwrap().into_iter().map(|c| c.report_id).collect();
        prop_assert_eq!(base, varied);
    }

    #[test]
    fn cosine_argmax_invariant_under_arbitrary_positive_scaling(
        rows in nonzero_rows(4, 10),
        query in prop::collection::vec(-8i8..=8i8, 4)
            .prop_filter("nonzero query", |q| q.iter().any(|&x| x != 0)),
        factors in prop::collection::vec(0.001f64..1000.0, 10),
    ) {
        let query: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let m = matrix_from(rows.clone());
        let top = cosine_top_i(&query, &m, 2).unwrap();
        // Near-ties may legitimately reorder under inexact scaling.
        prop_assume!(top.len() >= 2 && top[0].cosine - top[1].cosine > 1e-3);
        let scaled_rows: Vec<Vec<f32>> = rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let factor = factors[n % factors.len()] as f32;
                row.iter().map(|&x| x * factor).collect()
            })
            .collect();
        let scaled = matrix_from(scaled_rows);
        let scaled_top = cosine_top_i(&query, &scaled, 1).unwrap();
        prop_assert_eq!(&top[0].report_id, &scaled_top[0].report_id);
    }

    #[test]
    fn validate_is_empty_iff_bundle_accepted(n in 2usize..6, defect in 0u8..6) {
        let dim = 2;
        let mut reports: Vec<Report> = (0..n)
            .map(|i| Report {
                id: format!("r{i}"),
                text: format!("text {i}"),
                labels: None,
                section: Section::Impression,
            })
            .collect();
        let mut ids: Vec<String> = reports.iter().map(|r| r.id.clone()).collect();
        let mut rows: Vec<f32> = (0..n * dim).map(|x| x as f32 + 1.0).collect();
        match defect {
            1 => reports[1].id = reports[0].id.clone(),
            2 => reports[0].text = "   ".into(),
            3 => {
                ids.push("ghost".into());
                rows.extend([1.0, 0.0]);
            }
            4 => {
                ids.pop();
                rows.truncate(rows.len() - dim);
            }
            5 => {
                rows[0] = 0.0;
                rows[1] = 0.0;
            }
            _ => {}
        }
        let matrix = EmbeddingMatrix { ids, dim, rows, normalized: false };
        let violations = xrem_core::corpus::validate(&reports, &matrix);
        let accepted = CorpusBundle::new(reports, matrix).is_ok();
        prop_assert_eq!(violations.is_empty(), accepted);
        prop_assert_eq!(violations.is_empty(), defect == 0);
    }

    #[test]
    fn manhattan_is_a_metric(a in label_strategy(), b in label_strategy(), c in label_strategy()) {
        prop_assert_eq!(manhattan(&a, &b), manhattan(&b, &a));
        prop_assert!(manhattan(&a, &c) <= manhattan(&a, &b) + manhattan(&b, &c));
        prop_assert_eq!(manhattan(&a, &a), 0);
        prop_assert_eq!(manhattan(&a, &b) == 0, a.presence() == b.presence());
    }

    #[test]
    fn bleu2_bounded_and_reflexive(cand in words(), reference in words()) {
        let score = bleu2(&cand, &reference);
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert_eq!(bleu2(&cand, &cand), 1.0);
    }

    #[test]
    fn bleu2_zero_without_bigram_overlap(
        a in proptest::string::string_regex("[ab]{1,4}( [ab]{1,4}){1,5}").unwrap(),
        b in proptest::string::string_regex("[xy]{1,4}( [xy]{1,4}){1,5}").unwrap(),
    ) {
        // Disjoint alphabets: no shared unigram or bigram.
        prop_assert_eq!(bleu2(&a, &b), 0.0);
    }

    #[test]
    fn mock_nli_depends_only_on_token_sets(
        premise in words(),
        hypothesis in words(),
        separators in prop::collection::vec(1usize..=3, 16),
    ) {
        let mock = MockScorer::default();
        let base = mock.nli_classify(&premise, &hypothesis).unwrap();

        // Repeat tokens, shuffle-ish by reversal, and vary whitespace runs.
        let mangle = |text: &str| {
            let mut tokens: Vec<&str> = text.split_whitespace().collect();
            tokens.reverse();
            let mut out = String::new();
            for (n, token) in tokens.iter().enumerate() {
                out.push_str(token);
                out.push_str(&" ".repeat(separators[n % separators.len()]));
                out.push_str(token);
                out.push(' ');
            }
            out
        };
        let mangled = mock.nli_classify(&mangle(&premise), &mangle(&hypothesis)).unwrap();
        prop_assert_eq!(base, mangled);
    }

    #[test]
    fn aes_never_exceeds_mes(severities in prop::collection::vec(0u8..=4, 1..12)) {
        let a = Annotation {
            study_id: "s".into(),
            source: ReportSource::Xrem,
            annotator_id: "a".into(),
            severities,
        };
        prop_assert!(aes(&a) <= mes(&a) as f64);
        prop_assert!(aes(&a) >= 0.0);
    }

    #[test]
    fn ecdf_rows_are_monotone(
        rows in prop::collection::vec(prop::collection::vec(0u8..=4, 1..6), 1..20),
        pick_aes in any::<bool>(),
    ) {
        let annotations: Vec<Annotation> = rows
            .into_iter()
            .enumerate()
            .map(|(n, severities)| Annotation {
                study_id: format!("s{n}"),
                source: ReportSource::Xrem,
                annotator_id: "a".into(),
                severities,
            })
            .collect();
        let measure = if pick_aes { Measure::Aes } else { Measure::Mes };
        let row = xrem_core::humaneval::ecdf_row(&annotations, measure).unwrap();
        for pair in row.windows(2) {
            prop_assert!(pair[0] <= pair[1]);
        }
        for p in row {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        // Every severity is at most 4, so the CDF closes at 1 there.
        let at_four = annotations
            .iter()
            .filter(|a| match measure {
                Measure::Mes => mes(a) as f64 <= 4.0,
                Measure::Aes => aes(a) <= 4.0,
            })
            .count() as f64
            / annotations.len() as f64;
        prop_assert_eq!(at_four, 1.0);
    }
}

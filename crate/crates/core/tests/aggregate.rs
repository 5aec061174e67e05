mod common;

use dcsent::aggregate::{self, predict_label, AggregationStrategy};
use dcsent::scorer::{load_score_matrices, load_score_matrices_with, RowPolicy, ScoreSource};
use dcsent::{ScoreMatrix, Sentiment, SentimentDistribution};
use proptest::prelude::*;

fn table(name: &str) -> ScoreMatrix {
    load_score_matrices(&common::fixture(name)).unwrap().remove("headphones").unwrap()
}

fn close(a: &[f64; 3], b: [f64; 3], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn clause_average_is_neutral() {
    let d = aggregate::average(&table("headphones_clauses.jsonl"));
    assert!(close(d.as_array(), [0.2139, 0.5658, 0.2203], 1e-3), "{d:?}");
    assert_eq!(predict_label(&d), Sentiment::Neutral);
}

#[test]
fn clause_awon_is_positive() {
    let a = aggregate::awon(&table("headphones_clauses.jsonl"), 0.9);
    assert_eq!(a.rows_used, 6);
    assert!(!a.fallback);
    assert!(close(a.distribution.as_array(), [0.4963, 0.0037, 0.5000], 1e-3), "{a:?}");
    assert_eq!(a.label, Sentiment::Positive);
}

#[test]
fn clause_frozen_means() {
    // Independently computed from the renormalized table rows.
    let d = aggregate::average(&table("headphones_clauses.jsonl"));
    assert!(close(d.as_array(), [0.21390007, 0.56583562, 0.22026431], 1e-8), "{d:?}");
    let a = aggregate::awon(&table("headphones_clauses.jsonl"), 0.9);
    assert!(close(a.distribution.as_array(), [0.49626667, 0.00371667, 0.50001667], 1e-8), "{a:?}");
}

#[test]
fn aspect_rows_are_truncated_but_load() {
    let path = common::fixture("headphones_aspects.jsonl");
    let (m, report) = load_score_matrices_with(&path, RowPolicy::AcceptTruncated).unwrap();
    assert_eq!(report.rows, 19);
    assert_eq!(report.truncated_rows, 19);
    assert!(load_score_matrices_with(&path, RowPolicy::Strict).is_err());
    let first = m["headphones"].distributions().next().unwrap();
    assert!(close(first, [0.10353771, 0.102604, 0.79385828], 1e-8));
    assert_eq!(m["headphones"].source, ScoreSource::Aspect);
    assert_eq!(predict_label(&aggregate::average(&m["headphones"])), Sentiment::Positive);
}

fn matrix_strategy() -> impl Strategy<Value = ScoreMatrix> {
    prop::collection::vec([0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0], 1..30).prop_filter_map("zero row", |rows| {
        let dists: Option<Vec<_>> = rows.iter().map(|r| SentimentDistribution::from_weights(*r).ok()).collect();
        ScoreMatrix::from_distributions("m", ScoreSource::External, dists?).ok()
    })
}

proptest! {
    #[test]
    fn awon_at_one_equals_average(m in matrix_strategy()) {
        let a = aggregate::awon(&m, 1.0);
        prop_assert_eq!(a.distribution, aggregate::average(&m));
        prop_assert_eq!(a.rows_used, m.len());
    }

    #[test]
    fn outputs_are_distributions(m in matrix_strategy(), t in 0.01f64..1.0) {
        for d in [aggregate::average(&m), aggregate::awon(&m, t).distribution] {
            let p = d.as_array();
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_invariant(m in matrix_strategy(), t in 0.01f64..1.0) {
        let mut rows: Vec<_> = m.rows().to_vec();
        rows.reverse();
        let m2 = ScoreMatrix::new("m", ScoreSource::External, rows).unwrap();
        prop_assert_eq!(aggregate::average(&m), aggregate::average(&m2));
        prop_assert_eq!(aggregate::awon(&m, t), aggregate::awon(&m2, t));
    }

    #[test]
    fn awon_never_keeps_a_row_above_threshold(m in matrix_strategy(), t in 0.01f64..1.0) {
        let a = aggregate::awon(&m, t);
        let eligible = m.distributions().filter(|r| r[1] <= t).count();
        if eligible == 0 {
            prop_assert!(a.fallback);
        } else {
            prop_assert_eq!(a.rows_used, eligible);
        }
    }
}

#[test]
fn strategy_names() {
    assert_eq!(AggregationStrategy::Average.name(), "average");
    assert_eq!(AggregationStrategy::awon(0.9).unwrap().name(), "awon");
}

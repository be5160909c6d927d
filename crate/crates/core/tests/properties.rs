use std::collections::HashSet;

use pairforge::contrastive::{batch_loss, ContrastiveParams, Label, PairExample, ScoreMode};
use pairforge::corpus::{
    read_embedding_corpus, read_eval_queries, read_pairs, read_qa_records, read_text_records,
    write_embedding_corpus, write_eval_queries, write_pairs, write_qa_records, write_text_records,
    Corpus, EmbeddingRecord, EvalQuery, QaItem, QaRecord, TextRecord, TrainingPair,
};
use pairforge::eval::{evaluate, EvalInput};
use pairforge::rag::{build_pairs, validate_record, OverlapConfig, PairAssemblyConfig};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.'\"\\\\é漢-]{1,24}"
}

fn unique_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("id-{i}")).collect()
}

fn embedding_records() -> impl Strategy<Value = Vec<EmbeddingRecord>> {
    (1usize..6, 0usize..12).prop_flat_map(|(dim, n)| {
        prop::collection::vec(
            (
                text(),
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, dim),
            ),
            n,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .zip(unique_ids(12))
                .map(|((text, vector), id)| EmbeddingRecord { id, text, vector })
                .collect()
        })
    })
}

fn qa_records() -> impl Strategy<Value = Vec<QaRecord>> {
    prop::collection::vec(
        (
            text(),
            prop::option::of(text()),
            prop::collection::vec((text(), text()), 0..4),
        )
            .prop_map(|(paragraph, url, items)| QaRecord {
                paragraph,
                url,
                qa_items: items
                    .into_iter()
                    .map(|(question, answer)| QaItem { question, answer })
                    .collect(),
            }),
        0..6,
    )
}

fn training_pairs() -> impl Strategy<Value = Vec<TrainingPair>> {
    prop::collection::vec(
        (
            text(),
            prop::collection::vec(text(), 1..4),
            prop::collection::vec(text(), 1..4),
        )
            .prop_map(|(query, pos, neg)| TrainingPair {
                query,
                positive_pairs: pos.iter().map(|p| format!("+{p}")).collect(),
                negative_pairs: neg.iter().map(|n| format!("-{n}")).collect(),
            }),
        0..6,
    )
}

/// Writes with `write`, reads back with `read`, and checks both equality
/// and byte-stable rewriting.
fn round_trip<T: PartialEq + std::fmt::Debug>(
    items: &[T],
    write: impl Fn(&std::path::Path, &[T]),
    read: impl Fn(&std::path::Path) -> Vec<T>,
) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write(&a, items);
    let back = read(&a);
    prop_assert_eq!(back.as_slice(), items);
    write(&b, &back);
    prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_records_round_trip(records in embedding_records()) {
        round_trip(
            &records,
            |p, r| write_embedding_corpus(p, r).unwrap(),
            |p| read_embedding_corpus(p).unwrap().into_records(),
        )?;
    }

    #[test]
    fn qa_records_round_trip(records in qa_records()) {
        round_trip(&records, |p, r| write_qa_records(p, r).unwrap(), |p| read_qa_records(p).unwrap())?;
    }

    #[test]
    fn training_pairs_round_trip(pairs in training_pairs()) {
        round_trip(&pairs, |p, r| write_pairs(p, r).unwrap(), |p| read_pairs(p).unwrap())?;
    }

    #[test]
    fn text_and_eval_records_round_trip(texts in prop::collection::vec((text(), text()), 0..8)) {
        let records: Vec<TextRecord> = texts
            .iter()
            .zip(unique_ids(8))
            .map(|((t, _), id)| TextRecord { id, text: t.clone() })
            .collect();
        round_trip(&records, |p, r| write_text_records(p, r).unwrap(), |p| read_text_records(p).unwrap())?;
        let queries: Vec<EvalQuery> = texts
            .into_iter()
            .map(|(a, b)| EvalQuery { query_id: a.clone(), query_text: b, relevant_id: a })
            .collect();
        round_trip(&queries, |p, r| write_eval_queries(p, r).unwrap(), |p| read_eval_queries(p).unwrap())?;
    }
}

/// Rank of each query's relevant document by direct sorting.
/// Exact ranking for integer-valued vectors: cosines are compared by
/// cross-multiplying sign(dot)·dot² against the other squared norm.
fn oracle_ranks(inputs: &[EvalInput], docs: &[EmbeddingRecord], mode: ScoreMode) -> Vec<usize> {
    let ints = |v: &[f64]| v.iter().map(|&x| x as i128).collect::<Vec<i128>>();
    let dot = |a: &[i128], b: &[i128]| a.iter().zip(b).map(|(x, y)| x * y).sum::<i128>();
    inputs
        .iter()
        .map(|q| {
            let qv = ints(&q.vector);
            // (numerator, denominator) of the ranking key; smaller ranks first.
            let mut order: Vec<((i128, i128), &str)> = docs
                .iter()
                .map(|d| {
                    let dv = ints(&d.vector);
                    let key = match mode {
                        ScoreMode::Cosine => {
                            let p = dot(&qv, &dv);
                            (-p * p.abs(), dot(&dv, &dv))
                        }
                        ScoreMode::Euclidean => {
                            let diff: Vec<i128> = qv.iter().zip(&dv).map(|(a, b)| a - b).collect();
                            (dot(&diff, &diff), 1)
                        }
                    };
                    (key, d.id.as_str())
                })
                .collect();
            order.sort_by(|((an, ad), ai), ((bn, bd), bi)| {
                (an * bd).cmp(&(bn * ad)).then(ai.cmp(bi))
            });
            1 + order
                .iter()
                .position(|(_, id)| *id == q.relevant_id)
                .unwrap()
        })
        .collect()
}

fn grid_instance() -> impl Strategy<Value = (Vec<EmbeddingRecord>, Vec<EvalInput>)> {
    (2usize..4, 2usize..16).prop_flat_map(|(dim, n)| {
        let point = prop::collection::vec(-2i32..3, dim)
            .prop_map(|v| v.into_iter().map(f64::from).collect::<Vec<f64>>())
            .prop_filter("nonzero", |v| v.iter().any(|x| *x != 0.0));
        (
            prop::collection::vec(point.clone(), n),
            prop::collection::vec((point, 0..n), 1..10),
        )
            .prop_map(|(docs, queries)| {
                let docs: Vec<EmbeddingRecord> = docs
                    .into_iter()
                    .enumerate()
                    .map(|(i, vector)| EmbeddingRecord {
                        id: format!("d{i:02}"),
                        text: format!("d{i}"),
                        vector,
                    })
                    .collect();
                let inputs = queries
                    .into_iter()
                    .enumerate()
                    .map(|(i, (vector, rel))| EvalInput {
                        query_id: format!("q{i}"),
                        vector,
                        relevant_id: docs[rel].id.clone(),
                    })
                    .collect();
                (docs, inputs)
            })
    })
}

fn transform(
    docs: &[EmbeddingRecord],
    inputs: &[EvalInput],
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> (Vec<EmbeddingRecord>, Vec<EvalInput>) {
    (
        docs.iter()
            .map(|d| EmbeddingRecord {
                vector: f(&d.vector),
                ..d.clone()
            })
            .collect(),
        inputs
            .iter()
            .map(|q| EvalInput {
                vector: f(&q.vector),
                ..q.clone()
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eval_matches_oracle_with_ties((docs, inputs) in grid_instance(), cosine in any::<bool>()) {
        let mode = if cosine { ScoreMode::Cosine } else { ScoreMode::Euclidean };
        let corpus = Corpus::new(docs.clone()).unwrap();
        let ks: Vec<usize> = (1..=docs.len()).collect();
        let ev = evaluate("grid", &inputs, &corpus, &ks, mode).unwrap();
        let ranks: Vec<usize> = ev.ranks.iter().map(|r| r.rank_of_relevant).collect();
        prop_assert_eq!(&ranks, &oracle_ranks(&inputs, &docs, mode));
        let recalls: Vec<f64> = ev.report.recall_at.values().copied().collect();
        prop_assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(recalls[recalls.len() - 1], 100.0);
    }

    #[test]
    fn eval_invariant_under_scaling_and_signed_permutation(
        (docs, inputs) in grid_instance(),
        cosine in any::<bool>(),
        exp in -8i32..8,
        shift in 0usize..4,
        signs in prop::collection::vec(any::<bool>(), 4),
    ) {
        let mode = if cosine { ScoreMode::Cosine } else { ScoreMode::Euclidean };
        let ks: Vec<usize> = (1..=docs.len()).collect();
        let base = evaluate("t", &inputs, &Corpus::new(docs.clone()).unwrap(), &ks, mode).unwrap();

        let c = 2f64.powi(exp);
        let (sd, si) = transform(&docs, &inputs, |v| v.iter().map(|x| x * c).collect());
        let scaled = evaluate("t", &si, &Corpus::new(sd).unwrap(), &ks, mode).unwrap();
        prop_assert_eq!(&scaled.ranks, &base.ranks);

        let rotate = |v: &[f64]| {
            let n = v.len();
            (0..n).map(|i| if signs[i] { -v[(i + shift) % n] } else { v[(i + shift) % n] }).collect()
        };
        let (rd, ri) = transform(&docs, &inputs, rotate);
        let rotated = evaluate("t", &ri, &Corpus::new(rd).unwrap(), &ks, mode).unwrap();
        prop_assert_eq!(&rotated.ranks, &base.ranks);
        prop_assert_eq!(&rotated.report.recall_at, &base.report.recall_at);
    }

    #[test]
    fn zero_loss_iff_all_pairs_satisfied(
        vectors in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 4), prop::collection::vec(-3.0f64..3.0, 4), any::<bool>(), any::<bool>()), 1..12),
        alpha in 0.05f64..0.95,
    ) {
        let pairs: Vec<PairExample> = vectors
            .into_iter()
            .filter(|(a, b, _, _)| a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0))
            .map(|(anchor, other, positive, copy)| PairExample {
                other: if positive && copy { anchor.clone() } else { other },
                anchor,
                label: Label::from(positive),
            })
            .collect();
        prop_assume!(!pairs.is_empty());
        let params = ContrastiveParams { alpha, score_mode: ScoreMode::Cosine, ..Default::default() };
        let batch = batch_loss(&pairs, &params).unwrap();
        let satisfied = batch.scores.iter().all(|s| match s.label {
            Label::Positive => s.score == 1.0,
            Label::Negative => s.score <= alpha,
        });
        prop_assert_eq!(batch.mean_loss == 0.0, satisfied);
    }

    #[test]
    fn loss_non_increasing_in_margin(
        vectors in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), prop::collection::vec(-3.0f64..3.0, 3)), 1..10),
        a1 in 0.0f64..1.0,
        a2 in 0.0f64..1.0,
        cosine in any::<bool>(),
    ) {
        let pairs: Vec<PairExample> = vectors
            .into_iter()
            .filter(|(a, b)| a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0))
            .map(|(anchor, other)| PairExample { anchor, other, label: Label::Negative })
            .collect();
        prop_assume!(!pairs.is_empty());
        let mode = if cosine { ScoreMode::Cosine } else { ScoreMode::Euclidean };
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        let loss = |alpha| batch_loss(&pairs, &ContrastiveParams { alpha, score_mode: mode, ..Default::default() }).unwrap().mean_loss;
        prop_assert!(loss(lo) >= loss(hi));
    }

    #[test]
    fn overlap_threshold_is_sharp(total in 1usize..12, present_seed in 0usize..100) {
        let present = 1 + present_seed % total;
        let answer: Vec<String> = (0..total).map(|i| format!("kata{i}")).collect();
        let paragraph = answer[..present].join(" ") + " lain lain";
        let record = QaRecord {
            paragraph,
            url: None,
            qa_items: vec![QaItem { question: "soalan?".into(), answer: answer.join(" ") }],
        };
        let at = present as f64 / total as f64;
        let v = validate_record(&record, &OverlapConfig::new(at).unwrap());
        prop_assert_eq!(v.accepted.len(), 1);
        if at < 1.0 {
            let above = f64::from_bits(at.to_bits() + 1);
            let v = validate_record(&record, &OverlapConfig::new(above).unwrap());
            prop_assert_eq!(v.rejected.len(), 1);
        }
    }

    #[test]
    fn rag_pairs_are_deterministic_and_cross_context(
        records in prop::collection::vec(
            ("[a-e]{1,3}( [a-e]{1,3}){2,6}", prop::collection::vec(("[a-e]{1,3}\\?", "[a-e]{1,3}( [a-e]{1,3}){0,2}"), 1..4)),
            2..6,
        ),
        seed in any::<u64>(),
    ) {
        let records: Vec<QaRecord> = records
            .into_iter()
            .map(|(paragraph, items)| QaRecord {
                paragraph,
                url: None,
                qa_items: items.into_iter().map(|(question, answer)| QaItem { question, answer }).collect(),
            })
            .collect();
        let config = PairAssemblyConfig::new(seed);
        let overlap = OverlapConfig::default();
        let a = build_pairs(&records, &config, &overlap).unwrap();
        let b = build_pairs(&records, &config, &overlap).unwrap();
        prop_assert_eq!(a.training_pairs(), b.training_pairs());
        for p in &a.pairs {
            let own: HashSet<&str> = records[p.record_index]
                .qa_items
                .iter()
                .flat_map(|i| [i.question.as_str(), i.answer.as_str()])
                .collect();
            for n in &p.pair.negative_pairs {
                prop_assert!(!own.contains(n.as_str()), "negative {:?} from own record", n);
            }
            prop_assert!(p.pair.validate().is_ok());
        }
    }
}

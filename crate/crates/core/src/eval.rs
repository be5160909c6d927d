//! Recall@k over a query set with one relevant document per query.
//!
//! Documents are ranked by cosine similarity (descending) or Euclidean
//! distance (ascending); ties go to the smaller document id.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::contrastive::{ProjectionHead, ScoreMode};
use crate::corpus::{read_eval_queries, Corpus, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::knn::euclidean_distance;

pub const DEFAULT_K_VALUES: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub query_id: String,
    pub vector: Vec<f64>,
    pub relevant_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub mode: ScoreMode,
    pub k_values: Vec<usize>,
    /// Percentages in [0, 100]; written with two decimals.
    #[serde(serialize_with = "two_decimals")]
    pub recall_at: BTreeMap<usize, f64>,
    pub query_count: usize,
    pub doc_count: usize,
    pub corpus_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection_head: Option<String>,
}

fn two_decimals<S: Serializer>(
    map: &BTreeMap<usize, f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(map.len()))?;
    for (k, v) in map {
        m.serialize_entry(&k.to_string(), &((v * 100.0).round() / 100.0))?;
    }
    m.end()
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryRank {
    pub query_id: String,
    /// 1-based position of the relevant document.
    pub rank_of_relevant: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub ranks: Vec<QueryRank>,
}

struct Scorer<'a> {
    mode: ScoreMode,
    docs: &'a [EmbeddingRecord],
    // Squared norms for cosine mode.
    doc_sq: Vec<f64>,
}

/// Ranking key with the same order as cosine similarity. Equal cosines of
/// integer-valued vectors give bitwise equal keys, so ties stay ties.
fn signed_sq_cosine(dot: f64, qq: f64, dd: f64) -> f64 {
    // `+ 0.0` folds -0.0 into 0.0 so orthogonal documents tie under total_cmp.
    dot * dot.abs() / (qq * dd) + 0.0
}

fn sq_norm(v: &[f64]) -> Result<f64> {
    let n: f64 = v.iter().map(|x| x * x).sum();
    if n == 0.0 {
        return Err(Error::InvalidData("cosine ranking of a zero vector".into()));
    }
    Ok(n)
}

impl<'a> Scorer<'a> {
    fn new(docs: &'a [EmbeddingRecord], mode: ScoreMode) -> Result<Self> {
        let doc_sq = match mode {
            ScoreMode::Cosine => docs
                .iter()
                .map(|d| sq_norm(&d.vector))
                .collect::<Result<_>>()?,
            ScoreMode::Euclidean => Vec::new(),
        };
        Ok(Scorer { mode, docs, doc_sq })
    }

    fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            ScoreMode::Cosine => {
                let qq = sq_norm(query)?;
                Ok(self
                    .docs
                    .iter()
                    .zip(&self.doc_sq)
                    .map(|(d, dd)| {
                        let dot: f64 = d.vector.iter().zip(query).map(|(a, b)| a * b).sum();
                        signed_sq_cosine(dot, qq, *dd)
                    })
                    .collect())
            }
            ScoreMode::Euclidean => Ok(self
                .docs
                .iter()
                .map(|d| euclidean_distance(&d.vector, query))
                .collect()),
        }
    }

    /// Whether document `a` ranks ahead of document `b`.
    fn ahead(&self, scores: &[f64], a: usize, b: usize) -> bool {
        let by_score = match self.mode {
            ScoreMode::Cosine => scores[b].total_cmp(&scores[a]),
            ScoreMode::Euclidean => scores[a].total_cmp(&scores[b]),
        };
        by_score.then_with(|| self.docs[a].id.cmp(&self.docs[b].id)) == Ordering::Less
    }
}

fn normalize_k_values(k_values: &[usize], doc_count: usize) -> Result<Vec<usize>> {
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values given".into()));
    }
    if let Some(bad) = ks.iter().find(|&&k| k == 0 || k > doc_count) {
        return Err(Error::InvalidArgument(format!(
            "k = {bad} out of range for {doc_count} documents"
        )));
    }
    Ok(ks)
}

pub fn evaluate(
    dataset_name: &str,
    queries: &[EvalInput],
    corpus: &Corpus,
    k_values: &[usize],
    mode: ScoreMode,
) -> Result<Evaluation> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no evaluation queries".into()));
    }
    let ks = normalize_k_values(k_values, corpus.len())?;
    let dim = corpus.dim().expect("non-empty corpus has a dimension");
    let scorer = Scorer::new(corpus.records(), mode)?;

    let ranks: Vec<QueryRank> = queries
        .par_iter()
        .map(|q| {
            let relevant = corpus.ordinal_of(&q.relevant_id).ok_or_else(|| {
                Error::InvalidData(format!(
                    "query {:?}: relevant id {:?} not in document corpus",
                    q.query_id, q.relevant_id
                ))
            })?;
            if q.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: q.vector.len(),
                });
            }
            let scores = scorer.scores(&q.vector)?;
            let ahead = (0..corpus.len())
                .filter(|&d| d != relevant && scorer.ahead(&scores, d, relevant))
                .count();
            Ok(QueryRank {
                query_id: q.query_id.clone(),
                rank_of_relevant: ahead + 1,
            })
        })
        .collect::<Result<_>>()?;

    let n = ranks.len() as f64;
    let recall_at = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.rank_of_relevant <= k).count();
            (k, 100.0 * hits as f64 / n)
        })
        .collect();

    Ok(Evaluation {
        report: EvalReport {
            dataset_name: dataset_name.to_owned(),
            mode,
            k_values: ks,
            recall_at,
            query_count: ranks.len(),
            doc_count: corpus.len(),
            corpus_digest: corpus.digest(),
            projection_head: None,
        },
        ranks,
    })
}

fn project_corpus(corpus: &Corpus, head: &ProjectionHead) -> Result<Corpus> {
    let records = corpus
        .records()
        .iter()
        .map(|r| {
            Ok(EmbeddingRecord {
                id: r.id.clone(),
                text: r.text.clone(),
                vector: head.project(&r.vector)?,
            })
        })
        .collect::<Result<_>>()?;
    Corpus::new(records)
}

/// Resolves `eval.jsonl` queries against a query-embedding corpus (by
/// `query_id`) and a document corpus (by `relevant_id`), optionally mapping
/// every vector through a projection head first.
pub fn evaluate_from_files(
    eval_path: impl AsRef<Path>,
    query_corpus: &Corpus,
    doc_corpus: &Corpus,
    k_values: &[usize],
    mode: ScoreMode,
    head: Option<&ProjectionHead>,
) -> Result<Evaluation> {
    let eval_path = eval_path.as_ref();
    let queries = read_eval_queries(eval_path)?;
    let (query_corpus, doc_corpus) = match head {
        Some(h) => (
            project_corpus(query_corpus, h)?,
            project_corpus(doc_corpus, h)?,
        ),
        None => (query_corpus.clone(), doc_corpus.clone()),
    };
    let mut inputs = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let record = query_corpus.by_id(&q.query_id).ok_or_else(|| {
            Error::record(
                eval_path,
                i + 1,
                format!(
                    "query {:?} has no embedding in the query corpus",
                    q.query_id
                ),
            )
        })?;
        if doc_corpus.ordinal_of(&q.relevant_id).is_none() {
            return Err(Error::record(
                eval_path,
                i + 1,
                format!(
                    "query {:?}: relevant id {:?} not in document corpus",
                    q.query_id, q.relevant_id
                ),
            ));
        }
        inputs.push(EvalInput {
            query_id: q.query_id.clone(),
            vector: record.vector.clone(),
            relevant_id: q.relevant_id.clone(),
        });
    }
    let name = eval_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut evaluation = evaluate(&name, &inputs, &doc_corpus, k_values, mode)?;
    if let Some(h) = head {
        evaluation.report.projection_head = Some(format!("{}x{}", h.input_dim, h.output_dim));
    }
    Ok(evaluation)
}

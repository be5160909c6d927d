//! Contrastive pairs from synthetic QA records.
//!
//! A QA item is kept only when enough of its answer's keywords occur in the
//! record's paragraph. The paragraph becomes the query, its accepted
//! questions the positives, and strings sampled from other records'
//! questions and answers the negatives.

use std::collections::HashSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{QaItem, QaRecord, TrainingPair};
use crate::error::{Error, Result};
use crate::rng::item_rng;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.6;
pub const DEFAULT_NEGATIVES_PER_QUERY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapConfig {
    /// Minimum fraction of distinct answer tokens found in the context.
    pub threshold: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            threshold: DEFAULT_OVERLAP_THRESHOLD,
        }
    }
}

impl OverlapConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overlap threshold must be in (0, 1], got {threshold}"
            )));
        }
        Ok(OverlapConfig { threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSource {
    #[default]
    QuestionsAndAnswers,
    QuestionsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairAssemblyConfig {
    /// `None` keeps every accepted question.
    pub positives_per_query: Option<usize>,
    pub negatives_per_query: usize,
    pub seed: u64,
    pub negative_source: NegativeSource,
}

impl PairAssemblyConfig {
    pub fn new(seed: u64) -> Self {
        PairAssemblyConfig {
            positives_per_query: None,
            negatives_per_query: DEFAULT_NEGATIVES_PER_QUERY,
            seed,
            negative_source: NegativeSource::default(),
        }
    }
}

/// Maximal runs of Unicode alphanumerics in the lowercased text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Share of the answer's distinct tokens that also occur in the context.
/// An answer without tokens scores 0.
pub fn keyword_overlap(answer: &str, context: &str) -> f64 {
    let context_tokens: HashSet<String> = tokenize(context).into_iter().collect();
    overlap_with(answer, &context_tokens)
}

fn overlap_with(answer: &str, context_tokens: &HashSet<String>) -> f64 {
    let answer_tokens: HashSet<String> = tokenize(answer).into_iter().collect();
    if answer_tokens.is_empty() {
        return 0.0;
    }
    let hits = answer_tokens
        .iter()
        .filter(|t| context_tokens.contains(*t))
        .count();
    hits as f64 / answer_tokens.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredItem {
    pub question: String,
    pub answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Validation {
    pub accepted: Vec<ScoredItem>,
    pub rejected: Vec<ScoredItem>,
}

/// Splits a record's items by `keyword_overlap(answer, paragraph) >= threshold`.
pub fn validate_record(record: &QaRecord, config: &OverlapConfig) -> Validation {
    let context_tokens: HashSet<String> = tokenize(&record.paragraph).into_iter().collect();
    let mut out = Validation::default();
    for QaItem { question, answer } in &record.qa_items {
        let score = overlap_with(answer, &context_tokens);
        let item = ScoredItem {
            question: question.clone(),
            answer: answer.clone(),
            score,
        };
        if score >= config.threshold {
            out.accepted.push(item);
        } else {
            out.rejected.push(item);
        }
    }
    out
}

/// A built pair with the record indices its strings came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPair {
    pub pair: TrainingPair,
    pub record_index: usize,
    /// Source record of each entry of `pair.negative_pairs`.
    pub negative_sources: Vec<usize>,
}

/// Rejected item of one record, as written to the audit file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedItem {
    pub record: usize,
    pub question: String,
    pub answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RagBuildOutcome {
    pub pairs: Vec<AssembledPair>,
    pub rejected: Vec<RejectedItem>,
    pub accepted_items: usize,
    /// Records with no accepted item or no available negative.
    pub skipped_records: usize,
}

impl RagBuildOutcome {
    pub fn training_pairs(&self) -> Vec<TrainingPair> {
        self.pairs.iter().map(|p| p.pair.clone()).collect()
    }
}

pub fn build_pairs(
    records: &[QaRecord],
    assembly: &PairAssemblyConfig,
    overlap: &OverlapConfig,
) -> Result<RagBuildOutcome> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "building pairs needs at least 2 records, got {}",
            records.len()
        )));
    }
    if assembly.negatives_per_query == 0 {
        return Err(Error::InvalidArgument(
            "negatives_per_query must be >= 1".into(),
        ));
    }
    if assembly.positives_per_query == Some(0) {
        return Err(Error::InvalidArgument(
            "positives_per_query must be >= 1".into(),
        ));
    }

    let validations: Vec<Validation> = records
        .par_iter()
        .map(|r| validate_record(r, overlap))
        .collect();

    // Candidate negatives in record order; sources aligned.
    let mut pool: Vec<(&str, usize)> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        for item in &record.qa_items {
            pool.push((&item.question, i));
            if assembly.negative_source == NegativeSource::QuestionsAndAnswers {
                pool.push((&item.answer, i));
            }
        }
    }

    let assembled: Vec<Option<AssembledPair>> = validations
        .par_iter()
        .enumerate()
        .map(|(i, v)| assemble_one(records, i, v, &pool, assembly))
        .collect();

    let mut outcome = RagBuildOutcome::default();
    for (i, (v, pair)) in validations.iter().zip(assembled).enumerate() {
        outcome.accepted_items += v.accepted.len();
        outcome
            .rejected
            .extend(v.rejected.iter().map(|s| RejectedItem {
                record: i,
                question: s.question.clone(),
                answer: s.answer.clone(),
                score: s.score,
            }));
        match pair {
            Some(p) => outcome.pairs.push(p),
            None => outcome.skipped_records += 1,
        }
    }
    Ok(outcome)
}

fn assemble_one(
    records: &[QaRecord],
    record_index: usize,
    validation: &Validation,
    pool: &[(&str, usize)],
    assembly: &PairAssemblyConfig,
) -> Option<AssembledPair> {
    let mut seen = HashSet::new();
    let mut positives: Vec<String> = validation
        .accepted
        .iter()
        .filter(|s| seen.insert(s.question.as_str()))
        .map(|s| s.question.clone())
        .collect();
    if let Some(cap) = assembly.positives_per_query {
        positives.truncate(cap);
    }
    if positives.is_empty() {
        return None;
    }

    // Strings of the query's own record never serve as negatives, even when
    // another record repeats them.
    let own: HashSet<&str> = records[record_index]
        .qa_items
        .iter()
        .flat_map(|q| [q.question.as_str(), q.answer.as_str()])
        .collect();
    let mut distinct = HashSet::new();
    let candidates: Vec<(&str, usize)> = pool
        .iter()
        .copied()
        .filter(|&(s, src)| src != record_index && !own.contains(s) && !s.trim().is_empty())
        .filter(|&(s, _)| distinct.insert(s))
        .collect();
    if candidates.is_empty() {
        return None;
    }

    let take = assembly.negatives_per_query.min(candidates.len());
    let mut rng = item_rng(assembly.seed, record_index as u64);
    let picked = index::sample(&mut rng, candidates.len(), take).into_vec();
    let (negatives, sources): (Vec<String>, Vec<usize>) = picked
        .into_iter()
        .map(|i| (candidates[i].0.to_owned(), candidates[i].1))
        .unzip();

    Some(AssembledPair {
        pair: TrainingPair {
            query: records[record_index].paragraph.clone(),
            positive_pairs: positives,
            negative_pairs: negatives,
        },
        record_index,
        negative_sources: sources,
    })
}

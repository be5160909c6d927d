//! Line-delimited JSON record formats and their readers and writers.
//!
//! Every file is one JSON object per line. Blank lines are ignored on read.
//! Writers use a fixed field order and the shortest round-trip float
//! representation, so identical input always yields identical bytes.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One text with its identifier and embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub text: String,
    pub vector: Vec<f64>,
}

/// Raw text awaiting embedding (`{"id", "text"}` lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
}

/// A context paragraph with the question/answer items generated from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQaRecord")]
pub struct QaRecord {
    pub paragraph: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(rename = "qa")]
    pub qa_items: Vec<QaItem>,
}

// Input side of QaRecord: accepts `"qa": {"qa": [...]}` as well as `"qa": [...]`.
#[derive(Deserialize)]
struct RawQaRecord {
    paragraph: String,
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    qa: Option<RawQaField>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawQaField {
    Flat(Vec<QaItem>),
    Nested { qa: Vec<QaItem> },
}

impl TryFrom<RawQaRecord> for QaRecord {
    type Error = String;

    fn try_from(raw: RawQaRecord) -> std::result::Result<Self, String> {
        if raw.paragraph.is_empty() {
            return Err("paragraph is empty".to_owned());
        }
        let qa_items = match raw.qa {
            None => Vec::new(),
            Some(RawQaField::Flat(items)) | Some(RawQaField::Nested { qa: items }) => items,
        };
        Ok(QaRecord {
            paragraph: raw.paragraph,
            url: raw.url,
            qa_items,
        })
    }
}

/// A contrastive training example: one query with its positive and negative texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub positive_pairs: Vec<String>,
    pub negative_pairs: Vec<String>,
}

impl TrainingPair {
    /// Checks that both sides are present and share no string.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.positive_pairs.is_empty() {
            return Err("positive_pairs is empty".to_owned());
        }
        if self.negative_pairs.is_empty() {
            return Err("negative_pairs is empty".to_owned());
        }
        let positives: HashSet<&str> = self.positive_pairs.iter().map(String::as_str).collect();
        if let Some(shared) = self
            .negative_pairs
            .iter()
            .find(|n| positives.contains(n.as_str()))
        {
            return Err(format!(
                "string appears as both positive and negative: {shared:?}"
            ));
        }
        Ok(())
    }
}

/// One evaluation query and the id of its single relevant document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub query_text: String,
    pub relevant_id: String,
}

/// A validated set of embedding records sharing one vector dimension.
///
/// Ids are unique; texts may repeat. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<EmbeddingRecord>,
    dim: Option<usize>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut builder = CorpusBuilder::default();
        for record in records {
            builder.push(record).map_err(|e| match e {
                RecordError::Dimension { expected, found } => {
                    Error::DimensionMismatch { expected, found }
                }
                other => Error::InvalidData(other.to_string()),
            })?;
        }
        Ok(builder.finish())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Vector dimension, `None` for an empty corpus.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, ordinal: usize) -> Option<&EmbeddingRecord> {
        self.records.get(ordinal)
    }

    pub fn ordinal_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.ordinal_of(id).map(|i| &self.records[i])
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.records.iter().map(|r| r.vector.as_slice())
    }

    /// SHA-256 over the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for record in &self.records {
            let line = serde_json::to_vec(record).expect("records always serialize");
            hasher.update(&line);
            hasher.update(b"\n");
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }
}

#[derive(Debug, thiserror::Error)]
enum RecordError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("vector has zero length")]
    EmptyVector,
    #[error("non-finite vector component at position {0}")]
    NonFinite(usize),
    #[error("empty id")]
    EmptyId,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

#[derive(Default)]
struct CorpusBuilder {
    records: Vec<EmbeddingRecord>,
    dim: Option<usize>,
    by_id: HashMap<String, usize>,
}

impl CorpusBuilder {
    fn push(&mut self, record: EmbeddingRecord) -> std::result::Result<(), RecordError> {
        if record.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if record.vector.is_empty() {
            return Err(RecordError::EmptyVector);
        }
        match self.dim {
            Some(expected) if expected != record.vector.len() => {
                return Err(RecordError::Dimension {
                    expected,
                    found: record.vector.len(),
                })
            }
            _ => {}
        }
        if let Some(pos) = record.vector.iter().position(|v| !v.is_finite()) {
            return Err(RecordError::NonFinite(pos));
        }
        if self.by_id.contains_key(&record.id) {
            return Err(RecordError::DuplicateId(record.id));
        }
        self.dim = Some(record.vector.len());
        self.by_id.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    fn finish(self) -> Corpus {
        Corpus {
            records: self.records,
            dim: self.dim,
            by_id: self.by_id,
        }
    }
}

/// Reads `{"id", "text", "vector"}` lines. The first record fixes the dimension.
pub fn read_embedding_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut builder = CorpusBuilder::default();
    for_each_line(path, |line_no, line| {
        let record: EmbeddingRecord = parse_line(path, line_no, line)?;
        builder
            .push(record)
            .map_err(|e| Error::record(path, line_no, e.to_string()))
    })?;
    if builder.records.is_empty() {
        log::warn!("{}: corpus is empty, dimension undefined", path.display());
    }
    Ok(builder.finish())
}

pub fn write_embedding_corpus(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads QA records, flattening the nested `qa.qa` list when present.
pub fn read_qa_records(path: impl AsRef<Path>) -> Result<Vec<QaRecord>> {
    read_jsonl(path)
}

/// Writes QA records with a flat `qa` list.
pub fn write_qa_records(path: impl AsRef<Path>, records: &[QaRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads training pairs, rejecting any pair whose sides overlap.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let pair: TrainingPair = parse_line(path, line_no, line)?;
        pair.validate()
            .map_err(|m| Error::record(path, line_no, m))?;
        out.push(pair);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TrainingPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

pub fn read_eval_queries(path: impl AsRef<Path>) -> Result<Vec<EvalQuery>> {
    read_jsonl(path)
}

pub fn write_eval_queries(path: impl AsRef<Path>, queries: &[EvalQuery]) -> Result<()> {
    write_jsonl(path, queries)
}

/// Reads `{"id", "text"}` lines, rejecting empty or duplicate ids.
pub fn read_text_records(path: impl AsRef<Path>) -> Result<Vec<TextRecord>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let record: TextRecord = parse_line(path, line_no, line)?;
        if record.id.is_empty() {
            return Err(Error::record(path, line_no, "empty id"));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::record(
                path,
                line_no,
                format!("duplicate id {:?}", record.id),
            ));
        }
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_text_records(path: impl AsRef<Path>, records: &[TextRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads any line-delimited JSON file into `T`, reporting the failing line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        out.push(parse_line(path, line_no, line)?);
        Ok(())
    })?;
    Ok(out)
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_jsonl_to(&mut writer, items).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_jsonl_to<W: Write, T: Serialize>(
    writer: &mut W,
    items: &[T],
) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn parse_line<T: DeserializeOwned>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::record(path, line_no, e.to_string()))
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(idx + 1, &line)?;
    }
    Ok(())
}

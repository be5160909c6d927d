//! Embedding providers and the resumable corpus embedding job.
//!
//! [`HttpProvider`] speaks the common embeddings wire shape:
//!
//! ```text
//! POST {endpoint}   {"input": [text, ...], "model": name}
//! Authorization: Bearer <key>
//! 200 OK            {"data": [{"embedding": [f64, ...], "index": i}, ...]}
//! ```
//!
//! [`OfflineProvider`] derives a unit vector from a hash of each text, so
//! every downstream step can run without a network.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{read_text_records, Corpus, EmbeddingRecord, TextRecord};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "EMBED_API_KEY";

/// API key wrapper that never prints its contents.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct SecretString(String);

impl SecretString {
    pub fn new(secret: impl Into<String>) -> Self {
        SecretString(secret.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SecretString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretString(***)")
    }
}

pub trait EmbeddingProvider: Sync {
    /// Embeds one request's worth of texts, order-aligned with the input.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn batch_size(&self) -> usize;

    /// Maximum number of batches in flight at once.
    fn concurrency(&self) -> usize {
        1
    }
}

/// Deterministic hash-seeded unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineProvider {
    pub dimension: usize,
    pub seed: u64,
}

impl OfflineProvider {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(OfflineProvider { dimension, seed })
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let v: Vec<f64> = (0..self.dimension)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl EmbeddingProvider for OfflineProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn batch_size(&self) -> usize {
        256
    }
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key: SecretString,
    pub batch_size: usize,
    pub max_retries: usize,
    pub timeout: Duration,
    pub concurrency: usize,
    /// First backoff ceiling; doubles per retry, full jitter.
    pub backoff_base: Duration,
}

impl ProviderConfig {
    pub fn new(
        endpoint_url: impl Into<String>,
        model_name: impl Into<String>,
        api_key: SecretString,
    ) -> Self {
        ProviderConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key,
            batch_size: 32,
            max_retries: 3,
            timeout: Duration::from_secs(30),
            concurrency: 4,
            backoff_base: Duration::from_secs(1),
        }
    }

    /// Reads the API key from `EMBED_API_KEY`; a missing variable means no key.
    pub fn from_env(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        Self::new(endpoint_url, model_name, SecretString::new(key))
    }

    fn validate(&self) -> Result<()> {
        if self.endpoint_url.is_empty() {
            return Err(Error::InvalidArgument("endpoint url is empty".into()));
        }
        if self.batch_size == 0 || self.concurrency == 0 {
            return Err(Error::InvalidArgument(
                "batch size and concurrency must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    index: usize,
}

enum Attempt {
    Done(Vec<Vec<f64>>),
    Fatal(Error),
    Retry { rate_limited: bool, message: String },
}

pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider { config, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn attempt(&self, texts: &[String]) -> Attempt {
        let mut request = self.agent.post(&self.config.endpoint_url);
        if !self.config.api_key.is_empty() {
            request = request.header(
                "Authorization",
                format!("Bearer {}", self.config.api_key.expose()),
            );
        }
        let body = EmbeddingRequest {
            input: texts,
            model: &self.config.model_name,
        };
        let mut response = match request.send_json(&body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    rate_limited: false,
                    message: e.to_string(),
                }
            }
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => match response.body_mut().read_json::<EmbeddingResponse>() {
                Ok(parsed) => match reassemble(parsed, texts.len()) {
                    Ok(v) => Attempt::Done(v),
                    Err(e) => Attempt::Fatal(e),
                },
                Err(e) => Attempt::Fatal(Error::MalformedResponse(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(Error::Auth { status }),
            429 => Attempt::Retry {
                rate_limited: true,
                message: "HTTP 429".into(),
            },
            408 | 500..=599 => Attempt::Retry {
                rate_limited: false,
                message: format!("HTTP {status}"),
            },
            _ => Attempt::Fatal(Error::Network {
                attempts: 1,
                message: format!("HTTP {status}"),
            }),
        }
    }

    fn backoff(&self, retry: usize) -> Duration {
        let ceiling = self
            .config
            .backoff_base
            .saturating_mul(1u32.checked_shl(retry as u32).unwrap_or(u32::MAX));
        ceiling.mul_f64(rand::rng().random::<f64>())
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let attempts = self.config.max_retries + 1;
        let mut last_rate_limited = false;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(texts) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry {
                    rate_limited,
                    message,
                } => {
                    log::debug!("embeddings attempt {} failed: {message}", attempt + 1);
                    last_rate_limited = rate_limited;
                    last_message = message;
                }
            }
        }
        if last_rate_limited {
            Err(Error::RateLimited { attempts })
        } else {
            Err(Error::Network {
                attempts,
                message: last_message,
            })
        }
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency
    }
}

/// Orders response items by their `index` field.
fn reassemble(response: EmbeddingResponse, expected: usize) -> Result<Vec<Vec<f64>>> {
    if response.data.len() != expected {
        return Err(Error::MalformedResponse(format!(
            "expected {expected} embeddings, got {}",
            response.data.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for datum in response.data {
        let slot = slots.get_mut(datum.index).ok_or_else(|| {
            Error::MalformedResponse(format!("index {} out of range", datum.index))
        })?;
        if slot.is_some() {
            return Err(Error::MalformedResponse(format!(
                "duplicate index {}",
                datum.index
            )));
        }
        *slot = Some(datum.embedding);
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect())
}

fn check_vectors(vectors: &[Vec<f64>], dim: &mut Option<usize>) -> Result<()> {
    for v in vectors {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedResponse(
                "empty or non-finite embedding".into(),
            ));
        }
        match *dim {
            None => *dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

type BatchResult = Result<Vec<Vec<f64>>>;

/// Runs `batches` through the provider with bounded concurrency. Results
/// are returned in batch order.
fn run_batches<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    batches: &[&[String]],
) -> Vec<BatchResult> {
    let workers = provider.concurrency().clamp(1, batches.len().max(1));
    if workers == 1 {
        return batches.iter().map(|b| provider.embed_batch(b)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<BatchResult>>> = batches.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(i) else { break };
                let result = provider.embed_batch(batch);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every batch ran"))
        .collect()
}

fn check_texts(texts: &[String]) -> Result<()> {
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::InvalidArgument(format!("text {i} is empty")));
    }
    Ok(())
}

/// Embeds `texts`, batching and parallelizing per the provider's settings.
pub fn embed_texts<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[String],
) -> Result<Vec<Vec<f64>>> {
    check_texts(texts)?;
    let batches: Vec<&[String]> = texts.chunks(provider.batch_size().max(1)).collect();
    let mut dim = None;
    let mut out = Vec::with_capacity(texts.len());
    for result in run_batches(provider, &batches) {
        let vectors = result?;
        check_vectors(&vectors, &mut dim)?;
        out.extend(vectors);
    }
    Ok(out)
}

/// Loads records already present in a partial output. A truncated final
/// line left by an interrupted write is dropped from the file.
fn load_existing(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut records = Vec::new();
    let mut good_len = 0;
    let lines: Vec<&str> = content.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            good_len += line.len();
            continue;
        }
        match serde_json::from_str::<EmbeddingRecord>(line) {
            Ok(r) if complete => {
                records.push(r);
                good_len += line.len();
            }
            Ok(_) | Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: dropping truncated final line", path.display());
            }
            Err(e) => return Err(Error::record(path, i + 1, e.to_string())),
            Ok(_) => unreachable!("complete lines are handled above"),
        }
    }
    if good_len != content.len() {
        fs::write(path, &content[..good_len]).map_err(|e| Error::io(path, e))?;
    }
    Ok(records)
}

/// Embeds every `{"id", "text"}` record of `input` into `output`.
///
/// Records whose id is already in `output` are skipped, so an interrupted
/// run can be resumed. Progress is appended after each group of batches;
/// on failure the completed prefix stays on disk. Returns how many records
/// were embedded by this call.
pub fn embed_corpus_file<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
) -> Result<usize> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let texts = read_text_records(input)?;
    let existing = load_existing(output)?;
    let existing = Corpus::new(existing)?;
    let done: HashSet<&str> = existing.records().iter().map(|r| r.id.as_str()).collect();
    let pending: Vec<&TextRecord> = texts
        .iter()
        .filter(|t| !done.contains(t.id.as_str()))
        .collect();

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(output)
        .map_err(|e| Error::io(output, e))?;
    if pending.is_empty() {
        return Ok(0);
    }

    let batch_size = provider.batch_size().max(1);
    let wave = batch_size * provider.concurrency().max(1);
    let mut dim = existing.dim();
    let mut embedded = 0;
    for group in pending.chunks(wave) {
        let owned: Vec<String> = group.iter().map(|t| t.text.clone()).collect();
        check_texts(&owned)?;
        let batches: Vec<&[String]> = owned.chunks(batch_size).collect();
        let results = run_batches(provider, &batches);
        for (records, result) in group.chunks(batch_size).zip(results) {
            let vectors = result?;
            check_vectors(&vectors, &mut dim)?;
            let mut buf = Vec::new();
            for (t, vector) in records.iter().zip(vectors) {
                let record = EmbeddingRecord {
                    id: t.id.clone(),
                    text: t.text.clone(),
                    vector,
                };
                serde_json::to_writer(&mut buf, &record).expect("records always serialize");
                buf.push(b'\n');
            }
            file.write_all(&buf).map_err(|e| Error::io(output, e))?;
            file.flush().map_err(|e| Error::io(output, e))?;
            embedded += records.len();
        }
    }
    Ok(embedded)
}

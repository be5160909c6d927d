//! Margin contrastive loss over pair scores, its gradients, and a linear
//! projection head trained by full-batch gradient descent.
//!
//! ```text
//! loss(y = 1, d) = (1 - d)^2
//! loss(y = 0, d) = max(d - alpha, 0)^2
//! ```
//!
//! `d` is the cosine similarity of the pair by default; Euclidean distance is
//! available as an alternative score.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TrainingPair};
use crate::error::{Error, Result};
use crate::rng::global_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Cosine,
    Euclidean,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Cosine => "cosine",
            ScoreMode::Euclidean => "euclidean",
        })
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScoreMode::Cosine),
            "euclidean" => Ok(ScoreMode::Euclidean),
            other => Err(Error::InvalidArgument(format!(
                "unknown score mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    pub alpha: f64,
    pub score_mode: ScoreMode,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        ContrastiveParams {
            alpha: 0.5,
            score_mode: ScoreMode::Cosine,
            learning_rate: 0.05,
            epochs: 200,
        }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        let alpha_ok = match self.score_mode {
            ScoreMode::Cosine => (0.0..=1.0).contains(&self.alpha),
            ScoreMode::Euclidean => self.alpha >= 0.0 && self.alpha.is_finite(),
        };
        if !alpha_ok {
            return Err(Error::InvalidArgument(format!(
                "alpha {} is invalid for {} mode",
                self.alpha, self.score_mode
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Cosine similarity or Euclidean distance of a pair.
pub fn score(a: &[f64], b: &[f64], mode: ScoreMode) -> Result<f64> {
    Ok(score_with_grad(a, b, mode, false)?.0)
}

type ScoreGrad = (f64, Vec<f64>, Vec<f64>);

fn score_with_grad(a: &[f64], b: &[f64], mode: ScoreMode, want_grad: bool) -> Result<ScoreGrad> {
    check_dims(a, b)?;
    match mode {
        ScoreMode::Cosine => {
            let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
            if aa == 0.0 || bb == 0.0 {
                return Err(Error::InvalidArgument(
                    "cosine score is undefined for a zero vector".into(),
                ));
            }
            // sqrt(aa·bb) keeps cos(a, a) == 1 exactly.
            let norm = (aa * bb).sqrt();
            let cos = ab / norm;
            if !want_grad {
                return Ok((cos.clamp(-1.0, 1.0), Vec::new(), Vec::new()));
            }
            let ga = a
                .iter()
                .zip(b)
                .map(|(x, y)| y / norm - cos * x / aa)
                .collect();
            let gb = a
                .iter()
                .zip(b)
                .map(|(x, y)| x / norm - cos * y / bb)
                .collect();
            Ok((cos.clamp(-1.0, 1.0), ga, gb))
        }
        ScoreMode::Euclidean => {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let dist = dot(&diff, &diff).sqrt();
            if !want_grad {
                return Ok((dist, Vec::new(), Vec::new()));
            }
            // Subgradient 0 where a == b.
            let ga: Vec<f64> = if dist == 0.0 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|d| d / dist).collect()
            };
            let gb = ga.iter().map(|g| -g).collect();
            Ok((dist, ga, gb))
        }
    }
}

pub fn contrastive_loss(label: Label, d: f64, alpha: f64) -> f64 {
    match label {
        Label::Positive => (1.0 - d) * (1.0 - d),
        Label::Negative => {
            let excess = (d - alpha).max(0.0);
            excess * excess
        }
    }
}

/// d(loss)/d(d); 0 at the kink `d == alpha`.
pub fn loss_gradient(label: Label, d: f64, alpha: f64) -> f64 {
    match label {
        Label::Positive => -2.0 * (1.0 - d),
        Label::Negative => 2.0 * (d - alpha).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScore {
    #[serde(rename = "y", serialize_with = "label_as_int")]
    pub label: Label,
    #[serde(rename = "d")]
    pub score: f64,
    pub loss: f64,
}

fn label_as_int<S: serde::Serializer>(label: &Label, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(label.as_u8())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub anchor: Vec<f64>,
    pub other: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean_loss: f64,
    pub scores: Vec<PairScore>,
    /// d(mean_loss)/d(anchor), one entry per pair.
    pub anchor_grads: Vec<Vec<f64>>,
    /// d(mean_loss)/d(other), one entry per pair.
    pub other_grads: Vec<Vec<f64>>,
}

/// Mean contrastive loss of a batch and its gradient with respect to every
/// input vector. Pairs are evaluated in parallel and summed in batch order.
pub fn batch_loss(pairs: &[PairExample], params: &ContrastiveParams) -> Result<BatchLoss> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.validate()?;
    let scale = 1.0 / pairs.len() as f64;
    let per_pair: Vec<(PairScore, Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .with_min_len(64)
        .map(|p| {
            let (d, ga, gb) = score_with_grad(&p.anchor, &p.other, params.score_mode, true)?;
            let loss = contrastive_loss(p.label, d, params.alpha);
            let upstream = loss_gradient(p.label, d, params.alpha) * scale;
            let ga = ga.into_iter().map(|g| g * upstream).collect();
            let gb = gb.into_iter().map(|g| g * upstream).collect();
            Ok((
                PairScore {
                    label: p.label,
                    score: d,
                    loss,
                },
                ga,
                gb,
            ))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut scores = Vec::with_capacity(pairs.len());
    let mut anchor_grads = Vec::with_capacity(pairs.len());
    let mut other_grads = Vec::with_capacity(pairs.len());
    for (s, ga, gb) in per_pair {
        total += s.loss;
        scores.push(s);
        anchor_grads.push(ga);
        other_grads.push(gb);
    }
    Ok(BatchLoss {
        mean_loss: total * scale,
        scores,
        anchor_grads,
        other_grads,
    })
}

/// Linear map `x ↦ xᵀW` with `W` stored row-major as `input_dim × output_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
}

impl ProjectionHead {
    /// Uniform in `±sqrt(6 / (input_dim + output_dim))`.
    pub fn init(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(
                "projection dims must be positive".into(),
            ));
        }
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let mut rng = global_rng(seed);
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(ProjectionHead {
            input_dim,
            output_dim,
            weights,
        })
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.output_dim];
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.output_dim)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let head: ProjectionHead =
            serde_json::from_slice(&bytes).map_err(|e| Error::record(path, 1, e.to_string()))?;
        if head.weights.len() != head.input_dim * head.output_dim
            || head.weights.iter().any(|w| !w.is_finite())
        {
            return Err(Error::record(
                path,
                1,
                "weights do not match dims or are non-finite",
            ));
        }
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec(self).expect("head always serializes");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Mean loss before each epoch's update, then once after the last one.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }
}

/// Full-batch gradient descent of a fresh projection head on `pairs`.
pub fn train_head(
    pairs: &[PairExample],
    params: &ContrastiveParams,
    output_dim: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    params.validate()?;
    let has = |l| pairs.iter().any(|p| p.label == l);
    if !has(Label::Positive) || !has(Label::Negative) {
        return Err(Error::InvalidArgument(
            "training needs at least one positive and one negative pair".into(),
        ));
    }
    let input_dim = pairs[0].anchor.len();
    let mut head = ProjectionHead::init(input_dim, output_dim, seed)?;
    let mut loss_trace = Vec::with_capacity(params.epochs + 1);

    for epoch in 0..=params.epochs {
        let projected: Vec<PairExample> = pairs
            .iter()
            .map(|p| {
                Ok(PairExample {
                    anchor: head.project(&p.anchor)?,
                    other: head.project(&p.other)?,
                    label: p.label,
                })
            })
            .collect::<Result<_>>()?;
        let batch = batch_loss(&projected, params)?;
        if !batch.mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: batch.mean_loss,
            });
        }
        loss_trace.push(batch.mean_loss);
        if epoch == params.epochs {
            break;
        }

        // dL/dW[i][j] = Σ_pairs anchor_i · g_anchor_j + other_i · g_other_j
        let mut grad = vec![0.0; head.weights.len()];
        for ((p, ga), gb) in pairs
            .iter()
            .zip(&batch.anchor_grads)
            .zip(&batch.other_grads)
        {
            for (input, g) in [(&p.anchor, ga), (&p.other, gb)] {
                for (xi, row) in input.iter().zip(grad.chunks_exact_mut(output_dim)) {
                    for (r, gj) in row.iter_mut().zip(g) {
                        *r += xi * gj;
                    }
                }
            }
        }
        for (w, g) in head.weights.iter_mut().zip(&grad) {
            *w -= params.learning_rate * g;
        }
        if head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok(TrainOutcome { head, loss_trace })
}

/// Expands text-level pairs into vector pairs (query, positive, 1) and
/// (query, negative, 0), looking texts up in `corpus`. When a text occurs
/// more than once, its first record is used.
pub fn examples_from_pairs(pairs: &[TrainingPair], corpus: &Corpus) -> Result<Vec<PairExample>> {
    let mut by_text: HashMap<&str, &[f64]> = HashMap::new();
    for r in corpus.records() {
        by_text.entry(r.text.as_str()).or_insert(&r.vector);
    }
    let lookup = |t: &str| {
        by_text
            .get(t)
            .map(|v| v.to_vec())
            .ok_or_else(|| Error::InvalidData(format!("text not found in corpus: {t:?}")))
    };
    let mut out = Vec::new();
    for pair in pairs {
        let query = lookup(&pair.query)?;
        for (texts, label) in [
            (&pair.positive_pairs, Label::Positive),
            (&pair.negative_pairs, Label::Negative),
        ] {
            for t in texts {
                out.push(PairExample {
                    anchor: query.clone(),
                    other: lookup(t)?,
                    label,
                });
            }
        }
    }
    Ok(out)
}

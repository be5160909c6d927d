//! Pairwise-distance distribution and the percentile thresholds that
//! separate hard positives (low tail) from hard negatives (high tail).

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::knn::euclidean_distance;
use crate::rng::global_rng;

pub const DEFAULT_SAMPLE_COUNT: usize = 100_000;
pub const DEFAULT_LOWER_PCT: f64 = 5.0;
pub const DEFAULT_UPPER_PCT: f64 = 95.0;

/// Non-negative distance samples, kept sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDistribution {
    sorted: Vec<f64>,
}

impl DistanceDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distance samples must be finite and >= 0, got {bad}"
            )));
        }
        samples.sort_by(f64::total_cmp);
        Ok(DistanceDistribution { sorted: samples })
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.sorted.is_empty()).then(|| self.sorted.iter().sum::<f64>() / self.count() as f64)
    }

    /// Linear-interpolation percentile over 0-indexed ranks: `r = p/100 · (n − 1)`.
    pub fn percentile(&self, p: f64) -> Result<f64> {
        if self.sorted.is_empty() {
            return Err(Error::InvalidArgument(
                "percentile of an empty distribution".into(),
            ));
        }
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "percentile rank must be in [0, 100], got {p}"
            )));
        }
        let rank = p / 100.0 * (self.count() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        let (a, b) = (self.sorted[lo], self.sorted[hi]);
        Ok(a + (b - a) * frac)
    }

    /// Adjusted Fisher–Pearson standardized third moment.
    pub fn skewness(&self) -> Result<f64> {
        let n = self.count();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "skewness needs at least 3 samples, got {n}"
            )));
        }
        let nf = n as f64;
        let mean = self.mean().expect("non-empty");
        let (m2, m3) = self.sorted.iter().fold((0.0, 0.0), |(m2, m3), x| {
            let d = x - mean;
            (m2 + d * d, m3 + d * d * d)
        });
        let (m2, m3) = (m2 / nf, m3 / nf);
        let scale = self.sorted[n - 1]
            .abs()
            .max(self.sorted[0].abs())
            .max(f64::MIN_POSITIVE);
        if m2.sqrt() <= 1e-12 * scale {
            return Err(Error::InvalidArgument(
                "skewness undefined for zero variance".into(),
            ));
        }
        let g1 = m3 / m2.powf(1.5);
        Ok((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
    }
}

/// Distances between `sample_count` uniformly drawn pairs of distinct points.
pub fn sample_pairwise_distances(
    vectors: &[&[f64]],
    sample_count: usize,
    seed: u64,
) -> Result<DistanceDistribution> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 points to sample distances, got {n}"
        )));
    }
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let mut rng = global_rng(seed);
    let samples = (0..sample_count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            euclidean_distance(vectors[i], vectors[j])
        })
        .collect();
    DistanceDistribution::new(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdPair {
    /// Hard-positive cutoff: `distance <= lower_bound`.
    pub lower_bound: f64,
    /// Hard-negative cutoff: `distance > upper_bound`.
    pub upper_bound: f64,
    pub lower_pct: f64,
    pub upper_pct: f64,
}

pub fn compute_thresholds(
    distribution: &DistanceDistribution,
    lower_pct: f64,
    upper_pct: f64,
) -> Result<ThresholdPair> {
    if lower_pct.is_nan() || upper_pct.is_nan() || lower_pct >= upper_pct {
        return Err(Error::InvalidArgument(format!(
            "lower percentile must be below upper percentile, got {lower_pct} and {upper_pct}"
        )));
    }
    Ok(ThresholdPair {
        lower_bound: distribution.percentile(lower_pct)?,
        upper_bound: distribution.percentile(upper_pct)?,
        lower_pct,
        upper_pct,
    })
}

/// Summary printed by the `stats` command.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSummary {
    pub count: usize,
    pub mean: f64,
    /// `None` when the variance is zero or there are fewer than 3 samples.
    pub skewness: Option<f64>,
    pub percentiles: Vec<(f64, f64)>,
}

impl DistributionSummary {
    pub fn from_distribution(distribution: &DistanceDistribution, ranks: &[f64]) -> Result<Self> {
        let mean = distribution
            .mean()
            .ok_or_else(|| Error::InvalidArgument("empty distribution".into()))?;
        let percentiles = ranks
            .iter()
            .map(|&p| Ok((p, distribution.percentile(p)?)))
            .collect::<Result<_>>()?;
        Ok(DistributionSummary {
            count: distribution.count(),
            mean,
            skewness: distribution.skewness().ok(),
            percentiles,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut percentiles = serde_json::Map::new();
        for (p, v) in &self.percentiles {
            percentiles.insert(format_rank(*p), serde_json::json!(v));
        }
        serde_json::json!({
            "count": self.count,
            "mean": self.mean,
            "skewness": self.skewness,
            "percentiles": percentiles,
        })
    }
}

fn format_rank(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

//! Hard positive / hard negative mining and dataset blending.
//!
//! For each anchor, candidates at distance `<= lower_bound` are positives
//! and candidates at distance `> upper_bound` are negatives; each list is
//! then down-sampled without replacement to `max_size`.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, TrainingPair};
use crate::error::{Error, Result};
use crate::knn::{Neighbor, NeighborSearch};
use crate::rng::{global_rng, item_rng};
use crate::stats::ThresholdPair;

pub const DEFAULT_MAX_SIZE: usize = 5;
pub const DEFAULT_MINED_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub thresholds: ThresholdPair,
    /// Cap on each of positives and negatives per anchor.
    pub max_size: usize,
    pub seed: u64,
    pub exclude_self: bool,
}

impl MiningConfig {
    pub fn new(thresholds: ThresholdPair, seed: u64) -> Self {
        MiningConfig {
            thresholds,
            max_size: DEFAULT_MAX_SIZE,
            seed,
            exclude_self: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_size == 0 {
            return Err(Error::InvalidArgument("max_size must be >= 1".into()));
        }
        let t = &self.thresholds;
        if !(t.lower_bound.is_finite() && t.upper_bound.is_finite())
            || t.lower_bound > t.upper_bound
        {
            return Err(Error::InvalidArgument(format!(
                "invalid thresholds: lower {} upper {}",
                t.lower_bound, t.upper_bound
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MinedPairs {
    pub anchor_ordinal: usize,
    /// Ascending by distance to the anchor, then ordinal.
    pub positive_ordinals: Vec<usize>,
    /// Ascending by distance to the anchor, then ordinal.
    pub negative_ordinals: Vec<usize>,
}

/// Mines one anchor. Empty lists are valid output.
pub fn mine_anchor<S: NeighborSearch + ?Sized>(
    index: &S,
    anchor_ordinal: usize,
    config: &MiningConfig,
) -> Result<MinedPairs> {
    config.validate()?;
    if anchor_ordinal >= index.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor_ordinal} out of range for corpus of {}",
            index.len()
        )));
    }
    let anchor = index.point(anchor_ordinal);
    let t = &config.thresholds;

    let positives: Vec<usize> = index
        .query_radius(anchor, t.lower_bound)?
        .into_iter()
        .map(|n| n.ordinal)
        .filter(|&o| !(config.exclude_self && o == anchor_ordinal))
        .collect();

    // Negatives are the complement of the closed ball of radius upper_bound.
    let near: HashSet<usize> = index
        .query_radius(anchor, t.upper_bound)?
        .into_iter()
        .map(|n| n.ordinal)
        .collect();
    let negatives: Vec<usize> = if near.len() == index.len() {
        Vec::new()
    } else {
        index
            .query_all(anchor)?
            .into_iter()
            .map(|n: Neighbor| n.ordinal)
            .filter(|o| !near.contains(o))
            .collect()
    };

    let mut rng = item_rng(config.seed, anchor_ordinal as u64);
    let positive_ordinals = sample_capped(&positives, config.max_size, &mut rng);
    let negative_ordinals = sample_capped(&negatives, config.max_size, &mut rng);
    Ok(MinedPairs {
        anchor_ordinal,
        positive_ordinals,
        negative_ordinals,
    })
}

/// Keeps every item when under the cap, otherwise a uniform subset that
/// preserves the input order.
fn sample_capped<R: rand::Rng>(items: &[usize], cap: usize, rng: &mut R) -> Vec<usize> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut picked = index::sample(rng, items.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    /// Anchors with at least one positive and one negative, ascending by ordinal.
    pub mined: Vec<MinedPairs>,
    /// Text-level pairs aligned with `mined`.
    pub pairs: Vec<TrainingPair>,
    pub anchors_processed: usize,
    pub dropped: usize,
}

/// Mines every anchor of `corpus` in parallel on the current rayon pool.
///
/// Output is ordered by anchor ordinal and does not depend on the number of
/// worker threads. Negative texts equal to one of the anchor's positive
/// texts are removed so the two sides stay disjoint.
pub fn mine_corpus<S: NeighborSearch + ?Sized>(
    corpus: &Corpus,
    index: &S,
    config: &MiningConfig,
) -> Result<MiningOutcome> {
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mining needs at least 2 records, got {}",
            corpus.len()
        )));
    }
    if index.len() != corpus.len() {
        return Err(Error::InvalidArgument("index does not match corpus".into()));
    }
    config.validate()?;

    let results: Vec<Option<(MinedPairs, TrainingPair)>> = (0..corpus.len())
        .into_par_iter()
        .map(|anchor| {
            let mined = mine_anchor(index, anchor, config)?;
            Ok(to_training_pair(corpus, mined))
        })
        .collect::<Result<_>>()?;

    let anchors_processed = results.len();
    let (mined, pairs): (Vec<_>, Vec<_>) = results.into_iter().flatten().unzip();
    let dropped = anchors_processed - mined.len();
    Ok(MiningOutcome {
        mined,
        pairs,
        anchors_processed,
        dropped,
    })
}

fn to_training_pair(corpus: &Corpus, mined: MinedPairs) -> Option<(MinedPairs, TrainingPair)> {
    let text = |o: &usize| corpus.records()[*o].text.clone();
    let positive_pairs: Vec<String> = mined.positive_ordinals.iter().map(text).collect();
    let positive_set: HashSet<&str> = positive_pairs.iter().map(String::as_str).collect();
    let negative_pairs: Vec<String> = mined
        .negative_ordinals
        .iter()
        .map(text)
        .filter(|t| !positive_set.contains(t.as_str()))
        .collect();
    if positive_pairs.is_empty() || negative_pairs.is_empty() {
        return None;
    }
    let pair = TrainingPair {
        query: corpus.records()[mined.anchor_ordinal].text.clone(),
        positive_pairs,
        negative_pairs,
    };
    Some((mined, pair))
}

/// Mixes mined pairs into a synthetic dataset.
///
/// The output has `synthetic.len()` records: `round(mined_fraction · |synthetic|)`
/// drawn without replacement from `mined`, the rest from `synthetic`, then
/// shuffled. Fully determined by `seed`.
pub fn blend_datasets(
    synthetic: &[TrainingPair],
    mined: &[TrainingPair],
    mined_fraction: f64,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if !(0.0..=1.0).contains(&mined_fraction) {
        return Err(Error::InvalidArgument(format!(
            "mined_fraction must be in [0, 1], got {mined_fraction}"
        )));
    }
    let total = synthetic.len();
    let from_mined = (mined_fraction * total as f64).round() as usize;
    if from_mined > mined.len() {
        return Err(Error::InvalidArgument(format!(
            "blend needs {from_mined} mined records, only {} available",
            mined.len()
        )));
    }
    let from_synthetic = total - from_mined;

    let mut rng = global_rng(seed);
    let mut out: Vec<TrainingPair> = index::sample(&mut rng, mined.len(), from_mined)
        .into_iter()
        .map(|i| mined[i].clone())
        .collect();
    out.extend(
        index::sample(&mut rng, synthetic.len(), from_synthetic)
            .into_iter()
            .map(|i| synthetic[i].clone()),
    );
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingRecord;
    use crate::knn::{euclidean_distance, BruteForceIndex, KnnIndex};

    fn thresholds(lower: f64, upper: f64) -> ThresholdPair {
        ThresholdPair {
            lower_bound: lower,
            upper_bound: upper,
            lower_pct: 5.0,
            upper_pct: 95.0,
        }
    }

    fn corpus(points: &[Vec<f64>]) -> Corpus {
        Corpus::new(
            points
                .iter()
                .enumerate()
                .map(|(i, v)| EmbeddingRecord {
                    id: format!("r{i}"),
                    text: format!("text {i}"),
                    vector: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_point_example() {
        let pts = [vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 0.0]];
        let index = KnnIndex::build(pts.iter().map(Vec::as_slice)).unwrap();
        let config = MiningConfig::new(thresholds(0.5, 5.0), 1);
        let mined = mine_anchor(&index, 0, &config).unwrap();
        assert_eq!(mined.positive_ordinals, vec![1]);
        assert_eq!(mined.negative_ordinals, vec![2]);
    }

    #[test]
    fn self_is_excluded_unless_asked() {
        let pts = [vec![0.0], vec![0.1], vec![10.0]];
        let index = KnnIndex::build(pts.iter().map(Vec::as_slice)).unwrap();
        let mut config = MiningConfig::new(thresholds(0.5, 5.0), 1);
        assert!(!mine_anchor(&index, 0, &config)
            .unwrap()
            .positive_ordinals
            .contains(&0));
        config.exclude_self = false;
        assert_eq!(
            mine_anchor(&index, 0, &config).unwrap().positive_ordinals,
            vec![0, 1]
        );
    }

    #[test]
    fn isolated_anchor_has_no_positives() {
        let pts = [vec![0.0], vec![3.0], vec![10.0]];
        let index = KnnIndex::build(pts.iter().map(Vec::as_slice)).unwrap();
        let config = MiningConfig::new(thresholds(1.0, 5.0), 1);
        let mined = mine_anchor(&index, 0, &config).unwrap();
        assert!(mined.positive_ordinals.is_empty());
        assert_eq!(mined.negative_ordinals, vec![2]);
    }

    #[test]
    fn cap_limits_each_side() {
        let mut pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.01]).collect();
        pts.extend((0..20).map(|i| vec![100.0 + i as f64]));
        let index = KnnIndex::build(pts.iter().map(Vec::as_slice)).unwrap();
        let mut config = MiningConfig::new(thresholds(1.0, 50.0), 5);
        config.max_size = 3;
        let mined = mine_anchor(&index, 0, &config).unwrap();
        assert_eq!(mined.positive_ordinals.len(), 3);
        assert_eq!(mined.negative_ordinals.len(), 3);
        config.max_size = 0;
        assert!(mine_anchor(&index, 0, &config).is_err());
    }

    #[test]
    fn identical_pair_corpus_drops_everything() {
        let c = corpus(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let index = KnnIndex::from_corpus(&c).unwrap();
        let config = MiningConfig::new(thresholds(0.0, 0.0), 3);
        let out = mine_corpus(&c, &index, &config).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.dropped, 2);
        assert_eq!(out.anchors_processed, 2);
    }

    #[test]
    fn negatives_sharing_positive_text_are_removed() {
        let mut c = corpus(&[vec![0.0], vec![0.1], vec![10.0], vec![11.0]]);
        let mut records = c.clone().into_records();
        records[2].text = records[1].text.clone();
        c = Corpus::new(records).unwrap();
        let index = KnnIndex::from_corpus(&c).unwrap();
        let config = MiningConfig::new(thresholds(0.5, 5.0), 3);
        let out = mine_corpus(&c, &index, &config).unwrap();
        let first = &out.pairs[0];
        assert_eq!(first.positive_pairs, vec!["text 1"]);
        assert_eq!(first.negative_pairs, vec!["text 3"]);
        first.validate().unwrap();
    }

    #[test]
    fn kd_and_brute_force_mining_agree() {
        let pts: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                vec![
                    ((i * 7919) % 101) as f64 / 10.0,
                    ((i * 104729) % 37) as f64 / 5.0,
                ]
            })
            .collect();
        let c = corpus(&pts);
        let kd = KnnIndex::from_corpus(&c).unwrap();
        let bf = BruteForceIndex::from_corpus(&c).unwrap();
        let config = MiningConfig::new(thresholds(1.0, 8.0), 11);
        let a = mine_corpus(&c, &kd, &config).unwrap();
        let b = mine_corpus(&c, &bf, &config).unwrap();
        assert_eq!(a, b);
        for m in &a.mined {
            let anchor = &pts[m.anchor_ordinal];
            assert!(m
                .positive_ordinals
                .iter()
                .all(|&p| euclidean_distance(anchor, &pts[p]) <= 1.0));
            assert!(m
                .negative_ordinals
                .iter()
                .all(|&q| euclidean_distance(anchor, &pts[q]) > 8.0));
        }
    }

    #[test]
    fn sampling_is_uniform_over_candidates() {
        // Anchor 0 has 10 positive candidates; cap 5 → each chosen w.p. 1/2.
        let mut pts: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 * 0.01]).collect();
        pts.push(vec![100.0]);
        let index = BruteForceIndex::build(pts.iter().map(Vec::as_slice)).unwrap();
        let trials = 4000;
        let mut counts = [0usize; 12];
        for seed in 0..trials {
            let config = MiningConfig::new(thresholds(1.0, 50.0), seed);
            for p in mine_anchor(&index, 0, &config).unwrap().positive_ordinals {
                counts[p] += 1;
            }
        }
        let p = 0.5;
        let se = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..11] {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * se, "count {c}");
        }
        assert_eq!(counts[0], 0);
    }

    fn pair(tag: &str, i: usize) -> TrainingPair {
        TrainingPair {
            query: format!("{tag}-q{i}"),
            positive_pairs: vec![format!("{tag}-p{i}")],
            negative_pairs: vec![format!("{tag}-n{i}")],
        }
    }

    #[test]
    fn blend_counts() {
        let synthetic: Vec<_> = (0..1000).map(|i| pair("s", i)).collect();
        let mined: Vec<_> = (0..500).map(|i| pair("m", i)).collect();
        let out = blend_datasets(&synthetic, &mined, 0.3, 7).unwrap();
        assert_eq!(out.len(), 1000);
        let from_mined = out.iter().filter(|p| p.query.starts_with("m-")).count();
        assert_eq!(from_mined, 300);
        let distinct: HashSet<_> = out.iter().map(|p| p.query.clone()).collect();
        assert_eq!(distinct.len(), 1000);
        assert_eq!(out, blend_datasets(&synthetic, &mined, 0.3, 7).unwrap());
    }

    #[test]
    fn blend_edges() {
        let synthetic: Vec<_> = (0..10).map(|i| pair("s", i)).collect();
        let mined: Vec<_> = (0..12).map(|i| pair("m", i)).collect();
        let zero = blend_datasets(&synthetic, &mined, 0.0, 1).unwrap();
        let mut sorted = zero.clone();
        sorted.sort_by(|a, b| a.query.cmp(&b.query));
        let mut expect = synthetic.clone();
        expect.sort_by(|a, b| a.query.cmp(&b.query));
        assert_eq!(sorted, expect);

        let one = blend_datasets(&synthetic, &mined, 1.0, 1).unwrap();
        assert_eq!(one.len(), 10);
        assert!(one.iter().all(|p| p.query.starts_with("m-")));

        assert!(blend_datasets(&synthetic, &mined[..2], 0.5, 1).is_err());
        assert!(blend_datasets(&synthetic, &mined, 1.5, 1).is_err());
    }
}

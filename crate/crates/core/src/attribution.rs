//! Exact Shapley attribution over harmonized features.
//!
//! Players are features, not columns: a feature's whole one-hot group enters
//! or leaves a coalition together. A feature outside the coalition has its
//! columns zeroed (the missing encoding) and is excluded from the predictor's
//! active column mask. Values are computed by enumerating all `2^m`
//! coalitions, so `m` is capped at [`MAX_EXACT_FEATURES`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{masked_hamming_count, BitVector};
use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};
use crate::evaluation::rng_stream;
use crate::matching::{build_buckets, Bucket};
use crate::schema::FeatureGroup;

pub const MAX_EXACT_FEATURES: usize = 12;

/// A model scored under a feature coalition.
pub trait Predictor: Sync {
    /// `active` has the columns of the coalition's features set. Columns of
    /// absent features are already zero in `x`.
    fn predict(&self, x: &BitVector, active: &BitVector) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&BitVector, &BitVector) -> f64 + Sync,
{
    fn predict(&self, x: &BitVector, active: &BitVector) -> f64 {
        self(x, active)
    }
}

/// Predicts the bucket mean of the nearest candidate bucket, comparing only
/// active columns. Equidistant buckets are averaged weighted by member count,
/// so the empty coalition predicts the global candidate mean.
#[derive(Debug, Clone)]
pub struct BucketMeanPredictor {
    buckets: Vec<Bucket>,
}

impl BucketMeanPredictor {
    pub fn fit(candidate: &EncodedDataset) -> Result<Self> {
        if candidate.is_empty() {
            return Err(Error::Empty("candidate dataset"));
        }
        Ok(BucketMeanPredictor {
            buckets: build_buckets(candidate)?.buckets,
        })
    }
}

impl Predictor for BucketMeanPredictor {
    fn predict(&self, x: &BitVector, active: &BitVector) -> f64 {
        let mut best = u32::MAX;
        let (mut num, mut den) = (0.0, 0usize);
        for b in &self.buckets {
            let c = masked_hamming_count(x, &b.x, active);
            if c < best {
                best = c;
                num = 0.0;
                den = 0;
            }
            if c == best {
                num += b.y_mean * b.member_count as f64;
                den += b.member_count;
            }
        }
        num / den as f64
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exact Shapley value of every feature for one sample.
pub fn shapley<P: Predictor + ?Sized>(x: &BitVector, predictor: &P, features: &[FeatureGroup]) -> Result<Vec<f64>> {
    let m = features.len();
    if m > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            count: m,
            max: MAX_EXACT_FEATURES,
        });
    }
    for g in features {
        if g.end > x.len() {
            return Err(Error::Dimension {
                expected: g.end,
                found: x.len(),
            });
        }
    }
    let value: Vec<f64> = (0..1usize << m)
        .map(|coalition| {
            let mut active = BitVector::zeros(x.len());
            for (i, g) in features.iter().enumerate() {
                if coalition >> i & 1 == 1 {
                    active.fill_range(g.start, g.end, true);
                }
            }
            predictor.predict(&x.and(&active), &active)
        })
        .collect();
    let m_fact = factorial(m);
    let weight: Vec<f64> = (0..m)
        .map(|s| factorial(s) * factorial(m - s - 1) / m_fact)
        .collect();
    Ok((0..m)
        .map(|i| {
            let bit = 1usize << i;
            (0..1usize << m)
                .filter(|c| c & bit == 0)
                .map(|c| weight[c.count_ones() as usize] * (value[c | bit] - value[c]))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    More,
    Fewer,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub feature: String,
    /// The evaluated samples' category for this feature, or `Missing`.
    pub category: String,
    pub count: usize,
    pub mean_shapley: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shapley: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub seed: u64,
    pub evaluated: usize,
    pub entries: Vec<AttributionEntry>,
    pub importance: Vec<FeatureImportance>,
    /// Largest |Σφ − (f(full) − f(empty))| over evaluated samples.
    pub max_efficiency_error: f64,
}

pub const MISSING_CATEGORY: &str = "Missing";

/// Shapley values on a seeded subset of at most `sample_limit` samples,
/// averaged per `(feature, category)`.
pub fn attribute_dataset<P: Predictor + ?Sized>(
    ds: &EncodedDataset,
    predictor: &P,
    sample_limit: usize,
    seed: u64,
) -> Result<AttributionReport> {
    if ds.is_empty() {
        return Err(Error::Empty("attribution dataset"));
    }
    let groups = ds.dictionary().groups();
    let indices: Vec<usize> = if sample_limit >= ds.len() {
        (0..ds.len()).collect()
    } else {
        let mut idx = rand::seq::index::sample(&mut rng_stream(seed, 0), ds.len(), sample_limit).into_vec();
        idx.sort_unstable();
        idx
    };

    let per_sample: Vec<(Vec<f64>, f64)> = indices
        .par_iter()
        .map(|&i| {
            let x = &ds.samples()[i].x;
            let phi = shapley(x, predictor, groups)?;
            let full = BitVector::from_bools(&vec![true; x.len()]);
            let empty = BitVector::zeros(x.len());
            let gap = predictor.predict(x, &full) - predictor.predict(&empty, &empty);
            Ok((phi.clone(), (phi.iter().sum::<f64>() - gap).abs()))
        })
        .collect::<Result<_>>()?;

    let dict = ds.dictionary();
    let mut entries = Vec::new();
    let mut importance = Vec::new();
    for (f, g) in groups.iter().enumerate() {
        let width = g.width();
        // Slot `width` collects samples with the feature missing.
        let mut sum = vec![0.0; width + 1];
        let mut count = vec![0usize; width + 1];
        let mut abs = 0.0;
        for (&i, (phi, _)) in indices.iter().zip(&per_sample) {
            let x = &ds.samples()[i].x;
            let slot = (g.start..g.end).position(|c| x.get(c)).unwrap_or(width);
            sum[slot] += phi[f];
            count[slot] += 1;
            abs += phi[f].abs();
        }
        for slot in 0..=width {
            if count[slot] == 0 {
                continue;
            }
            let mean = sum[slot] / count[slot] as f64;
            entries.push(AttributionEntry {
                feature: g.name.clone(),
                category: if slot < width {
                    dict.columns()[g.start + slot].category.clone()
                } else {
                    MISSING_CATEGORY.into()
                },
                count: count[slot],
                mean_shapley: mean,
                direction: if mean > 0.0 {
                    Direction::More
                } else if mean < 0.0 {
                    Direction::Fewer
                } else {
                    Direction::Neutral
                },
            });
        }
        importance.push(FeatureImportance {
            feature: g.name.clone(),
            mean_abs_shapley: abs / indices.len() as f64,
        });
    }
    Ok(AttributionReport {
        seed,
        evaluated: indices.len(),
        entries,
        importance,
        max_efficiency_error: per_sample.iter().map(|(_, e)| *e).fold(0.0, f64::max),
    })
}

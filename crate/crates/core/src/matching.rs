//! Bucketed nearest-neighbor imputation under Hamming distance.
//!
//! The candidate (ground-truth) dataset is grouped into buckets of identical
//! covariate vectors carrying the mean target. Every source sample is matched
//! to its nearest bucket, receives `bucket mean / w` with
//! `w = |source| / |candidate|`, and sample values are summed per household.
//!
//! Matching is exact. Source samples sharing a covariate vector are searched
//! once. Ties go to the smallest target index unless a seeded random
//! tie-break is requested, in which case sample `i` draws from its own stream
//! derived from `(seed, i)`, so results never depend on the worker count.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{hamming_count, BitVector};
use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};

/// A group of identical candidate covariate vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub x: BitVector,
    pub member_count: usize,
    pub y_mean: f64,
}

/// Buckets in first-occurrence order plus the bucket of every candidate sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSet {
    pub buckets: Vec<Bucket>,
    pub membership: Vec<usize>,
}

impl BucketSet {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

pub fn build_buckets(candidate: &EncodedDataset) -> Result<BucketSet> {
    let mut slot: HashMap<&BitVector, usize> = HashMap::new();
    let mut members: Vec<Vec<f64>> = Vec::new();
    let mut xs: Vec<&BitVector> = Vec::new();
    let mut membership = Vec::with_capacity(candidate.len());
    for (i, s) in candidate.samples().iter().enumerate() {
        let y = s.y.ok_or_else(|| {
            Error::Precondition(format!(
                "candidate sample {i} (household {:?}) has no target; filter to labeled samples first",
                s.household_id
            ))
        })?;
        let b = *slot.entry(&s.x).or_insert_with(|| {
            xs.push(&s.x);
            members.push(Vec::new());
            xs.len() - 1
        });
        members[b].push(y);
        membership.push(b);
    }
    let buckets = xs
        .into_iter()
        .zip(members)
        .map(|(x, ys)| Bucket {
            x: x.clone(),
            member_count: ys.len(),
            y_mean: ys.iter().sum::<f64>() / ys.len() as f64,
        })
        .collect();
    Ok(BucketSet {
        buckets,
        membership,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum TieBreak {
    /// Smallest target index among the equidistant ones.
    Index,
    /// Uniform among the equidistant targets, per-sample stream from `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStrategy {
    /// Exhaustive scan over every target.
    #[default]
    Scan,
    /// Targets grouped by popcount; a group whose popcount differs from the
    /// query's by more than the best count so far cannot hold a closer target.
    PopcountPruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOptions {
    pub tie_break: TieBreak,
    pub strategy: SearchStrategy,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            tie_break: TieBreak::Index,
            strategy: SearchStrategy::Scan,
        }
    }
}

/// Exact nearest-neighbor index over a list of bit-vectors. Duplicate target
/// vectors are stored once; each remembers the original indices it stands for.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    distinct: Vec<BitVector>,
    occurrences: Vec<Vec<usize>>,
    by_popcount: Vec<(u32, Vec<usize>)>,
}

/// Search result in distinct-target space.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Hit {
    count: u32,
    /// Tied distinct targets, ascending. The first is the index-rule winner.
    tied: Vec<usize>,
}

impl NeighborIndex {
    pub fn new<'a>(targets: impl IntoIterator<Item = &'a BitVector>, dim: usize) -> Result<Self> {
        let mut slot: HashMap<&BitVector, usize> = HashMap::new();
        let mut distinct: Vec<BitVector> = Vec::new();
        let mut occurrences: Vec<Vec<usize>> = Vec::new();
        for (i, x) in targets.into_iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: x.len(),
                });
            }
            match slot.get(x) {
                Some(&k) => occurrences[k].push(i),
                None => {
                    slot.insert(x, distinct.len());
                    distinct.push(x.clone());
                    occurrences.push(vec![i]);
                }
            }
        }
        if distinct.is_empty() {
            return Err(Error::Empty("nearest-neighbor targets"));
        }
        let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (k, x) in distinct.iter().enumerate() {
            groups.entry(x.count_ones()).or_default().push(k);
        }
        Ok(NeighborIndex {
            dim,
            distinct,
            occurrences,
            by_popcount: groups.into_iter().collect(),
        })
    }

    pub fn target_count(&self) -> usize {
        self.occurrences.iter().map(Vec::len).sum()
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct.len()
    }

    fn search(&self, q: &BitVector, strategy: SearchStrategy, want_ties: bool) -> Hit {
        let mut best = u32::MAX;
        let mut tied: Vec<usize> = Vec::new();
        let mut visit = |k: usize, best: &mut u32| {
            let c = hamming_count(q, &self.distinct[k]);
            if c < *best {
                *best = c;
                tied.clear();
                tied.push(k);
            } else if c == *best && (want_ties || k < tied[0]) {
                if want_ties {
                    tied.push(k);
                } else {
                    tied[0] = k;
                }
            }
        };
        match strategy {
            SearchStrategy::Scan => (0..self.distinct.len()).for_each(|k| visit(k, &mut best)),
            SearchStrategy::PopcountPruned => {
                let p = q.count_ones();
                let groups = &self.by_popcount;
                let mid = groups.partition_point(|(c, _)| *c < p);
                let (mut lo, mut hi) = (mid, mid);
                loop {
                    let down = (lo > 0).then(|| p - groups[lo - 1].0);
                    let up = (hi < groups.len()).then(|| groups[hi].0 - p);
                    let take_up = match (down, up) {
                        (None, None) => break,
                        (Some(_), None) => false,
                        (None, Some(_)) => true,
                        (Some(d), Some(u)) => u <= d,
                    };
                    let gap = if take_up { up.unwrap() } else { down.unwrap() };
                    // Popcount difference is a lower bound on the Hamming count.
                    if gap > best {
                        break;
                    }
                    let group = if take_up {
                        hi += 1;
                        &groups[hi - 1].1
                    } else {
                        lo -= 1;
                        &groups[lo].1
                    };
                    group.iter().for_each(|&k| visit(k, &mut best));
                }
                tied.sort_unstable();
            }
        }
        Hit { count: best, tied }
    }

    /// Matches every query to an original target index.
    pub fn match_all(&self, queries: &[&BitVector], opts: MatchOptions) -> Result<MatchAssignment> {
        for q in queries {
            if q.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    found: q.len(),
                });
            }
        }
        let mut slot: HashMap<&BitVector, usize> = HashMap::new();
        let mut unique: Vec<&BitVector> = Vec::new();
        let query_slot: Vec<usize> = queries
            .iter()
            .map(|&q| {
                *slot.entry(q).or_insert_with(|| {
                    unique.push(q);
                    unique.len() - 1
                })
            })
            .collect();
        let want_ties = matches!(opts.tie_break, TieBreak::Random { .. });
        let hits: Vec<Hit> = unique
            .par_iter()
            .map(|q| self.search(q, opts.strategy, want_ties))
            .collect();

        let pick = |i: usize, hit: &Hit| -> usize {
            match opts.tie_break {
                TieBreak::Index => self.occurrences[hit.tied[0]][0],
                TieBreak::Random { seed } => {
                    let total: usize = hit.tied.iter().map(|&k| self.occurrences[k].len()).sum();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let mut r = rng.random_range(0..total);
                    for &k in &hit.tied {
                        let occ = &self.occurrences[k];
                        if r < occ.len() {
                            return occ[r];
                        }
                        r -= occ.len();
                    }
                    unreachable!("draw within total multiplicity")
                }
            }
        };
        let target: Vec<usize> = query_slot
            .par_iter()
            .enumerate()
            .map(|(i, &u)| pick(i, &hits[u]))
            .collect();
        let mismatches: Vec<u32> = query_slot.iter().map(|&u| hits[u].count).collect();
        let distance = mismatches
            .iter()
            .map(|&c| c as f64 / self.dim as f64)
            .collect();
        Ok(MatchAssignment {
            dimension: self.dim,
            target,
            mismatches,
            distance,
        })
    }
}

/// The matching function: query index -> target index, with distances.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub dimension: usize,
    pub target: Vec<usize>,
    /// Differing coordinates between query and matched target.
    pub mismatches: Vec<u32>,
    /// `mismatches / dimension`.
    pub distance: Vec<f64>,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Nearest bucket for every source sample.
pub fn nearest_neighbor(
    source: &EncodedDataset,
    buckets: &[Bucket],
    opts: MatchOptions,
) -> Result<MatchAssignment> {
    if buckets.is_empty() {
        return Err(Error::Empty("bucket list"));
    }
    let index = NeighborIndex::new(buckets.iter().map(|b| &b.x), source.dimension())?;
    let queries: Vec<&BitVector> = source.samples().iter().map(|s| &s.x).collect();
    index.match_all(&queries, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// One weight `|source| / |candidate|` for every sample.
    #[default]
    Global,
    /// Divide by the number of source samples in the sample's household, so a
    /// household's total is the mean of its matched bucket values. This is an
    /// interpretation of the household-inflation rationale, not the
    /// reference method.
    PerHousehold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImputeOptions {
    /// Overwrite observed targets too; otherwise only missing ones are filled.
    pub impute_all: bool,
    pub matching: MatchOptions,
    pub weight_mode: WeightMode,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            impute_all: false,
            matching: MatchOptions::default(),
            weight_mode: WeightMode::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub per_sample_y: Vec<f64>,
    /// Whether each sample's value was imputed (vs. observed and kept).
    pub imputed: Vec<bool>,
    pub per_household_y: IndexMap<String, f64>,
    pub weight: f64,
    /// Absent for baselines that do not match.
    pub assignment: Option<MatchAssignment>,
    pub bucket_count: usize,
}

/// Sums per-sample values by household in first-appearance order.
pub fn household_sums(source: &EncodedDataset, per_sample_y: &[f64]) -> IndexMap<String, f64> {
    let mut totals: IndexMap<String, f64> = IndexMap::new();
    for (s, y) in source.samples().iter().zip(per_sample_y) {
        *totals.entry(s.household_id.clone()).or_insert(0.0) += y;
    }
    totals
}

/// Labeled candidate samples followed by labeled source samples: the donor
/// pool used when imputing a partially labeled source.
pub fn donor_pool(candidate: &EncodedDataset, source: &EncodedDataset) -> Result<EncodedDataset> {
    let mut pool = candidate.labeled();
    pool.extend_from(&source.labeled())?;
    Ok(pool)
}

pub fn impute(
    source: &EncodedDataset,
    candidate: &EncodedDataset,
    opts: ImputeOptions,
) -> Result<ImputationResult> {
    source.ensure_compatible(candidate)?;
    if candidate.is_empty() {
        return Err(Error::Empty("candidate dataset"));
    }
    if source.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    let buckets = build_buckets(candidate)?;
    let assignment = nearest_neighbor(source, &buckets.buckets, opts.matching)?;
    let weight = source.len() as f64 / candidate.len() as f64;

    let household_size: HashMap<&str, usize> = match opts.weight_mode {
        WeightMode::Global => HashMap::new(),
        WeightMode::PerHousehold => {
            let mut m = HashMap::new();
            for s in source.samples() {
                *m.entry(s.household_id.as_str()).or_insert(0) += 1;
            }
            m
        }
    };

    let mut per_sample_y = Vec::with_capacity(source.len());
    let mut imputed = Vec::with_capacity(source.len());
    for (s, &b) in source.samples().iter().zip(&assignment.target) {
        match s.y {
            Some(y) if !opts.impute_all => {
                per_sample_y.push(y);
                imputed.push(false);
            }
            _ => {
                let divisor = match opts.weight_mode {
                    WeightMode::Global => weight,
                    WeightMode::PerHousehold => household_size[s.household_id.as_str()] as f64,
                };
                per_sample_y.push(buckets.buckets[b].y_mean / divisor);
                imputed.push(true);
            }
        }
    }
    let per_household_y = household_sums(source, &per_sample_y);
    Ok(ImputationResult {
        per_sample_y,
        imputed,
        per_household_y,
        weight,
        assignment: Some(assignment),
        bucket_count: buckets.len(),
    })
}

//! Distribution-level evaluation of imputed household totals.
//!
//! Households of two surveys are not the same households, so totals are
//! compared as ascending-sorted vectors. The protocol draws, per iteration, a
//! random subset of imputed households as large as the truth set and records
//! the sorted MSE against the truth plus the mean and standard deviation of
//! the drawn totals; those are averaged over the first `k` iterations for each
//! cutoff `k`.
//!
//! Randomness: iteration `i` uses ChaCha8 seeded from the report seed with
//! stream id `i`, so serial and parallel runs draw identical subsets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};
use crate::matching::{household_sums, ImputationResult};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = iteration";
pub const DEFAULT_CUTOFFS: [usize; 5] = [100, 200, 300, 400, 500];

/// Generator for stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mse_of_sorted(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean squared error between the ascending-sorted vectors.
pub fn sorted_mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("sorted MSE input"));
    }
    Ok(mse_of_sorted(&sorted(a), &sorted(b)))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Draws `n` of `values` without replacement using stream `stream`.
pub fn draw_subset(values: &[f64], n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = rng_stream(seed, stream);
    rand::seq::index::sample(&mut rng, values.len(), n)
        .into_iter()
        .map(|i| values[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSummary {
    pub iterations: usize,
    /// Mean over iterations of the sorted MSE to the truth.
    pub mse: f64,
    /// Mean over iterations of the drawn totals' mean.
    pub mean: f64,
    /// Mean over iterations of the drawn totals' standard deviation.
    pub stddev: f64,
    /// Sample standard deviation of the per-iteration MSEs.
    pub mse_spread: f64,
    /// Standard error of `mse`: `mse_spread / sqrt(iterations)`.
    pub mse_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub name: String,
    pub per_cutoff: Vec<CutoffSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub rng: String,
    pub n: usize,
    pub population: usize,
    pub cutoffs: Vec<usize>,
    pub truth_mean: f64,
    pub truth_stddev: f64,
    pub per_cutoff: Vec<CutoffSummary>,
    /// Other methods run through the same draws (e.g. mean imputation or an
    /// externally computed vector).
    pub baselines: Vec<BaselineSummary>,
}

struct Iteration {
    mse: f64,
    mean: f64,
    std: f64,
}

fn validate_protocol(values: &[f64], truth: &[f64], n: usize, cutoffs: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::Precondition("subset size must be positive".into()));
    }
    if n > values.len() {
        return Err(Error::Precondition(format!(
            "subset size {n} exceeds population of {} households",
            values.len()
        )));
    }
    if truth.len() != n {
        return Err(Error::Precondition(format!(
            "truth has {} households but subset size is {n}",
            truth.len()
        )));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Precondition("cutoffs must be positive and non-empty".into()));
    }
    Ok(())
}

fn run_protocol(values: &[f64], truth_sorted: &[f64], n: usize, cutoffs: &[usize], seed: u64) -> Vec<CutoffSummary> {
    let max = *cutoffs.iter().max().unwrap();
    let iterations: Vec<Iteration> = (0..max)
        .into_par_iter()
        .map(|i| {
            let drawn = draw_subset(values, n, seed, i as u64);
            let (mean, std) = mean_std(&drawn);
            Iteration {
                mse: mse_of_sorted(&sorted(&drawn), truth_sorted),
                mean,
                std,
            }
        })
        .collect();
    cutoffs
        .iter()
        .map(|&k| {
            let head = &iterations[..k];
            let kf = k as f64;
            let mse = head.iter().map(|it| it.mse).sum::<f64>() / kf;
            let spread = if k > 1 {
                (head.iter().map(|it| (it.mse - mse).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt()
            } else {
                0.0
            };
            CutoffSummary {
                iterations: k,
                mse,
                mean: head.iter().map(|it| it.mean).sum::<f64>() / kf,
                stddev: head.iter().map(|it| it.std).sum::<f64>() / kf,
                mse_spread: spread,
                mse_std_error: spread / kf.sqrt(),
            }
        })
        .collect()
}

/// Runs the random-subset protocol: `n` must equal the truth size.
pub fn subsample_compare(
    imputed: &[f64],
    truth: &[f64],
    n: usize,
    cutoffs: &[usize],
    seed: u64,
) -> Result<EvaluationReport> {
    validate_protocol(imputed, truth, n, cutoffs)?;
    let truth_sorted = sorted(truth);
    let (truth_mean, truth_stddev) = mean_std(truth);
    Ok(EvaluationReport {
        seed,
        rng: RNG_ALGORITHM.into(),
        n,
        population: imputed.len(),
        cutoffs: cutoffs.to_vec(),
        truth_mean,
        truth_stddev,
        per_cutoff: run_protocol(imputed, &truth_sorted, n, cutoffs, seed),
        baselines: Vec::new(),
    })
}

impl EvaluationReport {
    /// Runs another method's totals through the same protocol and seed.
    pub fn add_baseline(&mut self, name: impl Into<String>, totals: &[f64], truth: &[f64]) -> Result<()> {
        validate_protocol(totals, truth, self.n, &self.cutoffs)?;
        let per_cutoff = run_protocol(totals, &sorted(truth), self.n, &self.cutoffs, self.seed);
        self.baselines.push(BaselineSummary {
            name: name.into(),
            per_cutoff,
        });
        Ok(())
    }

    pub fn at(&self, cutoff: usize) -> Option<&CutoffSummary> {
        self.per_cutoff.iter().find(|c| c.iterations == cutoff)
    }
}

/// Sorted drawn subset and sorted truth for iteration `iteration`, for plotting.
pub fn sorted_vectors(imputed: &[f64], truth: &[f64], n: usize, seed: u64, iteration: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_protocol(imputed, truth, n, &[1])?;
    Ok((sorted(&draw_subset(imputed, n, seed, iteration)), sorted(truth)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeReport {
    pub mse: f64,
    pub n: usize,
    pub seed: u64,
    pub rng: String,
    pub early_households: usize,
    pub late_households: usize,
}

/// Sorted MSE between size-`n` random subsets of two years' totals. A side
/// whose size equals `n` is used whole.
pub fn spike(early: &[f64], late: &[f64], n: usize, seed: u64) -> Result<SpikeReport> {
    if n == 0 {
        return Err(Error::Precondition("subset size must be positive".into()));
    }
    if n > early.len() || n > late.len() {
        return Err(Error::Precondition(format!(
            "subset size {n} exceeds a population ({} / {})",
            early.len(),
            late.len()
        )));
    }
    let pick = |v: &[f64], stream| {
        if v.len() == n {
            v.to_vec()
        } else {
            draw_subset(v, n, seed, stream)
        }
    };
    let mse = sorted_mse(&pick(early, 0), &pick(late, 1))?;
    Ok(SpikeReport {
        mse,
        n,
        seed,
        rng: RNG_ALGORITHM.into(),
        early_households: early.len(),
        late_households: late.len(),
    })
}

/// Fills every missing target with the mean of the present ones.
pub fn baseline_mean_impute(source: &EncodedDataset) -> Result<ImputationResult> {
    let present: Vec<f64> = source.samples().iter().filter_map(|s| s.y).collect();
    if present.is_empty() {
        return Err(Error::Precondition(
            "mean imputation needs at least one present target".into(),
        ));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let per_sample_y: Vec<f64> = source.samples().iter().map(|s| s.y.unwrap_or(mean)).collect();
    let imputed = source.samples().iter().map(|s| s.y.is_none()).collect();
    Ok(ImputationResult {
        per_household_y: household_sums(source, &per_sample_y),
        per_sample_y,
        imputed,
        weight: 1.0,
        assignment: None,
        bucket_count: 0,
    })
}

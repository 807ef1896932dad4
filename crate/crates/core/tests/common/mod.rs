#![allow(dead_code)]

use std::collections::HashMap;

use delivery_fusion::{BitVector, EncodedDataset, EncodedSample, FeatureDictionary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Single-feature dictionary with `d` categories; encodings need not be one-hot
/// for the matching kernels.
pub fn flat_dictionary(d: usize) -> FeatureDictionary {
    let cats: Vec<String> = (0..d).map(|i| format!("c{i}")).collect();
    FeatureDictionary::from_features([("F", cats)]).unwrap()
}

pub fn random_bits(rng: &mut ChaCha8Rng, d: usize) -> BitVector {
    let bits: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
    BitVector::from_bools(&bits)
}

/// Vectors drawn from a small pool so duplicates and ties are common.
pub fn random_dataset(rng: &mut ChaCha8Rng, d: usize, len: usize, pool: usize, labeled: bool) -> EncodedDataset {
    let patterns: Vec<BitVector> = (0..pool.max(1)).map(|_| random_bits(rng, d)).collect();
    let samples = (0..len)
        .map(|i| {
            let x = patterns[rng.random_range(0..patterns.len())].clone();
            let y = labeled.then(|| rng.random_range(0..6) as f64);
            EncodedSample::new(format!("h{}", i / 3), x, y)
        })
        .collect();
    EncodedDataset::with_samples(flat_dictionary(d), "t", 2017, samples).unwrap()
}

/// Differing coordinates counted bit by bit.
pub fn naive_count(a: &BitVector, b: &BitVector) -> usize {
    a.iter().zip(b.iter()).filter(|(x, y)| x != y).count()
}

/// Distinct x in first-appearance order with (member count, mean y).
pub fn naive_buckets(ds: &EncodedDataset) -> Vec<(BitVector, usize, f64)> {
    let mut order: Vec<BitVector> = Vec::new();
    let mut groups: HashMap<BitVector, Vec<f64>> = HashMap::new();
    for s in ds.samples() {
        let e = groups.entry(s.x.clone()).or_insert_with(|| {
            order.push(s.x.clone());
            Vec::new()
        });
        e.push(s.y.unwrap());
    }
    order
        .into_iter()
        .map(|x| {
            let ys = &groups[&x];
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            (x, ys.len(), mean)
        })
        .collect()
}

/// Index of the nearest target, smallest index on ties.
pub fn naive_nearest(q: &BitVector, targets: &[BitVector]) -> usize {
    let mut best = 0;
    for (i, t) in targets.iter().enumerate() {
        if naive_count(q, t) < naive_count(q, &targets[best]) {
            best = i;
        }
    }
    best
}

/// Nested synthesis computed with plain loops, averaging over contributing
/// source1 nodes. Returns bucket index -> synthesized y for reached buckets.
pub fn naive_synthesis(
    source2: &EncodedDataset,
    source1: &EncodedDataset,
    candidate: &EncodedDataset,
    w1: f64,
    w2: f64,
) -> Vec<(usize, f64)> {
    let buckets = naive_buckets(candidate);
    let bucket_x: Vec<BitVector> = buckets.iter().map(|b| b.0.clone()).collect();
    let s1_x: Vec<BitVector> = source1.samples().iter().map(|s| s.x.clone()).collect();
    let mu1: Vec<usize> = s1_x.iter().map(|x| naive_nearest(x, &bucket_x)).collect();
    let mu2: Vec<usize> = source2.samples().iter().map(|s| naive_nearest(&s.x, &s1_x)).collect();
    let mut out = Vec::new();
    for b in 0..buckets.len() {
        let mut total = 0.0;
        let mut contributing = 0;
        for s in (0..s1_x.len()).filter(|&s| mu1[s] == b) {
            let g: Vec<f64> = (0..mu2.len())
                .filter(|&g| mu2[g] == s)
                .map(|g| source2.samples()[g].y.unwrap())
                .collect();
            if !g.is_empty() {
                total += w1 * g.iter().map(|y| w2 * y).sum::<f64>() / g.len() as f64;
                contributing += 1;
            }
        }
        if contributing > 0 {
            out.push((b, total / contributing as f64));
        }
    }
    out
}

//! Future-year synthesis by nested nearest-neighbor matching.
//!
//! Three datasets share one dictionary: a labeled candidate (V1 after
//! bucketing), a base-year source (V2) and a later-year source (V3). Each V3
//! sample is matched to its nearest V2 sample and each V2 sample to its
//! nearest V1 bucket, forming a tri-partite graph. A bucket reachable from V3
//! gets a synthesized target averaged hierarchically:
//!
//! ```text
//! y(v1) = Σ_{s ∈ S} w1 · (Σ_{g ∈ G(s)} w2 · y(g)) / |G(s)|  /  norm
//! ```
//!
//! where `S` are the V2 nodes matched to `v1` and `G(s)` the V3 nodes matched
//! to `s`. Nodes with empty `G(s)` add nothing to the sum. [`OuterNorm`]
//! selects `norm`.

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::dataset::{EncodedDataset, EncodedSample};
use crate::error::{Error, Result};
use crate::matching::{build_buckets, BucketSet, MatchAssignment, MatchOptions, NeighborIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct TriPartiteGraph {
    /// V1.
    pub buckets: BucketSet,
    /// |V2|.
    pub source1_len: usize,
    /// Targets of the V3 nodes.
    pub source2_y: Vec<f64>,
    /// E1: V2 -> V1.
    pub mu1: MatchAssignment,
    /// E2: V3 -> V2.
    pub mu2: MatchAssignment,
}

impl TriPartiteGraph {
    /// Bucket reached by a V3 node through E2 then E1.
    pub fn nested(&self, v3: usize) -> usize {
        self.mu1.target[self.mu2.target[v3]]
    }
}

/// Builds both matchings. `source2` must be fully labeled; `candidate` too.
pub fn nested_match(
    source2: &EncodedDataset,
    source1: &EncodedDataset,
    candidate: &EncodedDataset,
    opts: MatchOptions,
) -> Result<TriPartiteGraph> {
    source1.ensure_compatible(candidate)?;
    source2.ensure_compatible(candidate)?;
    if candidate.is_empty() {
        return Err(Error::Empty("candidate dataset"));
    }
    if source1.is_empty() {
        return Err(Error::Empty("source1 dataset"));
    }
    if source2.is_empty() {
        return Err(Error::Empty("source2 dataset"));
    }
    let source2_y = source2
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.y.ok_or_else(|| {
                Error::Precondition(format!(
                    "source2 sample {i} has no target; drop unlabeled samples before matching"
                ))
            })
        })
        .collect::<Result<Vec<f64>>>()?;

    let buckets = build_buckets(candidate)?;
    let dim = candidate.dimension();

    let bucket_index = NeighborIndex::new(buckets.buckets.iter().map(|b| &b.x), dim)?;
    let s1: Vec<&BitVector> = source1.samples().iter().map(|s| &s.x).collect();
    let mu1 = bucket_index.match_all(&s1, opts)?;

    let source1_index = NeighborIndex::new(s1.iter().copied(), dim)?;
    let s2: Vec<&BitVector> = source2.samples().iter().map(|s| &s.x).collect();
    let mu2 = source1_index.match_all(&s2, opts)?;

    Ok(TriPartiteGraph {
        buckets,
        source1_len: source1.len(),
        source2_y,
        mu1,
        mu2,
    })
}

/// Denominator of the outer average for a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterNorm {
    /// V2 nodes matched to the bucket that are themselves reached from V3.
    #[default]
    Contributing,
    /// Every V2 node matched to the bucket.
    Matched,
    /// All of V2, whatever the bucket.
    AllSource1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntry {
    pub bucket: usize,
    pub x: BitVector,
    pub y: f64,
    /// |S|: V2 nodes matched to the bucket.
    pub n_s: usize,
    /// V2 nodes of S with a non-empty G(s).
    pub n_s_reached: usize,
    /// Σ |G(s)| over S.
    pub n_g_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub entries: Vec<SyntheticEntry>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bucket: usize) -> Option<&SyntheticEntry> {
        self.entries
            .binary_search_by_key(&bucket, |e| e.bucket)
            .ok()
            .map(|i| &self.entries[i])
    }
}

pub fn synthesize(graph: &TriPartiteGraph, w1: f64, w2: f64, norm: OuterNorm) -> Result<SyntheticDataset> {
    for (name, w) in [("w1", w1), ("w2", w2)] {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Precondition(format!("{name} must be positive, got {w}")));
        }
    }
    let n1 = graph.source1_len;
    let mut g_sum = vec![0.0; n1];
    let mut g_count = vec![0usize; n1];
    for (g, &s) in graph.mu2.target.iter().enumerate() {
        g_sum[s] += w2 * graph.source2_y[g];
        g_count[s] += 1;
    }

    let k = graph.buckets.len();
    let mut sum = vec![0.0; k];
    let mut n_s = vec![0usize; k];
    let mut n_reached = vec![0usize; k];
    let mut n_g = vec![0usize; k];
    for (s, &b) in graph.mu1.target.iter().enumerate() {
        n_s[b] += 1;
        if g_count[s] > 0 {
            sum[b] += w1 * g_sum[s] / g_count[s] as f64;
            n_reached[b] += 1;
            n_g[b] += g_count[s];
        }
    }

    let entries = (0..k)
        .filter(|&b| n_reached[b] > 0)
        .map(|b| {
            let denom = match norm {
                OuterNorm::Contributing => n_reached[b],
                OuterNorm::Matched => n_s[b],
                OuterNorm::AllSource1 => n1,
            };
            SyntheticEntry {
                bucket: b,
                x: graph.buckets.buckets[b].x.clone(),
                y: sum[b] / denom as f64,
                n_s: n_s[b],
                n_s_reached: n_reached[b],
                n_g_total: n_g[b],
            }
        })
        .collect();
    Ok(SyntheticDataset { entries })
}

/// Expands a synthetic dataset back onto the candidate's samples: every
/// candidate sample whose bucket was synthesized is emitted with the bucket's
/// synthesized target. Samples of unreached buckets are left out.
pub fn to_encoded(
    candidate: &EncodedDataset,
    graph: &TriPartiteGraph,
    synthetic: &SyntheticDataset,
    survey_id: &str,
    year: i32,
) -> Result<EncodedDataset> {
    if graph.buckets.membership.len() != candidate.len() {
        return Err(Error::Precondition(
            "candidate does not match the graph's bucket membership".into(),
        ));
    }
    let mut out = EncodedDataset::new(candidate.dictionary().clone(), survey_id, year);
    for (s, &b) in candidate.samples().iter().zip(&graph.buckets.membership) {
        if let Some(e) = synthetic.get(b) {
            out.push(EncodedSample::new(s.household_id.clone(), s.x.clone(), Some(e.y)))?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SynthesisOptions {
    pub matching: MatchOptions,
    pub norm: OuterNorm,
}

#[derive(Debug, Clone)]
pub struct SynthesisRun {
    pub graph: TriPartiteGraph,
    pub synthetic: SyntheticDataset,
    pub w1: f64,
    pub w2: f64,
    /// Source2 samples dropped for a missing target.
    pub dropped_source2: usize,
    /// The labeled candidate the buckets were built from.
    pub candidate: EncodedDataset,
}

impl SynthesisRun {
    pub fn to_encoded(&self, survey_id: &str, year: i32) -> Result<EncodedDataset> {
        to_encoded(&self.candidate, &self.graph, &self.synthetic, survey_id, year)
    }
}

/// Full pipeline: drop unlabeled source2 samples and unlabeled candidate
/// samples, match, derive `w1 = |source1| / |candidate|` and
/// `w2 = |source2| / |source1|` from the post-drop counts, synthesize.
pub fn generate(
    source2: &EncodedDataset,
    source1: &EncodedDataset,
    candidate: &EncodedDataset,
    opts: SynthesisOptions,
) -> Result<SynthesisRun> {
    let labeled2 = source2.labeled();
    let dropped_source2 = source2.len() - labeled2.len();
    let candidate = candidate.labeled();
    let graph = nested_match(&labeled2, source1, &candidate, opts.matching)?;
    let w1 = source1.len() as f64 / candidate.len() as f64;
    let w2 = labeled2.len() as f64 / source1.len() as f64;
    let synthetic = synthesize(&graph, w1, w2, opts.norm)?;
    Ok(SynthesisRun {
        graph,
        synthetic,
        w1,
        w2,
        dropped_source2,
        candidate,
    })
}

//! Fixed-length bit-vectors packed into 64-bit words.
//!
//! Every harmonized sample is a one-hot covariate vector of length `d`. The
//! matching kernels only ever need XOR, AND and popcount over these, so the
//! representation keeps the words inline for `d <= 128` (the harmonized set
//! has `d = 26`).

use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};

type Words = SmallVec<[u64; 2]>;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    len: usize,
    words: Words,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        let mut words = Words::new();
        words.resize(len.div_ceil(64), 0);
        BitVector { len, words }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = BitVector::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Parses a string of `0`/`1` characters, bit 0 first.
    pub fn parse(s: &str) -> Option<Self> {
        let mut v = BitVector::zeros(s.len());
        for (i, c) in s.bytes().enumerate() {
            match c {
                b'0' => {}
                b'1' => v.set(i, true),
                _ => return None,
            }
        }
        Some(v)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of set bits in `start..end`.
    pub fn count_ones_in(&self, start: usize, end: usize) -> u32 {
        (start..end).filter(|&i| self.get(i)).count() as u32
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Clears every bit outside `keep`.
    pub fn and(&self, keep: &BitVector) -> BitVector {
        debug_assert_eq!(self.len, keep.len);
        BitVector {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(keep.words.iter())
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    /// Sets bits `start..end` to `value`.
    pub fn fill_range(&mut self, start: usize, end: usize, value: bool) {
        for i in start..end {
            self.set(i, value);
        }
    }

    pub fn to_bit_string(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({})", self.to_bit_string())
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

impl serde::Serialize for BitVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_bit_string())
    }
}

impl<'de> serde::Deserialize<'de> for BitVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        BitVector::parse(&s).ok_or_else(|| serde::de::Error::custom("expected a 0/1 string"))
    }
}

/// Number of differing coordinates. Both vectors must have the same length.
#[inline]
pub fn hamming_count(a: &BitVector, b: &BitVector) -> u32 {
    debug_assert_eq!(a.len, b.len);
    a.words
        .iter()
        .zip(b.words.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Hamming count restricted to the coordinates set in `mask`.
#[inline]
pub fn masked_hamming_count(a: &BitVector, b: &BitVector, mask: &BitVector) -> u32 {
    a.words
        .iter()
        .zip(b.words.iter())
        .zip(mask.words.iter())
        .map(|((x, y), m)| ((x ^ y) & m).count_ones())
        .sum()
}

/// Normalized Hamming distance: the fraction of coordinates on which `a` and
/// `b` differ.
pub fn hamming(a: &BitVector, b: &BitVector) -> Result<f64> {
    if a.len != b.len {
        return Err(Error::Dimension {
            expected: a.len,
            found: b.len,
        });
    }
    if a.len == 0 {
        return Err(Error::Precondition(
            "Hamming distance needs at least one coordinate".into(),
        ));
    }
    Ok(hamming_count(a, b) as f64 / a.len as f64)
}

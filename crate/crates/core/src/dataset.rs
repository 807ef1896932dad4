//! Encoded datasets and their on-disk format.
//!
//! File layout (UTF-8 text):
//!
//! ```text
//! #fusion-encoded v1 {"survey_id":"psrc","year":2017,"dictionary_hash":"…","columns":[…]}
//! household_id,y,x
//! h000001,0.5,01000010000100…
//! h000001,,01000010000100…
//! ```
//!
//! The first line is a magic token followed by a JSON header carrying the
//! feature dictionary and its hash. The hash is recomputed on load and a
//! mismatch is rejected. The body is CSV: `y` is empty when the target is
//! missing and `x` is the bit-vector as `0`/`1` characters, bit 0 first.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::schema::{Column, FeatureDictionary};

pub const MAGIC: &str = "#fusion-encoded v1";

/// One person-day observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub household_id: String,
    pub x: BitVector,
    /// Deliveries per day; `None` when missing.
    pub y: Option<f64>,
}

impl EncodedSample {
    pub fn new(household_id: impl Into<String>, x: BitVector, y: Option<f64>) -> Self {
        EncodedSample {
            household_id: household_id.into(),
            x,
            y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub survey_id: String,
    pub year: i32,
    dictionary: FeatureDictionary,
    samples: Vec<EncodedSample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    survey_id: String,
    year: i32,
    dictionary_hash: String,
    columns: Vec<Column>,
}

impl EncodedDataset {
    pub fn new(dictionary: FeatureDictionary, survey_id: impl Into<String>, year: i32) -> Self {
        EncodedDataset {
            survey_id: survey_id.into(),
            year,
            dictionary,
            samples: Vec::new(),
        }
    }

    pub fn with_samples(
        dictionary: FeatureDictionary,
        survey_id: impl Into<String>,
        year: i32,
        samples: Vec<EncodedSample>,
    ) -> Result<Self> {
        let mut ds = Self::new(dictionary, survey_id, year);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: EncodedSample) -> Result<()> {
        if sample.x.len() != self.dictionary.dimension() {
            return Err(Error::Dimension {
                expected: self.dictionary.dimension(),
                found: sample.x.len(),
            });
        }
        if let Some(y) = sample.y {
            if !(y >= 0.0 && y.is_finite()) {
                return Err(Error::Data(format!(
                    "target must be a non-negative number, got {y}"
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dictionary(&self) -> &FeatureDictionary {
        &self.dictionary
    }

    pub fn samples(&self) -> &[EncodedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dictionary.dimension()
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|s| s.y.is_none()).count()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.y.is_some())
    }

    /// Samples with a present target, in order.
    pub fn labeled(&self) -> EncodedDataset {
        self.filtered(|s| s.y.is_some())
    }

    pub fn filtered(&self, keep: impl Fn(&EncodedSample) -> bool) -> EncodedDataset {
        EncodedDataset {
            survey_id: self.survey_id.clone(),
            year: self.year,
            dictionary: self.dictionary.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Appends `other`'s samples. Dictionaries must match.
    pub fn extend_from(&mut self, other: &EncodedDataset) -> Result<()> {
        self.ensure_compatible(other)?;
        self.samples.extend_from_slice(&other.samples);
        Ok(())
    }

    pub fn ensure_compatible(&self, other: &EncodedDataset) -> Result<()> {
        let (a, b) = (self.dictionary.hash(), other.dictionary.hash());
        if a != b {
            return Err(Error::DictionaryMismatch {
                expected: a,
                found: b,
            });
        }
        Ok(())
    }

    /// Distinct household ids in first-appearance order.
    pub fn household_ids(&self) -> Vec<&str> {
        let mut seen = IndexMap::new();
        for s in &self.samples {
            seen.entry(s.household_id.as_str()).or_insert(());
        }
        seen.into_keys().collect()
    }

    /// Sum of present targets per household, in first-appearance order.
    /// Samples with a missing target contribute nothing.
    pub fn household_totals(&self) -> IndexMap<String, f64> {
        let mut totals: IndexMap<String, f64> = IndexMap::new();
        for s in &self.samples {
            let t = totals.entry(s.household_id.clone()).or_insert(0.0);
            if let Some(y) = s.y {
                *t += y;
            }
        }
        totals
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            survey_id: self.survey_id.clone(),
            year: self.year,
            dictionary_hash: self.dictionary.hash(),
            columns: self.dictionary.columns().to_vec(),
        };
        let io = |e| Error::io("<encoded dataset>", e);
        writeln!(out, "{MAGIC} {}", serde_json::to_string(&header)?).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["household_id", "y", "x"])?;
        for s in &self.samples {
            let y = s.y.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.household_id.as_str(), &y, &s.x.to_bit_string()])?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(input: R, path: &Path) -> Result<Self> {
        let fmt_err = |message: String| Error::Format {
            path: path.to_owned(),
            message,
        };
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader
            .read_line(&mut first)
            .map_err(|e| Error::io(path, e))?;
        let json = first
            .trim_end()
            .strip_prefix(MAGIC)
            .ok_or_else(|| fmt_err("not an encoded dataset (missing magic line)".into()))?;
        let header: Header =
            serde_json::from_str(json.trim()).map_err(|e| fmt_err(e.to_string()))?;
        let dictionary = FeatureDictionary::from_columns(header.columns)?;
        if dictionary.hash() != header.dictionary_hash {
            return Err(Error::DictionaryMismatch {
                expected: header.dictionary_hash,
                found: dictionary.hash(),
            });
        }
        let mut ds = EncodedDataset::new(dictionary, header.survey_id, header.year);
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, record) in rdr.records().enumerate() {
            let row = i as u64 + 3;
            let record = record?;
            let bad = |message: String| Error::Ingest {
                path: path.to_owned(),
                row,
                message,
            };
            if record.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", record.len())));
            }
            let y = match &record[1] {
                "" => None,
                v => Some(v.parse::<f64>().map_err(|_| bad(format!("bad target {v:?}")))?),
            };
            let x = BitVector::parse(&record[2])
                .ok_or_else(|| bad(format!("bad bit-vector {:?}", &record[2])))?;
            ds.push(EncodedSample::new(&record[0], x, y))
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, path)
    }

    /// Returns true if the file at `path` starts with the encoded-dataset magic.
    pub fn sniff(path: &Path) -> Result<bool> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut first = String::new();
        BufReader::new(file)
            .read_line(&mut first)
            .map_err(|e| Error::io(path, e))?;
        Ok(first.starts_with(MAGIC))
    }
}

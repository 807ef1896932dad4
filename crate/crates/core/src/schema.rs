//! Harmonization spec and one-hot feature dictionary.
//!
//! A [`HarmonizationSpec`] is loaded from JSON. It names the harmonized
//! categorical features, how each survey's raw columns map onto them, and how
//! each survey's delivery column(s) convert to deliveries per day. The
//! [`FeatureDictionary`] built from it fixes the bit position of every
//! `(feature, category)` pair, so datasets encoded with the same dictionary are
//! coordinate-compatible.
//!
//! A missing covariate encodes as an all-zero bit group; there is no separate
//! "missing" column.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitVector;
use crate::error::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    #[default]
    Household,
    Person,
    Day,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonizationSpec {
    pub version: u32,
    pub surveys: IndexMap<String, SurveySpec>,
    pub features: Vec<FeatureSpec>,
}

/// Per-survey key columns and target definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveySpec {
    pub household_key: String,
    pub person_key: String,
    pub day_key: String,
    pub target: TargetSpec,
}

/// The delivery target. Listed columns are summed and the sum divided by
/// `divisor` (30 for monthly counts, 1 for daily counts). An empty cell or a
/// `missing` token in any column makes the target missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(default = "default_target_table")]
    pub table: TableKind,
    pub columns: Vec<String>,
    pub divisor: f64,
    #[serde(default)]
    pub missing: Vec<String>,
}

fn default_target_table() -> TableKind {
    TableKind::Day
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub categories: Vec<String>,
    /// Survey id -> raw column mapping.
    #[serde(default)]
    pub sources: IndexMap<String, ColumnMapping>,
}

/// How one survey column maps to a harmonized feature.
///
/// Lookup order for a raw value: empty string or a listed `missing` token
/// gives missing; an exact key in `values` gives that entry (`null` meaning
/// missing); otherwise, when `bins` is non-empty, the value is parsed as a
/// number and placed in the last bin whose lower edge is `<=` the value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub table: TableKind,
    pub column: String,
    #[serde(default)]
    pub values: IndexMap<String, Option<String>>,
    #[serde(default)]
    pub bins: Vec<BinEdge>,
    #[serde(default)]
    pub missing: Vec<String>,
}

/// Lower-inclusive bin. `min: null` means unbounded below.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinEdge {
    pub min: Option<f64>,
    pub category: String,
}

impl HarmonizationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: HarmonizationSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: HarmonizationSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn survey(&self, id: &str) -> Result<&SurveySpec> {
        self.surveys
            .get(id)
            .ok_or_else(|| Error::Schema(format!("survey {id:?} is not declared in the spec")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SPEC_VERSION {
            return Err(Error::Schema(format!(
                "unsupported spec version {} (expected {SPEC_VERSION})",
                self.version
            )));
        }
        if self.features.is_empty() {
            return Err(Error::Schema("spec declares no features".into()));
        }
        for (id, survey) in &self.surveys {
            let t = &survey.target;
            if !(t.divisor > 0.0 && t.divisor.is_finite()) {
                return Err(Error::Schema(format!(
                    "survey {id:?}: target divisor must be positive, got {}",
                    t.divisor
                )));
            }
            if t.columns.is_empty() {
                return Err(Error::Schema(format!("survey {id:?}: no target columns")));
            }
        }
        let mut names = HashSet::new();
        for feature in &self.features {
            if !names.insert(feature.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature {:?}", feature.name)));
            }
            feature.validate()?;
            for survey in feature.sources.keys() {
                if !self.surveys.contains_key(survey) {
                    return Err(Error::Schema(format!(
                        "feature {:?} maps undeclared survey {survey:?}",
                        feature.name
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            sources: IndexMap::new(),
        }
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    fn validate(&self) -> Result<()> {
        if self.categories.len() < 2 {
            return Err(Error::Schema(format!(
                "feature {:?} needs at least 2 categories",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "feature {:?}: duplicate category {c:?}",
                    self.name
                )));
            }
        }
        for (survey, mapping) in &self.sources {
            let unknown = mapping
                .values
                .values()
                .flatten()
                .chain(mapping.bins.iter().map(|b| &b.category))
                .find(|c| self.category_index(c).is_none());
            if let Some(c) = unknown {
                return Err(Error::Schema(format!(
                    "feature {:?}, survey {survey:?}: unknown category {c:?}",
                    self.name
                )));
            }
            for pair in mapping.bins.windows(2) {
                let ok = match (pair[0].min, pair[1].min) {
                    (None, Some(_)) => true,
                    (Some(a), Some(b)) => a < b,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Schema(format!(
                        "feature {:?}, survey {survey:?}: bin edges must be strictly increasing, \
                         with only the first unbounded",
                        self.name
                    )));
                }
            }
            if mapping.values.is_empty() && mapping.bins.is_empty() {
                return Err(Error::Schema(format!(
                    "feature {:?}, survey {survey:?}: mapping has neither values nor bins",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Resolves a raw survey value to a category index, `None` for missing.
    pub fn resolve(&self, survey: &str, raw: Option<&str>) -> Result<Option<usize>> {
        let mapping = self.sources.get(survey).ok_or_else(|| {
            Error::Schema(format!(
                "feature {:?} has no mapping for survey {survey:?}",
                self.name
            ))
        })?;
        let raw = match raw.map(str::trim) {
            None | Some("") => return Ok(None),
            Some(r) => r,
        };
        let unmapped = || Error::Mapping {
            survey: survey.to_owned(),
            column: mapping.column.clone(),
            value: raw.to_owned(),
        };
        if mapping.missing.iter().any(|m| m == raw) {
            return Ok(None);
        }
        if let Some(target) = mapping.values.get(raw) {
            return Ok(target.as_deref().and_then(|c| self.category_index(c)));
        }
        if mapping.bins.is_empty() {
            return Err(unmapped());
        }
        let value: f64 = raw.parse().map_err(|_| unmapped())?;
        if value.is_nan() {
            return Err(unmapped());
        }
        let bin = mapping
            .bins
            .iter()
            .rev()
            .find(|b| b.min.is_none_or(|m| value >= m))
            .ok_or_else(unmapped)?;
        Ok(self.category_index(&bin.category))
    }
}

/// One-hot bit group for a single raw value: one bit set for a mapped
/// category, all zero for missing.
pub fn encode_value(feature: &FeatureSpec, survey: &str, raw: Option<&str>) -> Result<BitVector> {
    let mut group = BitVector::zeros(feature.categories.len());
    if let Some(idx) = feature.resolve(survey, raw)? {
        group.set(idx, true);
    }
    Ok(group)
}

/// Converts a raw delivery count to deliveries per day.
pub fn harmonize_target(raw: Option<f64>, divisor: f64) -> Result<Option<f64>> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::Schema(format!(
            "target divisor must be positive, got {divisor}"
        )));
    }
    match raw {
        None => Ok(None),
        Some(v) if v.is_nan() => Ok(None),
        Some(v) if v < 0.0 => Err(Error::Data(format!("negative delivery count {v}"))),
        Some(v) => Ok(Some(v / divisor)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub feature: String,
    pub category: String,
}

impl Column {
    pub fn label(&self) -> String {
        format!("{}_{}", self.feature, self.category)
    }
}

/// Contiguous bit range owned by one feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroup {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl FeatureGroup {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// Ordered `(feature, category)` columns; index `i` is bit position `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDictionary {
    columns: Vec<Column>,
    groups: Vec<FeatureGroup>,
}

impl FeatureDictionary {
    /// Builds a dictionary from `(feature, categories)` pairs in order.
    pub fn from_features<I, F, C, S>(features: I) -> Result<Self>
    where
        I: IntoIterator<Item = (F, C)>,
        F: AsRef<str>,
        C: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut columns = Vec::new();
        for (feature, categories) in features {
            for category in categories {
                columns.push(Column {
                    feature: feature.as_ref().to_owned(),
                    category: category.as_ref().to_owned(),
                });
            }
        }
        Self::from_columns(columns)
    }

    /// Rebuilds a dictionary from its column list. Columns of one feature must
    /// be contiguous.
    pub fn from_columns(columns: Vec<Column>) -> Result<Self> {
        let mut groups: Vec<FeatureGroup> = Vec::new();
        for (i, col) in columns.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.name == col.feature => g.end = i + 1,
                _ => {
                    if groups.iter().any(|g| g.name == col.feature) {
                        return Err(Error::Schema(format!(
                            "duplicate or non-contiguous feature {:?}",
                            col.feature
                        )));
                    }
                    groups.push(FeatureGroup {
                        name: col.feature.clone(),
                        start: i,
                        end: i + 1,
                    });
                }
            }
        }
        for g in &groups {
            let cats: HashSet<_> = columns[g.start..g.end].iter().map(|c| &c.category).collect();
            if cats.len() != g.width() {
                return Err(Error::Schema(format!(
                    "feature {:?} has duplicate categories",
                    g.name
                )));
            }
        }
        Ok(FeatureDictionary { columns, groups })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Total number of one-hot columns.
    pub fn dimension(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(Column::label).collect()
    }

    /// SHA-256 over the ordered column list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"fusion-dictionary-v1\n");
        for c in &self.columns {
            h.update(c.feature.as_bytes());
            h.update(b"\t");
            h.update(c.category.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Encodes per-feature category indices (`None` = missing).
    pub fn encode(&self, categories: &[Option<usize>]) -> Result<BitVector> {
        if categories.len() != self.groups.len() {
            return Err(Error::Dimension {
                expected: self.groups.len(),
                found: categories.len(),
            });
        }
        let mut x = BitVector::zeros(self.dimension());
        for (g, cat) in self.groups.iter().zip(categories) {
            if let Some(c) = *cat {
                if c >= g.width() {
                    return Err(Error::Data(format!(
                        "category index {c} out of range for feature {:?}",
                        g.name
                    )));
                }
                x.set(g.start + c, true);
            }
        }
        Ok(x)
    }

    /// Inverse of [`encode`](Self::encode). Fails if a group has more than one
    /// bit set.
    pub fn decode(&self, x: &BitVector) -> Result<Vec<Option<usize>>> {
        if x.len() != self.dimension() {
            return Err(Error::Dimension {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        self.groups
            .iter()
            .map(|g| {
                let set: Vec<usize> = (g.start..g.end).filter(|&i| x.get(i)).collect();
                match set.as_slice() {
                    [] => Ok(None),
                    [i] => Ok(Some(i - g.start)),
                    _ => Err(Error::Data(format!(
                        "feature {:?} has {} bits set",
                        g.name,
                        set.len()
                    ))),
                }
            })
            .collect()
    }
}

/// One column per `(feature, category)`, in spec order.
pub fn build_dictionary(spec: &HarmonizationSpec) -> Result<FeatureDictionary> {
    spec.validate()?;
    FeatureDictionary::from_features(
        spec.features
            .iter()
            .map(|f| (f.name.as_str(), f.categories.iter().map(String::as_str))),
    )
}

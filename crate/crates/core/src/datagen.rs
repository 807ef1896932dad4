//! Seeded synthetic survey generator with a planted delivery propensity.
//!
//! Households draw household-level categories, a person count, then each
//! person draws person-level categories and a number of travel days. Every
//! day is one sample whose target is Poisson with rate
//! `base * spike_factor * Π factor(feature, category)`. The target is then
//! hidden at the model's missingness rate, on a separate random stream, so the
//! full-target dataset serves as the oracle truth.

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedDataset, EncodedSample};
use crate::error::{Error, Result};
use crate::evaluation::rng_stream;
use crate::schema::FeatureDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Household,
    Person,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub name: String,
    pub level: Level,
    pub categories: Vec<String>,
    pub marginals: Vec<f64>,
    /// Probability the covariate is missing.
    #[serde(default)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propensity {
    /// Deliveries per day for a sample whose factors are all 1.
    pub base: f64,
    /// feature -> category -> multiplicative factor. Unlisted pairs and
    /// missing covariates use 1.
    #[serde(default)]
    pub factors: IndexMap<String, IndexMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub features: Vec<FeatureModel>,
    pub propensity: Propensity,
    /// Entry `k` is the probability of `k + 1` persons.
    pub persons_per_household: Vec<f64>,
    /// Entry `k` is the probability of `k + 1` travel days.
    pub days_per_person: Vec<f64>,
    /// Probability that a sample's target is hidden.
    pub missingness: f64,
    #[serde(default = "unit")]
    pub spike_factor: f64,
}

fn unit() -> f64 {
    1.0
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Schema(format!("{what}: probabilities must be non-negative")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Schema(format!("{what}: probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn check_rate(what: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Schema(format!("{what} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl PopulationModel {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: PopulationModel = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("population model has no features".into()));
        }
        for f in &self.features {
            if f.categories.len() != f.marginals.len() {
                return Err(Error::Schema(format!(
                    "feature {:?}: {} categories but {} marginals",
                    f.name,
                    f.categories.len(),
                    f.marginals.len()
                )));
            }
            check_distribution(&format!("feature {:?} marginals", f.name), &f.marginals)?;
            check_rate(&format!("feature {:?} missing_rate", f.name), f.missing_rate)?;
        }
        check_distribution("persons_per_household", &self.persons_per_household)?;
        check_distribution("days_per_person", &self.days_per_person)?;
        check_rate("missingness", self.missingness)?;
        if !(self.propensity.base >= 0.0 && self.propensity.base.is_finite()) {
            return Err(Error::Schema("propensity base must be non-negative".into()));
        }
        if !(self.spike_factor > 0.0 && self.spike_factor.is_finite()) {
            return Err(Error::Schema("spike_factor must be positive".into()));
        }
        for (name, table) in &self.propensity.factors {
            let f = self
                .features
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| Error::Schema(format!("propensity names unknown feature {name:?}")))?;
            for (cat, &v) in table {
                if !f.categories.contains(cat) {
                    return Err(Error::Schema(format!(
                        "propensity names unknown category {cat:?} of {name:?}"
                    )));
                }
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Schema(format!(
                        "propensity factor for {name}={cat} must be non-negative"
                    )));
                }
            }
        }
        // The dictionary enforces unique features and categories.
        self.dictionary()?;
        Ok(())
    }

    pub fn dictionary(&self) -> Result<FeatureDictionary> {
        FeatureDictionary::from_features(
            self.features
                .iter()
                .map(|f| (f.name.as_str(), f.categories.iter().map(String::as_str))),
        )
    }

    /// Expected deliveries per day for per-feature category indices.
    pub fn rate(&self, categories: &[Option<usize>]) -> f64 {
        let mut rate = self.propensity.base * self.spike_factor;
        for (f, cat) in self.features.iter().zip(categories) {
            if let (Some(c), Some(table)) = (cat, self.propensity.factors.get(&f.name)) {
                rate *= table.get(&f.categories[*c]).copied().unwrap_or(1.0);
            }
        }
        rate
    }

    /// Same model with the propensity scaled by `factor`.
    pub fn with_spike(&self, factor: f64) -> Self {
        PopulationModel {
            spike_factor: self.spike_factor * factor,
            ..self.clone()
        }
    }

    pub fn with_missingness(&self, missingness: f64) -> Self {
        PopulationModel {
            missingness,
            ..self.clone()
        }
    }

    /// Six harmonized covariates with household-survey-like marginals and a
    /// planted propensity in which income, age and life cycle matter most.
    pub fn reference() -> Self {
        fn feature(name: &str, level: Level, cats: &[(&str, f64)], missing_rate: f64) -> FeatureModel {
            let total: f64 = cats.iter().map(|c| c.1).sum();
            FeatureModel {
                name: name.into(),
                level,
                categories: cats.iter().map(|c| c.0.to_string()).collect(),
                marginals: cats.iter().map(|c| c.1 / total).collect(),
                missing_rate,
            }
        }
        fn factors(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
            pairs.iter().map(|(c, f)| (c.to_string(), *f)).collect()
        }
        let features = vec![
            feature("Income", Level::Household, &[(">100k", 1171.0), ("75-100k", 369.0), ("<75k", 941.0)], 0.07),
            feature("Age", Level::Person, &[("<25", 940.0), ("25-45", 2282.0), ("45-65", 1122.0), (">65", 580.0)], 0.0),
            feature(
                "Education",
                Level::Person,
                &[
                    ("<high school", 40.0),
                    ("high school", 203.0),
                    ("technical", 98.0),
                    ("associate", 644.0),
                    ("bachelor", 1762.0),
                    ("graduate", 1472.0),
                ],
                0.14,
            ),
            feature("Gender", Level::Person, &[("female", 2440.0), ("male", 2396.0)], 0.02),
            feature(
                "LifeCycle",
                Level::Household,
                &[
                    ("2 adults, no children", 1254.0),
                    ("1 adult, no children", 880.0),
                    ("1 adult, with children", 531.0),
                    ("2 adults, with children", 400.0),
                ],
                0.0,
            ),
            feature(
                "Employment",
                Level::Person,
                &[
                    ("full time", 2600.0),
                    ("retired", 538.0),
                    ("part time", 344.0),
                    ("freelancer", 268.0),
                    ("not employed", 239.0),
                    ("homemaker", 197.0),
                    ("volunteer", 33.0),
                ],
                0.14,
            ),
        ];
        let mut table = IndexMap::new();
        table.insert("Income".to_string(), factors(&[(">100k", 2.5), ("75-100k", 1.2), ("<75k", 0.4)]));
        table.insert("Age".to_string(), factors(&[("<25", 0.6), ("25-45", 1.8), ("45-65", 1.0), (">65", 0.3)]));
        table.insert("Education".to_string(), factors(&[("<high school", 0.5), ("graduate", 1.3)]));
        table.insert("Gender".to_string(), factors(&[("female", 1.1), ("male", 0.9)]));
        table.insert(
            "LifeCycle".to_string(),
            factors(&[("1 adult, no children", 0.7), ("2 adults, with children", 1.6)]),
        );
        table.insert("Employment".to_string(), factors(&[("retired", 0.6), ("part time", 1.2), ("homemaker", 1.4)]));
        PopulationModel {
            features,
            propensity: Propensity {
                base: 0.25,
                factors: table,
            },
            persons_per_household: vec![0.35, 0.40, 0.15, 0.10],
            days_per_person: vec![0.30, 0.20, 0.20, 0.15, 0.15],
            missingness: 0.96,
            spike_factor: 1.0,
        }
    }
}

/// Pair of datasets over the same samples: full targets, and targets hidden
/// at the model's missingness rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSurvey {
    pub full: EncodedDataset,
    pub missing: EncodedDataset,
}

pub fn generate(
    model: &PopulationModel,
    n_households: usize,
    survey_id: &str,
    year: i32,
    seed: u64,
) -> Result<GeneratedSurvey> {
    model.validate()?;
    let dictionary = model.dictionary()?;
    let mut rng = rng_stream(seed, 0);
    let mut hide = rng_stream(seed, 1);

    let weighted = |p: &[f64]| {
        WeightedIndex::new(p).map_err(|e| Error::Schema(format!("bad distribution: {e}")))
    };
    let marginals = model
        .features
        .iter()
        .map(|f| weighted(&f.marginals))
        .collect::<Result<Vec<_>>>()?;
    let persons = weighted(&model.persons_per_household)?;
    let days = weighted(&model.days_per_person)?;

    let mut full = EncodedDataset::new(dictionary.clone(), survey_id, year);
    let mut missing = EncodedDataset::new(dictionary, survey_id, year);
    let mut cats: Vec<Option<usize>> = vec![None; model.features.len()];
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, f: usize| {
        let feature = &model.features[f];
        let absent = feature.missing_rate > 0.0 && rng.random_bool(feature.missing_rate);
        let value = marginals[f].sample(rng);
        (!absent).then_some(value)
    };

    for h in 0..n_households {
        let household_id = format!("h{:06}", h + 1);
        for (f, feature) in model.features.iter().enumerate() {
            if feature.level == Level::Household {
                cats[f] = draw(&mut rng, f);
            }
        }
        for _ in 0..=persons.sample(&mut rng) {
            for (f, feature) in model.features.iter().enumerate() {
                if feature.level == Level::Person {
                    cats[f] = draw(&mut rng, f);
                }
            }
            let x = full.dictionary().encode(&cats)?;
            let rate = model.rate(&cats);
            for _ in 0..=days.sample(&mut rng) {
                let y = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Schema(format!("bad propensity {rate}: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                let hidden = model.missingness > 0.0 && hide.random_bool(model.missingness);
                full.push(EncodedSample::new(household_id.clone(), x.clone(), Some(y)))?;
                missing.push(EncodedSample::new(household_id.clone(), x.clone(), (!hidden).then_some(y)))?;
            }
        }
    }
    Ok(GeneratedSurvey { full, missing })
}

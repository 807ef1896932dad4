//! Household / person / travel-day CSV ingestion.
//!
//! The three tables are joined on their primary keys into person-day rows.
//! Each travel-day row becomes one [`EncodedSample`]; household and person
//! attributes are replicated onto every day of that person.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedDataset, EncodedSample};
use crate::error::{Error, Result};
use crate::schema::{build_dictionary, harmonize_target, HarmonizationSpec, SurveySpec, TableKind};

#[derive(Debug, Clone)]
pub struct TablePaths {
    pub households: PathBuf,
    pub persons: PathBuf,
    pub days: PathBuf,
}

/// A CSV table held as strings.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let ingest_err = |e: csv::Error| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Ingest {
                path: path.to_owned(),
                row,
                message: e.to_string(),
            }
        };
        let headers: Vec<String> = rdr
            .headers()
            .map_err(ingest_err)?
            .iter()
            .map(|h| h.trim().to_owned())
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Ingest {
                path: path.to_owned(),
                row: 1,
                message: "missing header row".into(),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(ingest_err)?;
            rows.push(record.iter().map(str::to_owned).collect());
        }
        Ok(Table {
            path: path.to_owned(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest {
                path: self.path.clone(),
                row: 1,
                message: format!("missing column {name:?}"),
            })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The three joined tables of one survey, with key indexes.
#[derive(Debug, Clone)]
pub struct RawTableSet {
    pub survey_id: String,
    pub households: Table,
    pub persons: Table,
    pub days: Table,
    /// For each day row: (household row, person row).
    day_links: Vec<(usize, usize)>,
}

impl RawTableSet {
    pub fn row_counts(&self) -> (usize, usize, usize) {
        (self.households.len(), self.persons.len(), self.days.len())
    }
}

/// Reads the three CSVs and checks key integrity: unique primary keys, every
/// person references a household, every day references a person.
pub fn load_tables(paths: &TablePaths, survey_id: &str, keys: &SurveySpec) -> Result<RawTableSet> {
    let households = Table::read(&paths.households)?;
    let persons = Table::read(&paths.persons)?;
    let days = Table::read(&paths.days)?;

    let hh_col = households.column(&keys.household_key)?;
    let p_hh = persons.column(&keys.household_key)?;
    let p_id = persons.column(&keys.person_key)?;
    let d_hh = days.column(&keys.household_key)?;
    let d_p = days.column(&keys.person_key)?;
    let d_id = days.column(&keys.day_key)?;

    let dup = |table: &Table, row: usize, key: String| Error::Ingest {
        path: table.path.clone(),
        row: row as u64 + 2,
        message: format!("duplicate primary key {key}"),
    };

    let mut household_index = HashMap::with_capacity(households.len());
    for (i, row) in households.rows.iter().enumerate() {
        if household_index.insert(row[hh_col].clone(), i).is_some() {
            return Err(dup(&households, i, row[hh_col].clone()));
        }
    }

    let mut person_index = HashMap::with_capacity(persons.len());
    for (i, row) in persons.rows.iter().enumerate() {
        let hh = &row[p_hh];
        if !household_index.contains_key(hh) {
            return Err(Error::Integrity(format!(
                "{}:{}: person {:?} references unknown household {hh:?}",
                persons.path.display(),
                i + 2,
                row[p_id]
            )));
        }
        if person_index.insert((hh.clone(), row[p_id].clone()), i).is_some() {
            return Err(dup(&persons, i, format!("({hh}, {})", row[p_id])));
        }
    }

    let mut seen_days = std::collections::HashSet::with_capacity(days.len());
    let mut day_links = Vec::with_capacity(days.len());
    for (i, row) in days.rows.iter().enumerate() {
        let key = (row[d_hh].clone(), row[d_p].clone());
        let Some(&p_row) = person_index.get(&key) else {
            return Err(Error::Integrity(format!(
                "{}:{}: travel day references unknown person ({}, {})",
                days.path.display(),
                i + 2,
                key.0,
                key.1
            )));
        };
        if !seen_days.insert((key.0.clone(), key.1.clone(), row[d_id].clone())) {
            return Err(dup(&days, i, format!("({}, {}, {})", key.0, key.1, row[d_id])));
        }
        day_links.push((household_index[&key.0], p_row));
    }

    Ok(RawTableSet {
        survey_id: survey_id.to_owned(),
        households,
        persons,
        days,
        day_links,
    })
}

/// Joins the tables into person-day samples and encodes them.
pub fn assemble(raw: &RawTableSet, spec: &HarmonizationSpec, year: i32) -> Result<EncodedDataset> {
    let survey = spec.survey(&raw.survey_id)?;
    let dictionary = build_dictionary(spec)?;

    let table = |kind: TableKind| match kind {
        TableKind::Household => &raw.households,
        TableKind::Person => &raw.persons,
        TableKind::Day => &raw.days,
    };

    let mut feature_cols = Vec::with_capacity(spec.features.len());
    for f in &spec.features {
        let m = f.sources.get(&raw.survey_id).ok_or_else(|| {
            Error::Schema(format!(
                "feature {:?} has no mapping for survey {:?}",
                f.name, raw.survey_id
            ))
        })?;
        feature_cols.push((m.table, table(m.table).column(&m.column)?));
    }
    let target_table = survey.target.table;
    let target_cols = survey
        .target
        .columns
        .iter()
        .map(|c| table(target_table).column(c))
        .collect::<Result<Vec<_>>>()?;
    let hh_col = raw.households.column(&survey.household_key)?;

    let mut ds = EncodedDataset::new(dictionary, raw.survey_id.clone(), year);
    let mut categories = vec![None; spec.features.len()];
    for (day_row, &(hh_row, person_row)) in raw.day_links.iter().enumerate() {
        let row_of = |kind: TableKind| -> &Vec<String> {
            match kind {
                TableKind::Household => &raw.households.rows[hh_row],
                TableKind::Person => &raw.persons.rows[person_row],
                TableKind::Day => &raw.days.rows[day_row],
            }
        };
        for ((f, &(kind, col)), slot) in spec.features.iter().zip(&feature_cols).zip(&mut categories) {
            *slot = f.resolve(&raw.survey_id, Some(row_of(kind)[col].as_str()))?;
        }
        let x = ds.dictionary().encode(&categories)?;

        let target_row = row_of(target_table);
        let target_line = match target_table {
            TableKind::Household => hh_row,
            TableKind::Person => person_row,
            TableKind::Day => day_row,
        } as u64
            + 2;
        let mut sum = Some(0.0);
        for &c in &target_cols {
            let v = target_row[c].trim();
            if v.is_empty() || survey.target.missing.iter().any(|m| m == v) {
                sum = None;
                break;
            }
            let parsed: f64 = v.parse().map_err(|_| Error::Ingest {
                path: table(target_table).path.clone(),
                row: target_line,
                message: format!("non-numeric delivery value {v:?}"),
            })?;
            sum = sum.map(|s| s + parsed);
        }
        let y = harmonize_target(sum, survey.target.divisor).map_err(|e| Error::Ingest {
            path: table(target_table).path.clone(),
            row: target_line,
            message: e.to_string(),
        })?;
        let hh_id = raw.households.rows[hh_row][hh_col].clone();
        ds.push(EncodedSample::new(hh_id, x, y))?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub categories: IndexMap<String, usize>,
    pub missing: usize,
}

/// Descriptive statistics of an encoded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeReport {
    pub survey_id: String,
    pub year: i32,
    pub households: usize,
    pub samples: usize,
    pub missing_y: usize,
    /// `100 * missing_y / samples`.
    pub missing_percent: f64,
    pub features: Vec<FeatureSummary>,
    pub notes: Vec<String>,
}

pub fn describe(ds: &EncodedDataset) -> DescribeReport {
    let dict = ds.dictionary();
    let mut features: Vec<FeatureSummary> = dict
        .groups()
        .iter()
        .map(|g| FeatureSummary {
            name: g.name.clone(),
            categories: dict.columns()[g.start..g.end]
                .iter()
                .map(|c| (c.category.clone(), 0))
                .collect(),
            missing: 0,
        })
        .collect();
    for s in ds.samples() {
        for (g, summary) in dict.groups().iter().zip(&mut features) {
            match (g.start..g.end).find(|&i| s.x.get(i)) {
                Some(i) => *summary.categories.get_index_mut(i - g.start).unwrap().1 += 1,
                None => summary.missing += 1,
            }
        }
    }
    let samples = ds.len();
    let missing_y = ds.missing_count();
    DescribeReport {
        survey_id: ds.survey_id.clone(),
        year: ds.year,
        households: ds.household_ids().len(),
        samples,
        missing_y,
        missing_percent: if samples == 0 {
            0.0
        } else {
            100.0 * missing_y as f64 / samples as f64
        },
        features,
        notes: vec![
            "category counts are over person-day samples".into(),
            "household totals aggregate every person-day sample of the household; \
             multi-day records are not de-duplicated"
                .into(),
        ],
    }
}

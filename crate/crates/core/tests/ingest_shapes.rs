//! Survey-shaped inputs through the shipped harmonization config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use delivery_fusion::ingest::{assemble, describe, load_tables, TablePaths};
use delivery_fusion::schema::build_dictionary;
use delivery_fusion::HarmonizationSpec;

fn config() -> HarmonizationSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/harmonization.json");
    HarmonizationSpec::load(&path).unwrap()
}

struct Shape {
    /// Day rows per household.
    days: Vec<usize>,
    /// Whether each household's targets are missing (household-level target)
    /// or which day rows are missing (day-level target).
    missing_day: Box<dyn Fn(usize, usize) -> bool>,
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn psrc_tables(dir: &Path, shape: &Shape) -> TablePaths {
    let incomes = ["$75,000-$99,999", "$200,000-$249,999", "Under $10,000", "Prefer not to answer"];
    let life = [
        "Household size = 1, Householder under age 35",
        "Household includes children age 5-17",
        "Household size > 1, Householder age 65+",
    ];
    let ages = ["25-34 years", "18-24 years", "65-74 years", "55-64 years"];
    let edu = ["Bachelor degree", "Graduate/post-graduate degree", "Some college", "Missing: Skip logic"];
    let gender = ["Female", "Male", "Prefer not to answer"];
    let emp = ["Employed full time (35+ hours/week, paid)", "Retired", "Homemaker", "Self-employed"];
    let (mut hh, mut pp, mut dd) = (
        String::from("hhid,hhincome_detailed,lifecycle\n"),
        String::from("hhid,personid,age,education,gender,employment\n"),
        String::from("hhid,personid,daynum,delivery_pkgs_freq,delivery_food_freq,delivery_grocery_freq\n"),
    );
    let mut row = 0usize;
    for (h, &n) in shape.days.iter().enumerate() {
        writeln!(hh, "{h},\"{}\",\"{}\"", incomes[h % 4], life[h % 3]).unwrap();
        // Two persons per household, days split between them.
        for p in 0..2 {
            writeln!(pp, "{h},{p},{},{},{},\"{}\"", ages[(h + p) % 4], edu[(h + p) % 4], gender[(h + p) % 3], emp[(h + p) % 4]).unwrap();
        }
        for d in 0..n {
            if (shape.missing_day)(h, row) {
                writeln!(dd, "{h},{},{d},,,", d % 2).unwrap();
            } else {
                writeln!(dd, "{h},{},{d},{},0,{}", d % 2, row % 2, row % 3 / 2).unwrap();
            }
            row += 1;
        }
    }
    TablePaths {
        households: write(dir, "hh.csv", &hh),
        persons: write(dir, "person.csv", &pp),
        days: write(dir, "day.csv", &dd),
    }
}

fn nhts_tables(dir: &Path, shape: &Shape) -> TablePaths {
    let (mut hh, mut pp, mut dd) = (
        String::from("HOUSEID,HHFAMINC,LIF_CYC,DELIVER\n"),
        String::from("HOUSEID,PERSONID,R_AGE,EDUC,R_SEX,PRMACT\n"),
        String::from("HOUSEID,PERSONID,TDAYDATE\n"),
    );
    for (h, &n) in shape.days.iter().enumerate() {
        let deliver = if (shape.missing_day)(h, 0) { "-9".to_string() } else { (h % 40).to_string() };
        writeln!(hh, "{h},{},{},{deliver}", 1 + h % 11, 1 + h % 10).unwrap();
        writeln!(pp, "{h},1,{},{},{},{}", 5 + h % 80, 1 + h % 5, 1 + h % 2, 1 + h % 7).unwrap();
        for d in 0..n {
            writeln!(dd, "{h},1,{d}").unwrap();
        }
    }
    TablePaths {
        households: write(dir, "hh.csv", &hh),
        persons: write(dir, "person.csv", &pp),
        days: write(dir, "day.csv", &dd),
    }
}

/// `n` rows spread over `households` as evenly as possible.
fn even(households: usize, n: usize) -> Vec<usize> {
    (0..households).map(|h| n / households + usize::from(h < n % households)).collect()
}

#[test]
fn shipped_config_has_twenty_six_columns() {
    let spec = config();
    assert_eq!(build_dictionary(&spec).unwrap().dimension(), 26);
    assert_eq!(spec.surveys.len(), 3);
}

#[test]
fn psrc_2017_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (samples, missing) = (363_970usize, 349_787usize);
    // Missing rows spread evenly: row r is missing when the running quota grows.
    let shape = Shape {
        days: even(2665, samples),
        missing_day: Box::new(move |_, r| (r + 1) * missing / samples != r * missing / samples),
    };
    let spec = config();
    let paths = psrc_tables(dir.path(), &shape);
    let raw = load_tables(&paths, "psrc2017", spec.survey("psrc2017").unwrap()).unwrap();
    assert_eq!(raw.row_counts(), (2665, 5330, samples));
    let ds = assemble(&raw, &spec, 2017).unwrap();
    let report = describe(&ds);
    assert_eq!(report.households, 2665);
    assert_eq!(report.samples, samples);
    assert_eq!(report.missing_y, missing);
    assert_eq!(report.missing_percent.round(), 96.0);
    for f in &report.features {
        assert_eq!(f.categories.values().sum::<usize>() + f.missing, samples, "{}", f.name);
    }
}

#[test]
fn psrc_2021_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (samples, missing) = (20_797usize, 8_780usize);
    let shape = Shape {
        days: even(2020, samples),
        missing_day: Box::new(move |_, r| (r + 1) * missing / samples != r * missing / samples),
    };
    let spec = config();
    let paths = psrc_tables(dir.path(), &shape);
    let raw = load_tables(&paths, "psrc2021", spec.survey("psrc2021").unwrap()).unwrap();
    let report = describe(&assemble(&raw, &spec, 2021).unwrap());
    assert_eq!((report.households, report.samples, report.missing_y), (2020, samples, missing));
    // The counts give 42.2%, not the 29% printed beside them.
    assert!((report.missing_percent - 42.2).abs() < 0.05, "{}", report.missing_percent);
}

#[test]
fn nhts_cut_shape() {
    let dir = tempfile::tempdir().unwrap();
    // 17 households with 14 days and 255 with 15 give 4,063 samples; hiding
    // 8 of the former and 14 of the latter hides 8 * 14 + 14 * 15 = 322.
    let days: Vec<usize> = (0..272).map(|h| if h < 17 { 14 } else { 15 }).collect();
    assert_eq!(days.iter().sum::<usize>(), 4063);
    let shape = Shape {
        days,
        missing_day: Box::new(|h, _| h < 8 || (17..31).contains(&h)),
    };
    let spec = config();
    let paths = nhts_tables(dir.path(), &shape);
    let raw = load_tables(&paths, "nhts2017", spec.survey("nhts2017").unwrap()).unwrap();
    let ds = assemble(&raw, &spec, 2017).unwrap();
    let report = describe(&ds);
    assert_eq!((report.households, report.samples, report.missing_y), (272, 4063, 322));
    assert_eq!(report.missing_percent.floor(), 7.0);
    // Monthly DELIVER becomes deliveries per day.
    let h40 = ds.samples().iter().find(|s| s.household_id == "39").unwrap();
    assert_eq!(h40.y, Some(39.0 / 30.0));
}

#[test]
fn assemble_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape {
        days: even(30, 200),
        missing_day: Box::new(|_, r| r % 3 == 0),
    };
    let spec = config();
    let paths = psrc_tables(dir.path(), &shape);
    let keys = spec.survey("psrc2017").unwrap();
    let a = assemble(&load_tables(&paths, "psrc2017", keys).unwrap(), &spec, 2017).unwrap();
    let b = assemble(&load_tables(&paths, "psrc2017", keys).unwrap(), &spec, 2017).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn unmapped_value_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape {
        days: vec![1],
        missing_day: Box::new(|_, _| false),
    };
    let spec = config();
    let paths = psrc_tables(dir.path(), &shape);
    let text = std::fs::read_to_string(&paths.persons).unwrap().replace("Female", "Unknown label");
    std::fs::write(&paths.persons, text).unwrap();
    let raw = load_tables(&paths, "psrc2017", spec.survey("psrc2017").unwrap()).unwrap();
    let err = assemble(&raw, &spec, 2017).unwrap_err();
    assert!(matches!(err, delivery_fusion::Error::Mapping { .. }), "{err}");
}

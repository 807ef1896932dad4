//! The `fusion` command-line front end.
//!
//! Every subcommand writes its artifacts atomically (temp file in the target
//! directory, then rename) and a run manifest next to the primary output.
//! A JSON config file may supply any flag; flags given on the command line
//! win.
//!
//! Exit codes:
//!
//! | code | meaning                                                   |
//! |------|-----------------------------------------------------------|
//! | 0    | success                                                   |
//! | 2    | usage error (unknown flag, missing argument, bad config)  |
//! | 3    | input/output failure (missing file, unwritable output)    |
//! | 4    | feature dictionary hash mismatch between inputs           |
//! | 5    | malformed input (schema, unmapped value, bad CSV/JSON)    |
//! | 6    | data error (integrity, dimension, precondition, empty)    |

use std::ffi::OsString;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attribution::{attribute_dataset, BucketMeanPredictor};
use crate::datagen::{self, PopulationModel};
use crate::dataset::EncodedDataset;
use crate::error::Error;
use crate::evaluation::{self, sorted_vectors, subsample_compare, DEFAULT_CUTOFFS};
use crate::ingest::{self, TablePaths};
use crate::matching::{self, ImputeOptions, MatchOptions, SearchStrategy, TieBreak, WeightMode};
use crate::schema::HarmonizationSpec;
use crate::synthesis::{self, OuterNorm, SynthesisOptions};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DICTIONARY: i32 = 4;
pub const EXIT_FORMAT: i32 = 5;
pub const EXIT_DATA: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "fusion", version, about = "Fuse partially labeled travel surveys to estimate household deliveries")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file supplying default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join household/person/day CSVs and encode them with a harmonization spec.
    Ingest(IngestArgs),
    /// Summarize an encoded dataset: counts, missingness, category frequencies.
    Describe(DescribeArgs),
    /// Fill missing delivery counts by nearest-neighbor matching.
    Impute(ImputeArgs),
    /// Transfer delivery counts to a later candidate survey through nested matching.
    Synthesize(SynthesizeArgs),
    /// Compare imputed household totals with a ground truth by sorted MSE.
    Evaluate(EvaluateArgs),
    /// Sorted MSE between two years' household totals.
    Spike(SpikeArgs),
    /// Exact Shapley attribution of a bucket-mean predictor.
    Attribute(AttributeArgs),
    /// Generate a synthetic survey with planted delivery propensity.
    Gen(GenArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Describe(_) => "describe",
            Command::Impute(_) => "impute",
            Command::Synthesize(_) => "synthesize",
            Command::Evaluate(_) => "evaluate",
            Command::Spike(_) => "spike",
            Command::Attribute(_) => "attribute",
            Command::Gen(_) => "gen",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub households: PathBuf,
    #[arg(long)]
    pub persons: PathBuf,
    #[arg(long)]
    pub days: PathBuf,
    /// Harmonization spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub survey_id: String,
    #[arg(long)]
    pub year: i32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DescribeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMethod {
    /// Hamming nearest-neighbor bucket matching.
    Nn,
    /// Mean of the observed targets.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakArg {
    Index,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Scan,
    PopcountPruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightArg {
    Global,
    PerHousehold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    Contributing,
    Matched,
    AllSource1,
}

#[derive(Debug, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long, value_enum, default_value = "index")]
    pub tie_break: TieBreakArg,
    /// Seed for random tie-breaking.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "popcount-pruned")]
    pub strategy: StrategyArg,
}

impl MatchArgs {
    fn options(&self) -> Result<MatchOptions, CliError> {
        let tie_break = match (self.tie_break, self.seed) {
            (TieBreakArg::Index, _) => TieBreak::Index,
            (TieBreakArg::Random, Some(seed)) => TieBreak::Random { seed },
            (TieBreakArg::Random, None) => {
                return Err(CliError::Usage("--tie-break random requires --seed".into()))
            }
        };
        let strategy = match self.strategy {
            StrategyArg::Scan => SearchStrategy::Scan,
            StrategyArg::PopcountPruned => SearchStrategy::PopcountPruned,
        };
        Ok(MatchOptions { tie_break, strategy })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ImputeArgs {
    /// Encoded survey with missing targets.
    #[arg(long)]
    pub source: PathBuf,
    /// Encoded labeled survey used as donors.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Use only the candidate as donors instead of candidate plus the source's
    /// labeled samples.
    #[arg(long)]
    pub candidate_only: bool,
    /// Overwrite observed targets as well.
    #[arg(long)]
    pub impute_all: bool,
    #[arg(long, value_enum, default_value = "nn")]
    pub method: ImputeMethod,
    #[arg(long, value_enum, default_value = "global")]
    pub weight: WeightArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchArgs,
    /// Per-sample CSV; household totals go to `<out>.households.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthesizeArgs {
    /// Earliest labeled survey.
    #[arg(long)]
    pub source2: PathBuf,
    /// Intermediate survey.
    #[arg(long)]
    pub source1: PathBuf,
    /// Target-year survey receiving synthesized values.
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long, value_enum, default_value = "contributing")]
    pub outer_norm: NormArg,
    /// Divide every bucket by the full size of source1.
    #[arg(long)]
    pub literal_v2_norm: bool,
    /// Survey id of the output (default: the candidate's).
    #[arg(long)]
    pub survey_id: Option<String>,
    /// Year of the output (default: the candidate's).
    #[arg(long)]
    pub year: Option<i32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-bucket provenance CSV (default: `<out>.provenance.csv`).
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Household totals: a CSV with a `y_total` column or an encoded dataset.
    #[arg(long)]
    pub imputed: PathBuf,
    /// Ground-truth household totals, same formats.
    #[arg(long)]
    pub truth: PathBuf,
    /// Subset size; must equal the number of truth households.
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra methods run through the same draws, as `name=path`.
    #[arg(long)]
    pub baseline: Vec<String>,
    /// Writes the sorted first-iteration subset next to the sorted truth.
    #[arg(long)]
    pub sorted_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SpikeArgs {
    /// Earlier year's household totals (CSV or encoded).
    #[arg(long)]
    pub a: PathBuf,
    /// Later year's household totals (CSV or encoded).
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorArg {
    BucketMean,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    /// Samples to explain.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "bucket-mean")]
    pub predictor: PredictorArg,
    /// Labeled dataset the predictor is fitted on.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Maximum number of samples explained.
    #[arg(long, default_value_t = 500)]
    pub limit: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Population model (JSON); the built-in reference model when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub households: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "synthetic")]
    pub survey_id: String,
    #[arg(long, default_value_t = 2017)]
    pub year: i32,
    /// Overrides the model's missingness rate.
    #[arg(long)]
    pub missingness: Option<f64>,
    /// Multiplies the model's propensity.
    #[arg(long)]
    pub spike_factor: Option<f64>,
    #[arg(long)]
    pub out_full: PathBuf,
    #[arg(long)]
    pub out_missing: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::DictionaryMismatch { .. } => EXIT_DICTIONARY,
                Error::Schema(_)
                | Error::Mapping { .. }
                | Error::Ingest { .. }
                | Error::Format { .. }
                | Error::Json(_)
                | Error::Csv(_) => EXIT_FORMAT,
                Error::Data(_)
                | Error::Integrity(_)
                | Error::Dimension { .. }
                | Error::Empty(_)
                | Error::Precondition(_)
                | Error::TooManyFeatures { .. } => EXIT_DATA,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    /// SHA-256 of every input file.
    pub inputs: IndexMap<String, String>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

/// Outputs staged in memory, written atomically only once the run succeeds.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Option<Vec<u8>>,
}

impl Outputs {
    fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_owned(), bytes));
    }

    fn add_or_stdout(&mut self, path: Option<&Path>, bytes: Vec<u8>) {
        match path {
            Some(p) => self.add(p, bytes),
            None => self.stdout = Some(bytes),
        }
    }
}

struct Run {
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    /// Manifest goes to `<primary>.manifest.json`; stderr when absent.
    primary: Option<PathBuf>,
    outputs: Outputs,
}

fn require_seed(seed: Option<u64>, cmd: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage(format!("{cmd} is stochastic and requires --seed")))
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_atomic(files: &[(PathBuf, Vec<u8>)]) -> CliResult<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    }
    Ok(())
}

/// Reads household totals from an encoded dataset or a CSV with `y_total`.
fn load_totals(path: &Path) -> CliResult<Vec<f64>> {
    if EncodedDataset::sniff(path)? {
        return Ok(EncodedDataset::load(path)?.household_totals().into_values().collect());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(Error::from)?.clone();
    let col = headers.iter().position(|h| h == "y_total").ok_or_else(|| Error::Format {
        path: path.to_owned(),
        message: "no y_total column".into(),
    })?;
    let mut totals = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let field = record.get(col).unwrap_or("");
        let v: f64 = field.trim().parse().map_err(|_| Error::Ingest {
            path: path.to_owned(),
            row: i as u64 + 2,
            message: format!("y_total {field:?} is not a number"),
        })?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Ingest {
                path: path.to_owned(),
                row: i as u64 + 2,
                message: format!("y_total {v} must be a non-negative finite number"),
            }
            .into());
        }
        totals.push(v);
    }
    Ok(totals)
}

fn csv_bytes<F>(headers: &[&str], rows: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).map_err(Error::from)?;
    rows(&mut w).map_err(Error::from)?;
    w.into_inner()
        .map_err(|e| CliError::Lib(Error::Data(format!("csv buffer: {e}"))))
}

fn cmd_ingest(a: &IngestArgs) -> CliResult<Run> {
    let spec = HarmonizationSpec::load(&a.spec)?;
    let keys = spec.survey(&a.survey_id)?;
    let paths = TablePaths {
        households: a.households.clone(),
        persons: a.persons.clone(),
        days: a.days.clone(),
    };
    let raw = ingest::load_tables(&paths, &a.survey_id, keys)?;
    let ds = ingest::assemble(&raw, &spec, a.year)?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out, ds.to_bytes()?);
    Ok(Run {
        seed: None,
        inputs: vec![a.households.clone(), a.persons.clone(), a.days.clone(), a.spec.clone()],
        primary: Some(a.out.clone()),
        outputs,
    })
}

fn cmd_describe(a: &DescribeArgs) -> CliResult<Run> {
    let ds = EncodedDataset::load(&a.data)?;
    let report = ingest::describe(&ds);
    let mut outputs = Outputs::default();
    outputs.add_or_stdout(a.out.as_deref(), json_bytes(&report)?);
    Ok(Run {
        seed: None,
        inputs: vec![a.data.clone()],
        primary: a.out.clone(),
        outputs,
    })
}

fn cmd_impute(a: &ImputeArgs) -> CliResult<Run> {
    let source = EncodedDataset::load(&a.source)?;
    let candidate = EncodedDataset::load(&a.candidate)?;
    source.ensure_compatible(&candidate)?;
    let opts = ImputeOptions {
        impute_all: a.impute_all,
        matching: a.matching.options()?,
        weight_mode: match a.weight {
            WeightArg::Global => WeightMode::Global,
            WeightArg::PerHousehold => WeightMode::PerHousehold,
        },
    };
    let result = match a.method {
        ImputeMethod::Nn => {
            let pool = if a.candidate_only {
                candidate.labeled()
            } else {
                matching::donor_pool(&candidate, &source)?
            };
            matching::impute(&source, &pool, opts)?
        }
        ImputeMethod::Mean => evaluation::baseline_mean_impute(&source)?,
    };

    let samples = csv_bytes(
        &["household_id", "sample_index", "matched_bucket", "distance", "y_imputed"],
        |w| {
            for (i, s) in source.samples().iter().enumerate() {
                let (bucket, distance) = match &result.assignment {
                    Some(m) if result.imputed[i] => (m.target[i].to_string(), m.distance[i].to_string()),
                    _ => (String::new(), String::new()),
                };
                w.write_record([
                    s.household_id.as_str(),
                    &i.to_string(),
                    &bucket,
                    &distance,
                    &result.per_sample_y[i].to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    let households = csv_bytes(&["household_id", "y_total"], |w| {
        for (h, y) in &result.per_household_y {
            w.write_record([h.as_str(), &y.to_string()])?;
        }
        Ok(())
    })?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out, samples);
    outputs.add(&suffixed(&a.out, ".households.csv"), households);
    Ok(Run {
        seed: a.matching.seed.filter(|_| a.matching.tie_break == TieBreakArg::Random),
        inputs: vec![a.source.clone(), a.candidate.clone()],
        primary: Some(a.out.clone()),
        outputs,
    })
}

fn cmd_synthesize(a: &SynthesizeArgs) -> CliResult<Run> {
    let source2 = EncodedDataset::load(&a.source2)?;
    let source1 = EncodedDataset::load(&a.source1)?;
    let candidate = EncodedDataset::load(&a.candidate)?;
    let norm = if a.literal_v2_norm {
        OuterNorm::AllSource1
    } else {
        match a.outer_norm {
            NormArg::Contributing => OuterNorm::Contributing,
            NormArg::Matched => OuterNorm::Matched,
            NormArg::AllSource1 => OuterNorm::AllSource1,
        }
    };
    let opts = SynthesisOptions {
        matching: a.matching.options()?,
        norm,
    };
    let run = synthesis::generate(&source2, &source1, &candidate, opts)?;
    let survey_id = a.survey_id.clone().unwrap_or_else(|| candidate.survey_id.clone());
    let year = a.year.unwrap_or(candidate.year);
    let encoded = run.to_encoded(&survey_id, year)?;
    let provenance = csv_bytes(&["bucket_id", "n_S", "n_S_reached", "n_G_total", "y_synth"], |w| {
        for e in &run.synthetic.entries {
            w.write_record([
                e.bucket.to_string(),
                e.n_s.to_string(),
                e.n_s_reached.to_string(),
                e.n_g_total.to_string(),
                e.y.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out, encoded.to_bytes()?);
    let provenance_path = a
        .provenance
        .clone()
        .unwrap_or_else(|| suffixed(&a.out, ".provenance.csv"));
    outputs.add(&provenance_path, provenance);
    Ok(Run {
        seed: a.matching.seed.filter(|_| a.matching.tie_break == TieBreakArg::Random),
        inputs: vec![a.source2.clone(), a.source1.clone(), a.candidate.clone()],
        primary: Some(a.out.clone()),
        outputs,
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<Run> {
    let seed = require_seed(a.seed, "evaluate")?;
    let imputed = load_totals(&a.imputed)?;
    let truth = load_totals(&a.truth)?;
    let mut report = subsample_compare(&imputed, &truth, a.n, &a.cutoffs, seed)?;
    let mut inputs = vec![a.imputed.clone(), a.truth.clone()];
    for spec in &a.baseline {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--baseline expects name=path, got {spec:?}")))?;
        let path = PathBuf::from(path);
        report.add_baseline(name, &load_totals(&path)?, &truth)?;
        inputs.push(path);
    }
    let mut outputs = Outputs::default();
    outputs.add(&a.out, json_bytes(&report)?);
    if let Some(path) = &a.sorted_csv {
        let (drawn, truth_sorted) = sorted_vectors(&imputed, &truth, a.n, seed, 0)?;
        outputs.add(
            path,
            csv_bytes(&["rank", "imputed", "truth"], |w| {
                for (i, (x, t)) in drawn.iter().zip(&truth_sorted).enumerate() {
                    w.write_record([i.to_string(), x.to_string(), t.to_string()])?;
                }
                Ok(())
            })?,
        );
    }
    Ok(Run {
        seed: Some(seed),
        inputs,
        primary: Some(a.out.clone()),
        outputs,
    })
}

fn cmd_spike(a: &SpikeArgs) -> CliResult<Run> {
    let seed = require_seed(a.seed, "spike")?;
    let report = evaluation::spike(&load_totals(&a.a)?, &load_totals(&a.b)?, a.n, seed)?;
    let mut outputs = Outputs::default();
    outputs.add_or_stdout(a.out.as_deref(), json_bytes(&report)?);
    Ok(Run {
        seed: Some(seed),
        inputs: vec![a.a.clone(), a.b.clone()],
        primary: a.out.clone(),
        outputs,
    })
}

fn cmd_attribute(a: &AttributeArgs) -> CliResult<Run> {
    let seed = require_seed(a.seed, "attribute")?;
    let data = EncodedDataset::load(&a.data)?;
    let candidate = EncodedDataset::load(&a.candidate)?;
    data.ensure_compatible(&candidate)?;
    let report = match a.predictor {
        PredictorArg::BucketMean => {
            let predictor = BucketMeanPredictor::fit(&candidate.labeled())?;
            attribute_dataset(&data, &predictor, a.limit, seed)?
        }
    };
    let mut outputs = Outputs::default();
    outputs.add(&a.out, json_bytes(&report)?);
    Ok(Run {
        seed: Some(seed),
        inputs: vec![a.data.clone(), a.candidate.clone()],
        primary: Some(a.out.clone()),
        outputs,
    })
}

fn cmd_gen(a: &GenArgs) -> CliResult<Run> {
    let seed = require_seed(a.seed, "gen")?;
    let mut model = match &a.model {
        Some(path) => PopulationModel::load(path)?,
        None => PopulationModel::reference(),
    };
    if let Some(m) = a.missingness {
        model = model.with_missingness(m);
    }
    if let Some(f) = a.spike_factor {
        model = model.with_spike(f);
    }
    let survey = datagen::generate(&model, a.households, &a.survey_id, a.year, seed)?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out_full, survey.full.to_bytes()?);
    outputs.add(&a.out_missing, survey.missing.to_bytes()?);
    Ok(Run {
        seed: Some(seed),
        inputs: a.model.iter().cloned().collect(),
        primary: Some(a.out_missing.clone()),
        outputs,
    })
}

fn dispatch(cmd: &Command) -> CliResult<(Run, serde_json::Value)> {
    let params = |v: serde_json::Result<serde_json::Value>| v.map_err(|e| CliError::Lib(e.into()));
    Ok(match cmd {
        Command::Ingest(a) => (cmd_ingest(a)?, params(serde_json::to_value(a))?),
        Command::Describe(a) => (cmd_describe(a)?, params(serde_json::to_value(a))?),
        Command::Impute(a) => (cmd_impute(a)?, params(serde_json::to_value(a))?),
        Command::Synthesize(a) => (cmd_synthesize(a)?, params(serde_json::to_value(a))?),
        Command::Evaluate(a) => (cmd_evaluate(a)?, params(serde_json::to_value(a))?),
        Command::Spike(a) => (cmd_spike(a)?, params(serde_json::to_value(a))?),
        Command::Attribute(a) => (cmd_attribute(a)?, params(serde_json::to_value(a))?),
        Command::Gen(a) => (cmd_gen(a)?, params(serde_json::to_value(a))?),
    })
}

const SUBCOMMANDS: [&str; 8] = ["ingest", "describe", "impute", "synthesize", "evaluate", "spike", "attribute", "gen"];

/// Position of the subcommand in `argv` and the `--config` path, if any.
fn scan_argv(argv: &[OsString]) -> (Option<usize>, Option<PathBuf>) {
    let mut sub = None;
    let mut config = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if let Some(v) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if arg == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if arg == "--threads" {
            i += 1;
        } else if sub.is_none() && SUBCOMMANDS.contains(&arg.as_ref()) {
            sub = Some(i);
        }
        i += 1;
    }
    (sub, config)
}

/// Turns a config object into flags. Top-level scalars are global flags;
/// an object under a subcommand's name supplies that subcommand's flags.
fn config_flags(path: &Path, subcommand: &str) -> CliResult<(Vec<OsString>, Vec<OsString>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Usage(format!("config {} must be a JSON object", path.display())))?;
    let to_flags = |map: &serde_json::Map<String, serde_json::Value>, skip_objects: bool| -> CliResult<Vec<OsString>> {
        let mut flags = Vec::new();
        for (key, v) in map {
            let flag = format!("--{}", key.replace('_', "-"));
            match v {
                serde_json::Value::Bool(true) => flags.push(flag.into()),
                serde_json::Value::Bool(false) | serde_json::Value::Null => {}
                serde_json::Value::String(s) => flags.extend([flag.into(), s.into()]),
                serde_json::Value::Number(n) => flags.extend([flag.into(), n.to_string().into()]),
                serde_json::Value::Array(items) => {
                    for item in items {
                        let s = match item {
                            serde_json::Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        flags.extend([OsString::from(&flag), s.into()]);
                    }
                }
                serde_json::Value::Object(_) if skip_objects => {}
                serde_json::Value::Object(_) => {
                    return Err(CliError::Usage(format!("config key {key:?} cannot be an object")))
                }
            }
        }
        Ok(flags)
    };
    let global: serde_json::Map<_, _> = obj
        .iter()
        .filter(|(k, _)| k.as_str() != "config" && !SUBCOMMANDS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let local = match obj.get(subcommand) {
        Some(serde_json::Value::Object(m)) => to_flags(m, false)?,
        Some(_) => return Err(CliError::Usage(format!("config key {subcommand:?} must be an object"))),
        None => Vec::new(),
    };
    Ok((to_flags(&global, true)?, local))
}

fn parse(argv: Vec<OsString>) -> Result<Cli, i32> {
    let (sub, config) = scan_argv(&argv);
    let argv = match (sub, config) {
        (Some(pos), Some(path)) => {
            let name = argv[pos].to_string_lossy().into_owned();
            match config_flags(&path, &name) {
                Ok((global, local)) => {
                    let mut merged: Vec<OsString> = argv[..1].to_vec();
                    merged.extend(global);
                    merged.extend_from_slice(&argv[1..=pos]);
                    merged.extend(local);
                    merged.extend_from_slice(&argv[pos + 1..]);
                    merged
                }
                Err(e) => {
                    eprintln!("fusion: {e}");
                    return Err(e.exit_code());
                }
            }
        }
        _ => argv,
    };
    let matches = Cli::command().try_get_matches_from(argv).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            EXIT_USAGE
        } else {
            0
        }
    })?;
    Cli::from_arg_matches(&matches).map_err(|e| {
        let _ = e.print();
        EXIT_USAGE
    })
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fusion {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;

    let start = Instant::now();
    let (run, params) = pool.install(|| dispatch(&cli.command))?;
    let inputs = run
        .inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect::<CliResult<IndexMap<_, _>>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name().into(),
        params,
        seed: run.seed,
        threads,
        inputs,
        outputs: run.outputs.files.iter().map(|(p, _)| p.display().to_string()).collect(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_bytes = json_bytes(&manifest)?;
    let mut files = run.outputs.files;
    match &run.primary {
        Some(p) => files.push((suffixed(p, ".manifest.json"), manifest_bytes)),
        None => {
            std::io::stderr()
                .write_all(&manifest_bytes)
                .map_err(|e| Error::io("<stderr>", e))?;
        }
    }
    write_atomic(&files)?;
    if let Some(bytes) = run.outputs.stdout {
        std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

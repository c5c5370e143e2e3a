//! Experiment runner behind the `murag` binary.
//!
//! Every subcommand is a plain function here so tests can drive it without
//! spawning processes: [`run_experiment`], [`run_sweep`], [`run_attacks`],
//! [`run_tau_study`] and [`gen_workload`]. Each writes its files into the
//! output directory and returns the rows it wrote.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use murag::attack::{run_attack, AttackSpec, RocCurve};
use murag::corpus::{read_corpus, read_queries, write_corpus, write_queries, Corpus, Document, QueryRecord};
use murag::epsilon::EpsilonAmount;
use murag::generator::{RemoteGenerator, StubGenerator, TokenGenerator};
use murag::mechanisms::Token;
use murag::noise::NoiseSource;
use murag::orchestrators::{MethodConfig, RunReport};
use murag::workload::generate_synthetic_workload;

pub mod config;
mod sweep;

pub use config::{AttackConfig, ExperimentConfig, GeneratorConfig, SweepConfig, TauStudyConfig};
pub use sweep::{run_sweep, sweep_cells, BestRow, Cell, SweepOutcome, SweepRow};

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<murag::error::Error> for CliError {
    fn from(e: murag::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Flags shared by every subcommand.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Zero-noise mechanisms for testing. Voids every privacy claim.
    pub noiseless: bool,
}

/// The configured generator.
pub enum Generator {
    Stub(StubGenerator),
    Remote(RemoteGenerator),
}

impl TokenGenerator for Generator {
    fn vocab_size(&self) -> usize {
        match self {
            Generator::Stub(g) => g.vocab_size(),
            Generator::Remote(g) => g.vocab_size(),
        }
    }

    fn next_token(&self, query: &QueryRecord, context: &[&Document], prefix: &[Token]) -> murag::error::Result<Token> {
        match self {
            Generator::Stub(g) => g.next_token(query, context, prefix),
            Generator::Remote(g) => g.next_token(query, context, prefix),
        }
    }
}

/// Builds the generator; the stub's knowledge is keyed by `seed`.
pub fn build_generator(cfg: &GeneratorConfig, seed: u64) -> Result<Generator> {
    Ok(match cfg {
        GeneratorConfig::Stub { vocab_size, p_base } => {
            Generator::Stub(StubGenerator::new(*vocab_size, *p_base, seed).map_err(CliError::config)?)
        }
        GeneratorConfig::Remote(r) => Generator::Remote(RemoteGenerator::new(r.clone())),
    })
}

pub struct Dataset {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
}

/// Corpus and queries for `seed`: generated from `workload`, or read from files.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    if let Some(spec) = &cfg.workload {
        let w = generate_synthetic_workload(&spec.clone().with_seed(seed))?;
        return Ok(Dataset { corpus: w.corpus, queries: w.queries });
    }
    let open = |p: &Option<PathBuf>| -> Result<BufReader<File>> {
        let p = p.as_ref().ok_or_else(|| CliError::Config("missing data path".into()))?;
        File::open(p)
            .map(BufReader::new)
            .map_err(|e| CliError::Config(format!("cannot open {}: {e}", p.display())))
    };
    let corpus = read_corpus(open(&cfg.corpus)?)?;
    let queries = read_queries(open(&cfg.queries)?)?;
    corpus.check_queries(&queries)?;
    Ok(Dataset { corpus, queries })
}

fn root_noise(seed: u64, noiseless: bool) -> NoiseSource {
    let mut noise = NoiseSource::new(seed);
    noise.set_noiseless(noiseless);
    noise
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub seed: u64,
    /// Empty for non-private methods.
    pub eps_claim: Option<f64>,
    /// Fraction of queries answered correctly.
    pub match_accuracy: f64,
    /// Percent; empty when no query retrieved anything.
    pub retrieval_precision: Option<f64>,
    pub mean_tau_abs_error: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(report: &RunReport, seed: u64) -> Self {
        SummaryRow {
            method: report.method.name().to_string(),
            seed,
            eps_claim: report.eps_claim,
            match_accuracy: report.match_accuracy(),
            retrieval_precision: report.retrieval_precision(),
            mean_tau_abs_error: report.mean_tau_abs_error(),
        }
    }
}

/// Recomputes the claim from the settings alone and compares it with the
/// claim the run reported.
pub fn check_claim(cfg: &MethodConfig, report: &RunReport) -> Result<()> {
    let expected = cfg.expected_claim(report.queries.len());
    let ok = match (expected, report.eps_claim) {
        (None, None) => true,
        (Some(e), Some(r)) => (e - r).abs() <= 1e-9 * e.abs().max(1.0),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{}: reported eps claim {:?} disagrees with recomputed {:?}",
            report.method.name(),
            report.eps_claim,
            expected
        )))
    }
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    Ok(())
}

/// `run`: one method over the configured data.
///
/// Writes `report.jsonl` (one record per query), `summary.csv` and
/// `charges.jsonl` (the privacy-filter charge log; empty for other methods).
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(RunReport, SummaryRow)> {
    let method = cfg.method.as_ref().ok_or_else(|| CliError::Config("`run` needs a `method` section".into()))?;
    prepare(cfg, opts)?;
    let data = load_dataset(cfg, cfg.seed)?;
    let gen = build_generator(&cfg.generator, cfg.seed)?;
    let report = method.run(&data.queries, &data.corpus, &gen, &mut root_noise(cfg.seed, opts.noiseless))?;
    check_claim(method, &report)?;
    let row = SummaryRow::from_report(&report, cfg.seed);
    write_jsonl(&opts.out_dir.join("report.jsonl"), &report.queries)?;
    write_csv(&opts.out_dir.join("summary.csv"), std::slice::from_ref(&row))?;
    write_jsonl(&opts.out_dir.join("charges.jsonl"), &report.charge_log)?;
    Ok((report, row))
}

/// `gen-workload`: writes `corpus.jsonl` and `queries.jsonl`.
pub fn gen_workload(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Dataset> {
    if cfg.workload.is_none() {
        return Err(CliError::Config("`gen-workload` needs a `workload` section".into()));
    }
    prepare(cfg, opts)?;
    let data = load_dataset(cfg, cfg.seed)?;
    write_corpus(&data.corpus, BufWriter::new(File::create(opts.out_dir.join("corpus.jsonl"))?))?;
    write_queries(&data.queries, BufWriter::new(File::create(opts.out_dir.join("queries.jsonl"))?))?;
    Ok(data)
}

/// One line of `attack.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRow {
    pub system: usize,
    pub method: String,
    pub seed: u64,
    pub candidate_id: String,
    /// 1 for members, 0 for non-members.
    pub member: u8,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRun {
    pub system: usize,
    pub method: String,
    pub seed: u64,
    pub auc: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackSummary {
    pub system: usize,
    pub method: String,
    pub seeds: usize,
    pub mean_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub summary: Vec<AttackSummary>,
    pub runs: Vec<AttackRun>,
}

/// `attack`: the interrogation attack against every configured system on
/// every seed. Writes `attack.csv` and `attack.json`.
pub fn run_attacks(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<AttackOutcome> {
    let attack = cfg.attack.as_ref().ok_or_else(|| CliError::Config("`attack` needs an `attack` section".into()))?;
    let base = cfg
        .workload
        .clone()
        .ok_or_else(|| CliError::Config("`attack` needs a synthetic `workload` as its base corpus".into()))?;
    prepare(cfg, opts)?;

    let jobs: Vec<(usize, u64)> = (0..attack.systems.len())
        .flat_map(|s| attack.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let spec = AttackSpec {
                base: base.clone(),
                pairs: attack.pairs,
                probes_per_candidate: attack.probes_per_candidate,
                ledger_mode: attack.ledger_mode,
                seed,
                noiseless: opts.noiseless,
            };
            let gen = build_generator(&cfg.generator, seed)?;
            Ok(run_attack(&spec, &attack.systems[s], &gen)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (&(s, seed), result) in jobs.iter().zip(&results) {
        let method = attack.systems[s].method().name().to_string();
        for c in &result.scores {
            rows.push(AttackRow {
                system: s,
                method: method.clone(),
                seed,
                candidate_id: c.candidate_id.clone(),
                member: u8::from(c.member),
                score: c.score,
            });
        }
        let RocCurve { points, auc } = result.roc.clone();
        runs.push(AttackRun { system: s, method, seed, auc, points });
    }
    let summary = (0..attack.systems.len())
        .map(|s| {
            let aucs: Vec<f64> = runs.iter().filter(|r| r.system == s).map(|r| r.auc).collect();
            AttackSummary {
                system: s,
                method: attack.systems[s].method().name().to_string(),
                seeds: aucs.len(),
                mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
            }
        })
        .collect();
    let outcome = AttackOutcome { summary, runs };
    write_csv(&opts.out_dir.join("attack.csv"), &rows)?;
    write_json(&opts.out_dir.join("attack.json"), &outcome)?;
    Ok(outcome)
}

/// One line of `tau_study.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauRow {
    pub eps_thr: f64,
    pub seeds: usize,
    pub queries: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

/// `tau-study`: error of the released adaptive threshold against the exact
/// top-k threshold, per `eps_thr`. Writes `tau_study.csv`.
pub fn run_tau_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<TauRow>> {
    let study = cfg
        .tau_study
        .as_ref()
        .ok_or_else(|| CliError::Config("`tau-study` needs a `tau_study` section".into()))?;
    prepare(cfg, opts)?;

    let mut methods = Vec::new();
    for &e in &study.eps_thr {
        let mut m = study.method.clone();
        m.eps_thr = EpsilonAmount::from_eps(e).map_err(CliError::config)?;
        m.validate().map_err(CliError::config)?;
        methods.push(MethodConfig::MuragAda(m));
    }
    let jobs: Vec<(usize, u64)> =
        (0..methods.len()).flat_map(|i| study.seeds.iter().map(move |&s| (i, s))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let data = load_dataset(cfg, seed)?;
            let gen = build_generator(&cfg.generator, seed)?;
            let report = methods[i].run(&data.queries, &data.corpus, &gen, &mut root_noise(seed, opts.noiseless))?;
            check_claim(&methods[i], &report)?;
            Ok(report
                .queries
                .iter()
                .filter_map(|q| Some((q.released_tau? - q.exact_tau?).abs()))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<TauRow> = study
        .eps_thr
        .iter()
        .enumerate()
        .map(|(i, &eps_thr)| {
            let all: Vec<f64> = jobs
                .iter()
                .zip(&errors)
                .filter(|((j, _), _)| *j == i)
                .flat_map(|(_, e)| e.iter().copied())
                .collect();
            TauRow {
                eps_thr,
                seeds: study.seeds.len(),
                queries: all.len(),
                mean_abs_error: if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 },
                max_abs_error: all.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    write_csv(&opts.out_dir.join("tau_study.csv"), &rows)?;
    Ok(rows)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book_experiments {}

//! Benchmark harness: runs RS, SMBO, ERS and ESMBO over a suite of tuning
//! problems and seeds, writes one JSON-lines log per (method, problem,
//! seed) cell, and aggregates the logs into comparison reports.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.json                      resolved copy of the benchmark config
//! logs/<method>/<problem>/<seed>.jsonl
//! reports/risks.csv                final test risk, methods × (problem/seed)
//! reports/table.csv                win frequencies with E[rank] and significance
//! reports/expected_rank.csv
//! reports/win_freq.csv  reports/pb_prob.csv  reports/sign_p.csv
//! reports/per_seed_expected_rank.csv
//! reports/series_expected_rank.csv reports/series_win_freq.csv
//! reports/report.json
//! ```
//!
//! Aggregation reads only the logs and `config.json` and never wall times,
//! so re-aggregating reproduces the reports byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agnostic::{weighted_mean, weighted_vote};
use crate::error::{Error, Result};
use crate::esmbo::{history_weights, run_esmbo, BootstrapMode, EnsembleRunState, EsmboOptions};
use crate::learners::{Algorithm, Dataset, LossFn, SyntheticObjective, TaskKind, TuningProblem};
use crate::parallel::{map_indexed, with_jobs, Execution};
use crate::smbo::{run_random_search, run_smbo, write_jsonl, EnsembleStep, IterationLog, RunOutcome, SmboOptions};
use crate::space::HyperParamConfig;
use crate::stats::{smoothed_series, ComparisonReport, RiskTable, Significance};

pub const DEFAULT_BUDGET: usize = 150;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;
pub const DEFAULT_WINDOW: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "SMBO")]
    Smbo,
    #[serde(rename = "ERS")]
    Ers,
    #[serde(rename = "ESMBO")]
    Esmbo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rs, Method::Smbo, Method::Ers, Method::Esmbo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rs => "RS",
            Method::Smbo => "SMBO",
            Method::Ers => "ERS",
            Method::Esmbo => "ESMBO",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DatasetSpec {
    Linear {
        sizes: [usize; 3],
        n_features: usize,
        noise: f64,
        seed: u64,
    },
    Friedman {
        sizes: [usize; 3],
        n_features: usize,
        noise: f64,
        seed: u64,
    },
    TwoGaussians {
        sizes: [usize; 3],
        n_features: usize,
        separation: f64,
        seed: u64,
    },
    /// Header row, last column is the target.
    Csv {
        path: PathBuf,
        task: TaskKind,
        train_frac: f64,
        valid_frac: f64,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Linear { sizes, n_features, noise, seed } => Dataset::linear(*sizes, *n_features, *noise, *seed),
            DatasetSpec::Friedman { sizes, n_features, noise, seed } => {
                Dataset::friedman(*sizes, *n_features, *noise, *seed)
            }
            DatasetSpec::TwoGaussians { sizes, n_features, separation, seed } => {
                Dataset::two_gaussians(*sizes, *n_features, *separation, *seed)
            }
            DatasetSpec::Csv { path, task, train_frac, valid_frac, seed } => {
                Dataset::from_csv(path, *task, (*train_frac, *valid_frac), *seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Synthetic {
        id: String,
        objective: SyntheticObjective,
    },
    Learner {
        id: String,
        algorithm: Algorithm,
        dataset: DatasetSpec,
        /// Defaults to zero-one for classification, squared otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loss: Option<LossFn>,
    },
}

impl ProblemSpec {
    pub fn id(&self) -> &str {
        match self {
            ProblemSpec::Synthetic { id, .. } | ProblemSpec::Learner { id, .. } => id,
        }
    }
}

/// A problem spec with its dataset materialized; instantiated afresh for
/// every cell so training counters stay per run.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedProblem {
    Synthetic {
        id: String,
        objective: SyntheticObjective,
    },
    Learner {
        id: String,
        algorithm: Algorithm,
        data: Dataset,
        loss: LossFn,
    },
}

impl ResolvedProblem {
    pub fn id(&self) -> &str {
        match self {
            ResolvedProblem::Synthetic { id, .. } | ResolvedProblem::Learner { id, .. } => id,
        }
    }

    pub fn instantiate(&self) -> Result<TuningProblem> {
        match self {
            ResolvedProblem::Synthetic { id, objective } => Ok(TuningProblem::synthetic(id, *objective)),
            ResolvedProblem::Learner { id, algorithm, data, loss } => {
                TuningProblem::learner(id, *algorithm, data.clone(), *loss)
            }
        }
    }
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_ensemble_size() -> usize {
    DEFAULT_ENSEMBLE_SIZE
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub suite: Vec<ProblemSpec>,
    pub methods: Vec<Method>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    /// Reads a config file; relative CSV dataset paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.suite {
            if let ProblemSpec::Learner { dataset: DatasetSpec::Csv { path, .. }, .. } = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(config_err("budget must be >= 1"));
        }
        if self.methods.is_empty() || self.suite.is_empty() || self.seeds.is_empty() {
            return Err(config_err("need at least one method, one problem and one seed"));
        }
        if self.ensemble_size == 0 || self.window == 0 {
            return Err(config_err("ensemble_size and window must be >= 1"));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(config_err("duplicate method"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(config_err("duplicate seed"));
        }
        let mut ids: Vec<&str> = Vec::new();
        for p in &self.suite {
            if !valid_id(p.id()) {
                return Err(config_err(format!("problem id {:?} must be [A-Za-z0-9_.-]+", p.id())));
            }
            if ids.contains(&p.id()) {
                return Err(config_err(format!("duplicate problem id {:?}", p.id())));
            }
            ids.push(p.id());
        }
        Ok(())
    }

    /// Validates and materializes every problem. All failures here are
    /// configuration errors.
    pub fn resolve(&self) -> Result<Vec<ResolvedProblem>> {
        self.validate()?;
        self.suite
            .iter()
            .map(|p| {
                let r = match p {
                    ProblemSpec::Synthetic { id, objective } => ResolvedProblem::Synthetic {
                        id: id.clone(),
                        objective: *objective,
                    },
                    ProblemSpec::Learner { id, algorithm, dataset, loss } => {
                        let data = dataset.build().map_err(|e| config_err(format!("problem {id}: {e}")))?;
                        let loss = loss.unwrap_or(match data.task {
                            TaskKind::Classification => LossFn::ZeroOne,
                            TaskKind::Regression => LossFn::Squared,
                        });
                        ResolvedProblem::Learner {
                            id: id.clone(),
                            algorithm: *algorithm,
                            data,
                            loss,
                        }
                    }
                };
                r.instantiate().map_err(|e| config_err(format!("problem {}: {e}", p.id())))?;
                Ok(r)
            })
            .collect()
    }
}

/// One line of a cell log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub problem: String,
    pub seed: u64,
    pub iteration: usize,
    pub config: HyperParamConfig,
    pub validation_risk: Option<f64>,
    /// Test risk of the incumbent (RS, SMBO) or of the ensemble finalized
    /// from the first `iteration` evaluations (ERS, ESMBO).
    pub test_risk: Option<f64>,
    pub wall_time: f64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleStep>,
}

/// Lazily computed test predictions of each evaluation.
struct TestPredictions<'a> {
    problem: &'a TuningProblem,
    cache: Vec<Option<Option<Vec<f64>>>>,
}

impl<'a> TestPredictions<'a> {
    fn new(problem: &'a TuningProblem, n: usize) -> Self {
        Self {
            problem,
            cache: vec![None; n],
        }
    }

    fn get(&mut self, i: usize, evals: &[crate::smbo::Evaluation]) -> Option<&[f64]> {
        if self.cache[i].is_none() {
            let p = evals[i].predictor.as_ref().map(|p| self.problem.test_predictions(p));
            self.cache[i] = Some(p);
        }
        self.cache[i].as_ref().expect("filled").as_deref()
    }
}

/// Combines member test predictions by weighted vote or weighted mean.
pub fn combine_predictions(task: TaskKind, members: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    let n = members.first().map_or(0, |m| m.0.len());
    (0..n)
        .map(|j| {
            let votes: Vec<(f64, f64)> = members.iter().map(|(p, w)| (p[j], *w)).collect();
            match task {
                TaskKind::Classification => weighted_vote(&votes),
                TaskKind::Regression => weighted_mean(&votes),
            }
        })
        .collect()
}

fn incumbent_test_risks(problem: &TuningProblem, out: &RunOutcome) -> Vec<Option<f64>> {
    let mut preds = TestPredictions::new(problem, out.evaluations.len());
    (1..=out.evaluations.len())
        .map(|k| {
            let i = out.history.best_index_in(k)?;
            preds.get(i, &out.evaluations).map(|p| problem.test_risk_of_predictions(p))
        })
        .collect()
}

fn ensemble_test_risks(problem: &TuningProblem, state: &EnsembleRunState, seed: u64) -> Result<Vec<Option<f64>>> {
    let mut preds = TestPredictions::new(problem, state.len());
    (1..=state.len())
        .map(|k| {
            let weights = state.member_weights_at(k, seed);
            for &(i, _) in &weights {
                preds.get(i, &state.trained);
            }
            let members: Vec<(&[f64], f64)> = weights
                .iter()
                .filter_map(|&(i, w)| preds.cache[i].as_ref().and_then(|p| p.as_deref()).map(|p| (p, w)))
                .collect();
            if members.is_empty() {
                return Ok(None);
            }
            let combined = combine_predictions(state.task, &members)?;
            Ok(Some(problem.test_risk_of_predictions(&combined)))
        })
        .collect()
}

fn records(
    method: Method,
    problem: &str,
    seed: u64,
    log: Vec<IterationLog>,
    test: Vec<Option<f64>>,
) -> Vec<RunRecord> {
    log.into_iter()
        .zip(test)
        .map(|(l, t)| RunRecord {
            method,
            problem: problem.to_string(),
            seed,
            iteration: l.iteration,
            config: l.config,
            validation_risk: l.validation_risk,
            test_risk: t.filter(|v| v.is_finite()),
            wall_time: l.wall_time,
            ensemble: l.ensemble,
        })
        .collect()
}

/// Per-run knobs shared by every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOptions {
    pub budget: usize,
    pub ensemble_size: usize,
    pub smbo: SmboOptions,
}

impl CellOptions {
    pub fn from_config(cfg: &BenchmarkConfig) -> Self {
        Self {
            budget: cfg.budget,
            ensemble_size: cfg.ensemble_size,
            smbo: SmboOptions::default(),
        }
    }
}

/// Runs one (method, problem, seed) cell and returns its log records.
pub fn run_cell(problem: &ResolvedProblem, method: Method, seed: u64, opts: &CellOptions) -> Result<Vec<RunRecord>> {
    let tp = problem.instantiate()?;
    let id = problem.id();
    let m = opts.budget;
    let n = opts.ensemble_size;
    let recs = match method {
        Method::Rs | Method::Smbo => {
            let out = if method == Method::Rs {
                run_random_search(&tp, m, seed)?
            } else {
                run_smbo(&tp, m, seed, &opts.smbo)?
            };
            let test = incumbent_test_risks(&tp, &out);
            records(method, id, seed, out.log, test)
        }
        Method::Ers => {
            let out = run_random_search(&tp, m, seed)?;
            let weights = (0..n)
                .map(|j| history_weights(tp.validation_size(), j, seed, BootstrapMode::Resample))
                .collect::<Result<Vec<_>>>()?;
            let state = EnsembleRunState::from_evaluations(tp.task(), weights, out.evaluations)?;
            let test = ensemble_test_risks(&tp, &state, seed)?;
            records(method, id, seed, out.log, test)
        }
        Method::Esmbo => {
            let eo = EsmboOptions {
                smbo: opts.smbo.clone(),
                ensemble_size: n,
                bootstrap: BootstrapMode::Resample,
            };
            let out = run_esmbo(&tp, m, seed, &eo)?;
            let test = ensemble_test_risks(&tp, &out.state, seed)?;
            records(method, id, seed, out.log, test)
        }
    };
    if tp.training_count() > m {
        return Err(Error::Training(format!("{method}/{id}/{seed}: {} trainings for budget {m}", tp.training_count())));
    }
    Ok(recs)
}

pub fn log_path(out: &Path, method: Method, problem: &str, seed: u64) -> PathBuf {
    out.join("logs").join(method.name()).join(problem).join(format!("{seed}.jsonl"))
}

pub fn read_log(path: &Path) -> Result<Vec<RunRecord>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn log_is_complete(records: &[RunRecord], method: Method, problem: &str, seed: u64, budget: usize) -> bool {
    records.len() == budget
        && records
            .iter()
            .enumerate()
            .all(|(i, r)| r.iteration == i + 1 && r.method == method && r.problem == problem && r.seed == seed)
}

fn is_complete(out: &Path, method: Method, problem: &str, seed: u64, budget: usize) -> bool {
    read_log(&log_path(out, method, problem, seed)).is_ok_and(|r| log_is_complete(&r, method, problem, seed, budget))
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSummary {
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub aggregate: Aggregate,
}

/// Runs every missing cell on up to `jobs` threads, then aggregates.
/// Cells whose logs are already complete are skipped.
pub fn run_benchmark(cfg: &BenchmarkConfig, out: &Path, jobs: usize) -> Result<BenchmarkSummary> {
    let problems = cfg.resolve()?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, cfg)?;
        Ok(())
    })?;
    let opts = CellOptions::from_config(cfg);
    let mut pending = Vec::new();
    let mut skipped = 0;
    for &method in &cfg.methods {
        for p in &problems {
            for &seed in &cfg.seeds {
                if is_complete(out, method, p.id(), seed, cfg.budget) {
                    skipped += 1;
                } else {
                    pending.push((method, p, seed));
                }
            }
        }
    }
    let results = with_jobs(jobs, || {
        map_indexed(Execution::Parallel, pending.len(), |i| {
            let (method, p, seed) = pending[i];
            let recs = run_cell(p, method, seed, &opts)?;
            write_atomic(&log_path(out, method, p.id(), seed), |w| write_jsonl(w, &recs))
        })
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let aggregate = aggregate(out)?;
    Ok(BenchmarkSummary {
        cells_run: pending.len(),
        cells_skipped: skipped,
        aggregate,
    })
}

/// Everything the reports are made of.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub budget: usize,
    pub window: usize,
    pub methods: Vec<Method>,
    /// `(problem, seed)` columns, sorted.
    pub columns: Vec<(String, u64)>,
    /// Quantized final test risks.
    pub final_table: RiskTable,
    pub overall: ComparisonReport,
    /// Per-seed comparison over the problems.
    pub per_seed: Vec<(u64, ComparisonReport)>,
    /// Smoothed per-iteration comparisons.
    pub series: Vec<ComparisonReport>,
}

fn sub_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for e in fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_dir() {
            out.push((e.file_name().to_string_lossy().into_owned(), e.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// `(problem, seed) → test risk per iteration`.
type CellRisks = BTreeMap<(String, u64), Vec<Option<f64>>>;

/// Reads every log under `out/logs`, keyed by method.
fn collect_logs(out: &Path) -> Result<BTreeMap<Method, CellRisks>> {
    let mut all = BTreeMap::new();
    for (mname, mdir) in sub_dirs(&out.join("logs"))? {
        let method: Method = mname.parse()?;
        let cells: &mut CellRisks = all.entry(method).or_default();
        for (pname, pdir) in sub_dirs(&mdir)? {
            let mut files: Vec<PathBuf> = fs::read_dir(&pdir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|f| f.extension().is_some_and(|x| x == "jsonl"));
            files.sort();
            for f in files {
                let seed: u64 = f
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unexpected log file {}", f.display())))?;
                let recs = read_log(&f)?;
                if !log_is_complete(&recs, method, &pname, seed, recs.len()) || recs.is_empty() {
                    return Err(Error::Config(format!("malformed log {}", f.display())));
                }
                cells.insert((pname.clone(), seed), recs.iter().map(|r| r.test_risk).collect());
            }
        }
    }
    Ok(all)
}

fn risk_or_worst(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::MAX)
}

/// Pure function of `out/logs` and `out/config.json`.
pub fn summarize(out: &Path) -> Result<Aggregate> {
    let window = match fs::read_to_string(out.join("config.json")) {
        Ok(text) => BenchmarkConfig::from_json(&text)?.window,
        Err(_) => DEFAULT_WINDOW,
    };
    let logs = collect_logs(out)?;
    let methods: Vec<Method> = logs.keys().copied().collect();
    let Some(first) = logs.values().next() else {
        return Err(Error::Config(format!("no logs under {}", out.join("logs").display())));
    };
    let columns: Vec<(String, u64)> = first.keys().cloned().collect();
    let budget = first.values().next().map_or(0, Vec::len);
    for cells in logs.values() {
        if cells.keys().ne(columns.iter()) || cells.values().any(|v| v.len() != budget) {
            return Err(Error::Config("logs do not cover the same problems, seeds and budget for every method".into()));
        }
    }
    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let col_names: Vec<String> = columns.iter().map(|(p, s)| format!("{p}/{s}")).collect();
    let table_at = |k: usize, cols: &[usize]| -> Result<RiskTable> {
        let rows = methods
            .iter()
            .map(|m| {
                let cells = &logs[m];
                cols.iter().map(|&c| risk_or_worst(cells[&columns[c]][k])).collect()
            })
            .collect();
        Ok(RiskTable::new(names.clone(), cols.iter().map(|&c| col_names[c].clone()).collect(), rows)?.quantized())
    };
    let all_cols: Vec<usize> = (0..columns.len()).collect();
    let final_table = table_at(budget - 1, &all_cols)?;
    let overall = ComparisonReport::compare(&final_table);

    let mut seeds: Vec<u64> = columns.iter().map(|c| c.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let per_seed = seeds
        .iter()
        .map(|&s| {
            let cols: Vec<usize> = all_cols.iter().copied().filter(|&c| columns[c].1 == s).collect();
            Ok((s, ComparisonReport::compare(&table_at(budget - 1, &cols)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<ComparisonReport> = (0..budget)
        .map(|k| Ok(ComparisonReport::compare(&table_at(k, &all_cols)?)))
        .collect::<Result<_>>()?;
    let series = smoothed_series(&raw, window)?;
    Ok(Aggregate {
        budget,
        window,
        methods,
        columns,
        final_table,
        overall,
        per_seed,
        series,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn write_matrix(path: &Path, r: &ComparisonReport, m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["method".to_string()];
    header.extend(r.methods.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in r.methods.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn mark(s: Significance) -> char {
    match s {
        Significance::None => '·',
        Significance::Significant => '○',
        Significance::HighlySignificant => '●',
    }
}

/// Win-frequency table with rows and columns sorted by expected rank, an
/// `E[rank]` column, and two marks per cell (PB test, then sign test): `●`
/// highly significant, `○` significant, `·` neither.
pub fn format_table(report: &ComparisonReport) -> Result<String> {
    let r = report.sorted();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "expected_rank".to_string()];
    header.extend(r.methods.iter().cloned());
    w.write_record(&header)?;
    for i in 0..r.methods.len() {
        let mut rec = vec![r.methods[i].clone(), format!("{:.4}", r.expected_ranks[i])];
        for l in 0..r.methods.len() {
            rec.push(if i == l {
                "-".to_string()
            } else {
                format!("{:.4} {}{}", r.win_freq[i][l], mark(r.pb_flags[i][l]), mark(r.sign_flags[i][l]))
            });
        }
        w.write_record(&rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::invalid(e.to_string()))
}

/// Writes `table.csv`, `expected_rank.csv`, `win_freq.csv`, `pb_prob.csv`
/// and `sign_p.csv` into `dir`, methods sorted by expected rank.
pub fn emit_tables(report: &ComparisonReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let r = report.sorted();
    fs::write(dir.join("table.csv"), format_table(&r)?)?;
    let mut w = csv_writer(&dir.join("expected_rank.csv"))?;
    w.write_record(["method", "expected_rank"])?;
    for (m, e) in r.methods.iter().zip(&r.expected_ranks) {
        w.write_record([m.clone(), e.to_string()])?;
    }
    w.flush()?;
    write_matrix(&dir.join("win_freq.csv"), &r, &r.win_freq)?;
    write_matrix(&dir.join("pb_prob.csv"), &r, &r.pb_prob)?;
    write_matrix(&dir.join("sign_p.csv"), &r, &r.sign_p)?;
    Ok(())
}

/// JSON document of the aggregated results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub budget: usize,
    pub window: usize,
    pub columns: Vec<String>,
    pub overall: ComparisonReport,
    pub per_seed: Vec<SeedReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub report: ComparisonReport,
}

impl Aggregate {
    pub fn document(&self) -> ReportDocument {
        ReportDocument {
            budget: self.budget,
            window: self.window,
            columns: self.final_table.datasets.clone(),
            overall: self.overall.sorted(),
            per_seed: self
                .per_seed
                .iter()
                .map(|(s, r)| SeedReport {
                    seed: *s,
                    report: r.sorted(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document())? + "\n")
    }

    /// Expected rank of `method` in the per-seed report of `seed`.
    pub fn seed_expected_rank(&self, seed: u64, method: Method) -> Option<f64> {
        let i = self.methods.iter().position(|&m| m == method)?;
        self.per_seed.iter().find(|(s, _)| *s == seed).map(|(_, r)| r.expected_ranks[i])
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        emit_tables(&self.overall, dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;

        let names: Vec<String> = self.methods.iter().map(|m| m.name().to_string()).collect();
        let mut w = csv_writer(&dir.join("risks.csv"))?;
        let mut header = vec!["method".to_string()];
        header.extend(self.final_table.datasets.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(self.final_table.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("per_seed_expected_rank.csv"))?;
        let mut header = vec!["seed".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (s, r) in &self.per_seed {
            let mut rec = vec![s.to_string()];
            rec.extend(r.expected_ranks.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv_writer(&dir.join("series_expected_rank.csv"))?;
        let mut header = vec!["iteration".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (k, r) in self.series.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(r.expected_ranks.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let pairs: Vec<(usize, usize)> = (0..names.len())
            .flat_map(|i| (0..names.len()).filter(move |&l| l != i).map(move |l| (i, l)))
            .collect();
        let mut w = csv_writer(&dir.join("series_win_freq.csv"))?;
        let mut header = vec!["iteration".to_string()];
        header.extend(pairs.iter().map(|&(i, l)| format!("{} vs {}", names[i], names[l])));
        w.write_record(&header)?;
        for (k, r) in self.series.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(pairs.iter().map(|&(i, l)| r.win_freq[i][l].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recomputes the reports from the logs and writes them to `out/reports`.
pub fn aggregate(out: &Path) -> Result<Aggregate> {
    let agg = summarize(out)?;
    agg.write(&out.join("reports"))?;
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// The overall comparison table, rendered from the logs.
pub fn render_report(out: &Path, format: ReportFormat) -> Result<String> {
    let agg = summarize(out)?;
    match format {
        ReportFormat::Csv => format_table(&agg.overall),
        ReportFormat::Json => agg.to_json(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_config(methods: &[&str], budget: usize, seeds: &[u64]) -> BenchmarkConfig {
        let text = format!(
            r#"{{
                "suite": [{{"kind": "synthetic", "id": "branin", "objective": "branin"}},
                          {{"kind": "synthetic", "id": "quad", "objective": "quadratic_1d"}}],
                "methods": [{}],
                "budget": {budget},
                "ensemble_size": 3,
                "seeds": {seeds:?}
            }}"#,
            methods.iter().map(|m| format!("{m:?}")).collect::<Vec<_>>().join(",")
        );
        BenchmarkConfig::from_json(&text).unwrap()
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = synthetic_config(&["RS", "ESMBO"], 5, &[1, 2]);
        assert_eq!(cfg.methods, vec![Method::Rs, Method::Esmbo]);
        assert_eq!(cfg.window, DEFAULT_WINDOW);
        assert_eq!(cfg.resolve().unwrap().len(), 2);

        assert!(matches!(BenchmarkConfig::from_json(r#"{"suite": [], "methods": ["XX"], "seeds": [1]}"#), Err(Error::Config(_))));
        let mut bad = cfg.clone();
        bad.budget = 0;
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        let mut bad = cfg.clone();
        bad.suite.push(bad.suite[0].clone());
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
        let mut bad = cfg;
        bad.suite = vec![ProblemSpec::Learner {
            id: "x".into(),
            algorithm: Algorithm::KnnClassifier,
            dataset: DatasetSpec::Linear { sizes: [20, 10, 10], n_features: 2, noise: 0.1, seed: 0 },
            loss: None,
        }];
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn learner_spec_round_trips() {
        let spec = ProblemSpec::Learner {
            id: "knn".into(),
            algorithm: Algorithm::KnnClassifier,
            dataset: DatasetSpec::TwoGaussians { sizes: [40, 20, 20], n_features: 2, separation: 1.0, seed: 3 },
            loss: None,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains(r#""kind":"learner""#) && text.contains(r#""generator":"two_gaussians""#));
        assert_eq!(serde_json::from_str::<ProblemSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn cells_log_every_iteration() {
        let cfg = synthetic_config(&["RS", "SMBO", "ERS", "ESMBO"], 6, &[1]);
        let problems = cfg.resolve().unwrap();
        let opts = CellOptions {
            smbo: SmboOptions::with_exec(Execution::Sequential),
            ..CellOptions::from_config(&cfg)
        };
        for m in Method::ALL {
            let recs = run_cell(&problems[0], m, 1, &opts).unwrap();
            assert_eq!(recs.len(), 6);
            assert!(recs.iter().enumerate().all(|(i, r)| r.iteration == i + 1));
            assert!(recs.iter().all(|r| r.test_risk.is_some()));
            assert_eq!(recs[0].ensemble.is_some(), m == Method::Esmbo);
        }
        let smbo = run_cell(&problems[0], Method::Smbo, 1, &opts).unwrap();
        let esmbo = run_cell(&problems[0], Method::Esmbo, 1, &opts).unwrap();
        for k in 0..3 {
            assert_eq!(smbo[k].config, esmbo[k].config);
        }
        let rs = run_cell(&problems[0], Method::Rs, 1, &opts).unwrap();
        let ers = run_cell(&problems[0], Method::Ers, 1, &opts).unwrap();
        assert!(rs.iter().zip(&ers).all(|(a, b)| a.config == b.config));
    }

    #[test]
    fn combine_predictions_rules() {
        let a = [0.0, 1.0];
        let b = [1.0, 1.0];
        let c = [1.0, 0.0];
        let v = combine_predictions(TaskKind::Classification, &[(&a, 0.5), (&b, 0.3), (&c, 0.2)]).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
        let r = combine_predictions(TaskKind::Regression, &[(&[0.0][..], 0.25), (&[4.0][..], 0.75)]).unwrap();
        assert_eq!(r, vec![3.0]);
    }

    #[test]
    fn single_method_table() {
        let t = RiskTable::new(vec!["RS".into()], vec!["p/1".into()], vec![vec![0.3]]).unwrap();
        let r = ComparisonReport::compare(&t);
        assert_eq!(r.expected_ranks, vec![1.0]);
        assert_eq!(format_table(&r).unwrap(), "method,expected_rank,RS\nRS,1.0000,-\n");
    }
}

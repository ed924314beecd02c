//! The SMBO loop: suggest a configuration, train, observe the holdout risk,
//! and finally return the argmin of the history. Random search shares the
//! same evaluation and logging path.

use std::io::Write;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_ei, AcquisitionOptions};
use crate::agnostic::{weighted_risk, BootstrapWeights};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpFitOptions, KernelParams};
use crate::learners::{Predictor, TuningProblem};
use crate::parallel::Execution;
use crate::rng::{derive_seed, rng_from, tag};
use crate::sobol::Sobol;
use crate::space::{History, HyperParamConfig, HyperParamSpace};

/// Normalized distance below which two configurations count as the same.
pub const DUPLICATE_TOL: f64 = 1e-9;
const PERTURB_WIDTH: f64 = 1e-3;
const PERTURB_TRIES: u32 = 20;
const SWEEP_POINTS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SmboOptions {
    /// Initial-design size before the first GP fit.
    pub n_init: usize,
    pub fit: GpFitOptions,
    pub acq: AcquisitionOptions,
}

impl Default for SmboOptions {
    fn default() -> Self {
        Self {
            n_init: 3,
            fit: GpFitOptions::default(),
            acq: AcquisitionOptions::default(),
        }
    }
}

impl SmboOptions {
    pub fn with_exec(exec: Execution) -> Self {
        let mut o = Self::default();
        o.fit.exec = exec;
        o.acq.exec = exec;
        o
    }
}

/// Seed of the suggestion stream of history `j` (SMBO uses `j = 0`).
pub fn stream_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, &[tag::SUGGEST, j as u64])
}

/// The `index`-th (0-based) point of the scrambled Sobol initial design.
/// It depends only on the run seed, so every method sharing a seed shares
/// its initial design.
pub fn initial_design_point(space: &HyperParamSpace, index: usize, seed: u64) -> Result<HyperParamConfig> {
    let sobol = Sobol::new(space.len(), Some(derive_seed(seed, &[tag::INITIAL_DESIGN])))?;
    Ok(space.denormalize(&sobol.point(index as u64 + 1)))
}

fn is_duplicate(unit: &[f64], seen: &[Vec<f64>]) -> bool {
    seen.iter()
        .any(|s| s.iter().zip(unit).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
}

/// Stateful suggestion source for one history. Keeps the previous kernel
/// as the warm start of the next fit.
#[derive(Debug, Clone)]
pub struct Suggester<'a> {
    space: &'a HyperParamSpace,
    options: &'a SmboOptions,
    design_seed: u64,
    stream: u64,
    warm: Option<KernelParams>,
}

impl<'a> Suggester<'a> {
    pub fn new(space: &'a HyperParamSpace, options: &'a SmboOptions, design_seed: u64, stream: u64) -> Self {
        Self {
            space,
            options,
            design_seed,
            stream,
            warm: None,
        }
    }

    /// Next configuration to evaluate given `history`. Never fails: GP
    /// failures fall back to a random draw.
    pub fn suggest(&mut self, history: &History) -> Result<HyperParamConfig> {
        let t = history.len();
        let n_obs = history.observations().count();
        let raw = if t < self.options.n_init || n_obs == 0 {
            initial_design_point(self.space, t, self.design_seed)?
        } else {
            self.model_based(history, t as u64)
        };
        self.deduplicate(raw, history, t as u64)
    }

    fn model_based(&mut self, history: &History, t: u64) -> HyperParamConfig {
        let fit = fit_gp(
            history,
            self.space,
            derive_seed(self.stream, &[tag::GP_FIT, t]),
            &self.options.fit,
            self.warm.as_ref(),
        );
        let r_best = history.best_risk().expect("has observations");
        let found = fit.and_then(|gp| {
            self.warm = Some(gp.kernel.clone());
            maximize_ei(&gp, self.space, r_best, derive_seed(self.stream, &[tag::SUGGEST, t]), &self.options.acq)
        });
        match found {
            Ok(r) => r.config,
            Err(_) => self.space.sample_uniform(&mut rng_from(self.stream, &[tag::SUGGEST, t, 4])),
        }
    }

    /// Jitters a colliding suggestion with growing uniform noise, then sweeps
    /// a fresh Sobol sequence. Accepts the duplicate only if every candidate
    /// collides, which happens once a finite space is exhausted.
    fn deduplicate(&self, config: HyperParamConfig, history: &History, t: u64) -> Result<HyperParamConfig> {
        let seen: Vec<Vec<f64>> = history.records().iter().map(|r| self.space.normalize(&r.config)).collect();
        let unit = self.space.normalize(&config);
        if !is_duplicate(&unit, &seen) {
            return Ok(config);
        }
        let mut rng = rng_from(self.stream, &[tag::SUGGEST, t, 3]);
        for attempt in 0..PERTURB_TRIES {
            let width = PERTURB_WIDTH * f64::from(1u32 << attempt);
            let jittered: Vec<f64> = unit
                .iter()
                .map(|u| (u + width * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
                .collect();
            let cand = self.space.denormalize(&jittered);
            if !is_duplicate(&self.space.normalize(&cand), &seen) {
                return Ok(cand);
            }
        }
        let sobol = Sobol::new(self.space.len(), Some(rng.random()))?;
        for i in 1..=SWEEP_POINTS as u64 {
            let cand = self.space.denormalize(&sobol.point(i));
            if !is_duplicate(&self.space.normalize(&cand), &seen) {
                return Ok(cand);
            }
        }
        Ok(config)
    }
}

/// Stateless suggestion: identical to the first call of a fresh
/// [`Suggester`] for history 0 of a run with this seed.
pub fn suggest(
    history: &History,
    space: &HyperParamSpace,
    seed: u64,
    options: &SmboOptions,
) -> Result<HyperParamConfig> {
    Suggester::new(space, options, seed, stream_seed(seed, 0)).suggest(history)
}

/// One training and its validation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub config: HyperParamConfig,
    pub predictor: Option<Predictor>,
    /// Per-example validation losses; `None` when training failed.
    pub losses: Option<Vec<f64>>,
    /// `R_S(h)`, or `+∞` for a failure.
    pub risk: f64,
}

/// Trains `config` once and scores it on the validation split.
pub fn evaluate(problem: &TuningProblem, config: &HyperParamConfig) -> Evaluation {
    let failed = || Evaluation {
        config: config.clone(),
        predictor: None,
        losses: None,
        risk: f64::INFINITY,
    };
    let Ok(predictor) = problem.train(config) else {
        return failed();
    };
    let losses = problem.validation_losses(&predictor);
    if losses.iter().any(|l| !l.is_finite()) {
        return failed();
    }
    let risk = weighted_risk(&losses, &BootstrapWeights::ones(losses.len())).unwrap_or(f64::INFINITY);
    Evaluation {
        config: config.clone(),
        predictor: Some(predictor),
        losses: Some(losses),
        risk,
    }
}

/// Extra log fields of an ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStep {
    /// Round-robin history that issued the suggestion (1-based).
    pub active_history: usize,
    /// Bootstrap risk of the new configuration in each history.
    pub history_risks: Vec<Option<f64>>,
    /// Current winner of each history, as a 1-based iteration.
    pub winners: Vec<Option<usize>>,
}

/// One line of a run log. Failed trainings have `validation_risk: null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub config: HyperParamConfig,
    pub validation_risk: Option<f64>,
    /// Seconds since the run started.
    pub wall_time: f64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleStep>,
}

/// `Some(v)` for finite `v`; failures serialize as `null`.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub history: History,
    pub evaluations: Vec<Evaluation>,
    pub log: Vec<IterationLog>,
}

impl RunOutcome {
    /// Earliest minimum of the validation risk.
    pub fn best_index(&self) -> Option<usize> {
        self.history.best_index()
    }

    pub fn best_config(&self) -> Option<&HyperParamConfig> {
        self.best_index().map(|i| &self.evaluations[i].config)
    }

    pub fn best_predictor(&self) -> Option<&Predictor> {
        self.best_index().and_then(|i| self.evaluations[i].predictor.as_ref())
    }

    pub fn best_risk(&self) -> Option<f64> {
        self.history.best_risk()
    }
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    Ok(())
}

fn run_with(
    problem: &TuningProblem,
    budget: usize,
    mut next: impl FnMut(&History) -> Result<HyperParamConfig>,
) -> Result<RunOutcome> {
    check_budget(budget)?;
    let start = Instant::now();
    let mut history = History::new();
    let mut evaluations = Vec::with_capacity(budget);
    let mut log = Vec::with_capacity(budget);
    for k in 1..=budget {
        let config = next(&history)?;
        let ev = evaluate(problem, &config);
        history.push(config.clone(), ev.risk)?;
        log.push(IterationLog {
            iteration: k,
            config,
            validation_risk: finite(ev.risk),
            wall_time: start.elapsed().as_secs_f64(),
            ensemble: None,
        });
        evaluations.push(ev);
    }
    Ok(RunOutcome { history, evaluations, log })
}

/// `budget` rounds of GP-EI suggestion, each training once.
pub fn run_smbo(problem: &TuningProblem, budget: usize, seed: u64, options: &SmboOptions) -> Result<RunOutcome> {
    let mut suggester = Suggester::new(problem.space(), options, seed, stream_seed(seed, 0));
    run_with(problem, budget, |h| suggester.suggest(h))
}

/// Uniform (per-scale) random search.
pub fn run_random_search(problem: &TuningProblem, budget: usize, seed: u64) -> Result<RunOutcome> {
    let mut rng = rng_from(seed, &[tag::RANDOM_SEARCH]);
    run_with(problem, budget, |_| Ok(problem.space().sample_uniform(&mut rng)))
}

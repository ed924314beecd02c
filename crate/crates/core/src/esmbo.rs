//! Agnostic-Bayes ensembles from SMBO: `N` histories, each scoring every
//! trained predictor on its own bootstrap resample of the validation set,
//! take turns suggesting the next configuration. Every training is shared
//! by all histories through a loss cache, so a run costs `M` trainings
//! regardless of `N`.

use std::collections::HashMap;
use std::time::Instant;

use crate::agnostic::{argmin_random_ties, draw_bootstrap, weighted_risk, BootstrapWeights, Ensemble, Member};
use crate::error::{Error, Result};
use crate::learners::{TaskKind, TuningProblem};
use crate::rng::{derive_seed, rng_from, tag};
use crate::smbo::{evaluate, finite, stream_seed, EnsembleStep, Evaluation, IterationLog, SmboOptions, Suggester};
use crate::space::History;

/// How the per-history validation resamples are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BootstrapMode {
    #[default]
    Resample,
    /// Every history sees the plain validation set.
    AllOnes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsmboOptions {
    pub smbo: SmboOptions,
    pub ensemble_size: usize,
    pub bootstrap: BootstrapMode,
}

impl Default for EsmboOptions {
    fn default() -> Self {
        Self {
            smbo: SmboOptions::default(),
            ensemble_size: 10,
            bootstrap: BootstrapMode::Resample,
        }
    }
}

/// History active at iteration `k` (both 1-based): `((k − 1) mod N) + 1`.
pub fn round_robin_index(k: usize, n: usize) -> usize {
    assert!(k >= 1 && n >= 1, "round_robin_index needs k >= 1 and N >= 1");
    (k - 1) % n + 1
}

/// Resample weights of history `j` (0-based).
pub fn history_weights(m: usize, j: usize, seed: u64, mode: BootstrapMode) -> Result<BootstrapWeights> {
    match mode {
        BootstrapMode::AllOnes => Ok(BootstrapWeights::ones(m)),
        BootstrapMode::Resample => draw_bootstrap(m, derive_seed(seed, &[tag::BOOTSTRAP, j as u64])),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRunState {
    pub task: TaskKind,
    pub histories: Vec<History>,
    pub weights: Vec<BootstrapWeights>,
    /// Validation losses per configuration key; `None` marks a failure.
    pub loss_cache: HashMap<Vec<u64>, Option<Vec<f64>>>,
    /// One entry per iteration, aligned with every history's records.
    pub trained: Vec<Evaluation>,
    pub train_count: usize,
}

impl EnsembleRunState {
    pub fn new(task: TaskKind, weights: Vec<BootstrapWeights>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("ensemble size must be >= 1"));
        }
        Ok(Self {
            task,
            histories: vec![History::new(); weights.len()],
            weights,
            loss_cache: HashMap::new(),
            trained: Vec::new(),
            train_count: 0,
        })
    }

    /// Builds the state post hoc from an existing sequence of evaluations,
    /// as if they had been observed in order.
    pub fn from_evaluations(
        task: TaskKind,
        weights: Vec<BootstrapWeights>,
        evaluations: Vec<Evaluation>,
    ) -> Result<Self> {
        let mut state = Self::new(task, weights)?;
        for ev in evaluations {
            state.observe(ev, true)?;
        }
        Ok(state)
    }

    pub fn ensemble_size(&self) -> usize {
        self.histories.len()
    }

    pub fn len(&self) -> usize {
        self.trained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trained.is_empty()
    }

    /// Adds one evaluation to every history and returns the per-history
    /// risks.
    fn observe(&mut self, ev: Evaluation, trained: bool) -> Result<Vec<f64>> {
        let risks = self
            .weights
            .iter()
            .map(|w| match &ev.losses {
                Some(l) => weighted_risk(l, w),
                None => Ok(f64::INFINITY),
            })
            .collect::<Result<Vec<f64>>>()?;
        for (h, &r) in self.histories.iter_mut().zip(&risks) {
            h.push(ev.config.clone(), r)?;
        }
        self.loss_cache.insert(ev.config.key(), ev.losses.clone());
        self.trained.push(ev);
        self.train_count += usize::from(trained);
        Ok(risks)
    }

    /// Every stored risk equals the cached losses reweighted, to `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.histories.iter().zip(&self.weights).all(|(h, w)| {
            h.len() == self.trained.len()
                && h.records().iter().all(|r| match self.loss_cache.get(&r.config.key()) {
                    Some(Some(l)) => weighted_risk(l, w).is_ok_and(|v| (v - r.risk).abs() <= tol),
                    Some(None) => r.risk == f64::INFINITY,
                    None => false,
                })
        })
    }

    /// Winner of each history among the first `k` evaluations (0-based
    /// index into `trained`). Ties are broken uniformly at random from a
    /// per-history stream of `seed`; histories with no finite risk have
    /// no winner.
    pub fn winners_at(&self, k: usize, seed: u64) -> Vec<Option<usize>> {
        self.histories
            .iter()
            .enumerate()
            .map(|(j, h)| {
                let risks: Vec<f64> = h.records().iter().take(k).map(|r| r.risk).collect();
                let mut rng = rng_from(seed, &[tag::FINALIZE, j as u64]);
                argmin_random_ties(&risks, &mut rng).filter(|&i| risks[i].is_finite())
            })
            .collect()
    }

    /// `(index into trained, weight)` pairs of the ensemble finalized from
    /// the first `k` evaluations, in order of first training. Each history
    /// contributes weight `1/N` to its winner.
    pub fn member_weights_at(&self, k: usize, seed: u64) -> Vec<(usize, f64)> {
        let n = self.ensemble_size() as f64;
        let mut wins: Vec<(usize, usize)> = Vec::new();
        for w in self.winners_at(k, seed).into_iter().flatten() {
            match wins.iter_mut().find(|(i, _)| *i == w) {
                Some(e) => e.1 += 1,
                None => wins.push((w, 1)),
            }
        }
        wins.sort_by_key(|e| e.0);
        wins.into_iter().map(|(i, c)| (i, c as f64 / n)).collect()
    }

    pub fn finalize_at(&self, k: usize, seed: u64) -> Result<Ensemble> {
        let members = self
            .member_weights_at(k, seed)
            .into_iter()
            .filter_map(|(i, weight)| {
                self.trained[i]
                    .predictor
                    .clone()
                    .map(|predictor| Member { predictor, weight })
            })
            .collect::<Vec<_>>();
        if members.is_empty() {
            return Err(Error::Training("no successful training to build an ensemble from".into()));
        }
        Ensemble::new(members, self.task)
    }
}

/// The ensemble over all evaluations of `state`.
pub fn finalize_ensemble(state: &EnsembleRunState, seed: u64) -> Result<Ensemble> {
    state.finalize_at(state.len(), seed)
}

#[derive(Debug, Clone)]
pub struct EsmboOutcome {
    pub ensemble: Ensemble,
    pub state: EnsembleRunState,
    pub log: Vec<IterationLog>,
}

fn one_based(w: Vec<Option<usize>>) -> Vec<Option<usize>> {
    w.into_iter().map(|i| i.map(|i| i + 1)).collect()
}

/// Ensemble SMBO. History `j` suggests at iterations `k` with
/// `round_robin_index(k, N) = j + 1`; every training updates all histories.
pub fn run_esmbo(problem: &TuningProblem, budget: usize, seed: u64, options: &EsmboOptions) -> Result<EsmboOutcome> {
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    let n = options.ensemble_size;
    if n == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    let m = problem.validation_size();
    let weights = (0..n)
        .map(|j| history_weights(m, j, seed, options.bootstrap))
        .collect::<Result<Vec<_>>>()?;
    let mut state = EnsembleRunState::new(problem.task(), weights)?;
    let space = problem.space();
    let mut suggesters: Vec<Suggester> = (0..n)
        .map(|j| Suggester::new(space, &options.smbo, seed, stream_seed(seed, j)))
        .collect();

    let start = Instant::now();
    let mut log = Vec::with_capacity(budget);
    for k in 1..=budget {
        let v = round_robin_index(k, n);
        let config = suggesters[v - 1].suggest(&state.histories[v - 1])?;
        let (ev, trained) = match state.loss_cache.get(&config.key()) {
            Some(_) => {
                let prev = state.trained.iter().find(|e| e.config == config).expect("cached").clone();
                (prev, false)
            }
            None => (evaluate(problem, &config), true),
        };
        let validation_risk = finite(ev.risk);
        let risks = state.observe(ev, trained)?;
        log.push(IterationLog {
            iteration: k,
            config,
            validation_risk,
            wall_time: start.elapsed().as_secs_f64(),
            ensemble: Some(EnsembleStep {
                active_history: v,
                history_risks: risks.into_iter().map(finite).collect(),
                winners: one_based(state.winners_at(k, seed)),
            }),
        });
    }
    let ensemble = finalize_ensemble(&state, seed)?;
    Ok(EsmboOutcome { ensemble, state, log })
}

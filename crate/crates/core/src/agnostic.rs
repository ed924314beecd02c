//! Agnostic-Bayes inference over a finite set of predictors: bootstrap
//! resampling of the validation set, the posterior over which predictor has
//! the smallest true risk, and the ensemble decision rules.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{Predictor, TaskKind};
use crate::parallel::{map_indexed, Execution};
use crate::rng::{derive_seed, rng_from, tag, Rng};

/// Per-example losses: rows are predictors, columns validation examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    n_examples: usize,
    data: Vec<f64>,
}

impl LossMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_examples = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || n_examples == 0 {
            return Err(Error::invalid("loss matrix needs at least one row and column"));
        }
        if rows.iter().any(|r| r.len() != n_examples) {
            return Err(Error::invalid("loss matrix rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("losses must be finite and non-negative"));
        }
        Ok(Self {
            n_examples,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_predictors(&self) -> usize {
        self.data.len() / self.n_examples
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_examples..(i + 1) * self.n_examples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_examples)
    }

    /// One header row (`l0..l{m-1}`), then one row per predictor.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.n_examples).map(|i| format!("l{i}")))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let row = rec?
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::invalid(format!("bad loss {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }
}

/// A with-replacement resample `S'` of the validation set, as integer
/// multiplicities. Draws always sum to `m`; hand-built counts only need a
/// positive total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapWeights {
    counts: Vec<u32>,
}

impl BootstrapWeights {
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("bootstrap needs at least one example"));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::invalid("bootstrap counts must not all be zero"));
        }
        Ok(Self { counts })
    }

    /// `S' = S`.
    pub fn ones(m: usize) -> Self {
        Self { counts: vec![1; m] }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn draw_with(m: usize, rng: &mut Rng) -> Self {
        let mut counts = vec![0u32; m];
        for _ in 0..m {
            counts[rng.random_range(0..m)] += 1;
        }
        Self { counts }
    }
}

pub fn draw_bootstrap(m: usize, seed: u64) -> Result<BootstrapWeights> {
    if m == 0 {
        return Err(Error::invalid("bootstrap size must be >= 1"));
    }
    Ok(BootstrapWeights::draw_with(m, &mut rng_from(seed, &[tag::BOOTSTRAP])))
}

/// `R_{S'}(h) = Σ_i counts_i · l_i / Σ_i counts_i` (the denominator is `m`
/// for any drawn resample). This is the single summation used
/// for every holdout risk in the crate, so unit weights reproduce `R_S`
/// bit for bit.
pub fn weighted_risk(loss_row: &[f64], weights: &BootstrapWeights) -> Result<f64> {
    if loss_row.len() != weights.len() {
        return Err(Error::invalid(format!(
            "loss row has {} entries, weights {}",
            loss_row.len(),
            weights.len()
        )));
    }
    let s: f64 = loss_row
        .iter()
        .zip(&weights.counts)
        .map(|(l, &c)| f64::from(c) * l)
        .sum();
    Ok(s / weights.total() as f64)
}

/// Index of the minimum; exact ties are broken uniformly with `rng`.
pub(crate) fn argmin_random_ties(values: &[f64], rng: &mut Rng) -> Option<usize> {
    let min = values.iter().copied().filter(|v| !v.is_nan()).min_by(f64::total_cmp)?;
    let ties: Vec<usize> = values.iter().enumerate().filter(|(_, &v)| v == min).map(|(i, _)| i).collect();
    Some(if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    })
}

fn sample_best_with(losses: &LossMatrix, rng: &mut Rng) -> usize {
    let w = BootstrapWeights::draw_with(losses.n_examples(), rng);
    let risks: Vec<f64> = losses
        .rows()
        .map(|r| weighted_risk(r, &w).expect("row length matches"))
        .collect();
    argmin_random_ties(&risks, rng).expect("non-empty matrix")
}

/// One draw `h̃⋆ = argmin_γ R_{S'}(h_γ)` from the bootstrap posterior.
pub fn sample_best(losses: &LossMatrix, seed: u64) -> usize {
    sample_best_with(losses, &mut rng_from(seed, &[tag::POSTERIOR]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPosterior {
    pub probs: Vec<f64>,
    pub n_samples: usize,
}

/// Monte Carlo estimate of `p(h_γ is best | S)`; sample `s` is
/// `sample_best(losses, derive_seed(seed, [s]))`.
pub fn estimate_best_posterior(
    losses: &LossMatrix,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<BestPosterior> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let winners = map_indexed(exec, n_samples, |s| sample_best(losses, derive_seed(seed, &[s as u64])));
    let mut counts = vec![0usize; losses.n_predictors()];
    for w in winners {
        counts[w] += 1;
    }
    Ok(BestPosterior {
        probs: counts.iter().map(|&c| c as f64 / n_samples as f64).collect(),
        n_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub predictor: Predictor,
    pub weight: f64,
}

/// Weighted collection of trained predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub task: TaskKind,
}

impl Ensemble {
    pub fn new(members: Vec<Member>, task: TaskKind) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Precondition("ensemble has no members".into()));
        }
        if members.iter().any(|m| !(m.weight >= 0.0) || !m.weight.is_finite()) {
            return Err(Error::invalid("member weights must be finite and >= 0"));
        }
        Ok(Self { members, task })
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        self.members.iter().map(|m| m.weight / total).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self.task {
            TaskKind::Classification => ensemble_predict_classification(self, x),
            TaskKind::Regression => ensemble_predict_regression(self, x),
        }
    }
}

/// `argmax_y Σ w_γ I[h_γ(x) = y]`; ties go to the smallest label.
pub fn weighted_vote(votes: &[(f64, f64)]) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::Precondition("no votes".into()));
    }
    let mut tally: Vec<(f64, f64)> = Vec::new();
    for &(label, w) in votes {
        match tally.iter_mut().find(|(l, _)| *l == label) {
            Some(t) => t.1 += w,
            None => tally.push((label, w)),
        }
    }
    tally.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = tally[0];
    for &t in &tally[1..] {
        if t.1 > best.1 {
            best = t;
        }
    }
    Ok(best.0)
}

/// Weight-normalized mean of predictions.
pub fn weighted_mean(values: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = values.iter().map(|v| v.1).sum();
    if values.is_empty() || !(total > 0.0) {
        return Err(Error::Precondition("no positive weight to average".into()));
    }
    Ok(values.iter().map(|(v, w)| v * w).sum::<f64>() / total)
}

pub fn ensemble_predict_classification(ensemble: &Ensemble, x: &[f64]) -> Result<f64> {
    let votes: Vec<(f64, f64)> = ensemble.members.iter().map(|m| (m.predictor.predict(x), m.weight)).collect();
    weighted_vote(&votes)
}

pub fn ensemble_predict_regression(ensemble: &Ensemble, x: &[f64]) -> Result<f64> {
    let vals: Vec<(f64, f64)> = ensemble.members.iter().map(|m| (m.predictor.predict(x), m.weight)).collect();
    weighted_mean(&vals)
}

//! Desk-scale tuning problems: datasets with train/validation/test splits,
//! closed-form learners with their hyperparameter spaces, losses, and
//! synthetic black-box objectives.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agnostic::{weighted_risk, BootstrapWeights};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SymMatrix};
use crate::rng::rng_from;
use crate::space::{Dimension, HyperParamConfig, HyperParamSpace, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Feature rows and targets. Classification targets are small integers
/// stored as `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub train: Split,
    pub valid: Split,
    pub test: Split,
}

impl Dataset {
    pub fn new(task: TaskKind, train: Split, valid: Split, test: Split) -> Result<Self> {
        let width = train.x.first().map(Vec::len).unwrap_or(0);
        for (name, s) in [("train", &train), ("validation", &valid), ("test", &test)] {
            if s.is_empty() {
                return Err(Error::invalid(format!("{name} split is empty")));
            }
            if s.x.len() != s.y.len() || s.x.iter().any(|r| r.len() != width) {
                return Err(Error::invalid(format!("{name} split has ragged rows")));
            }
            if s.y.iter().chain(s.x.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} split has non-finite values")));
            }
            if task == TaskKind::Classification && s.y.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::invalid("classification targets must be integers"));
            }
        }
        if width == 0 {
            return Err(Error::invalid("dataset needs at least one feature"));
        }
        Ok(Self {
            task,
            train,
            valid,
            test,
        })
    }

    pub fn n_features(&self) -> usize {
        self.train.x[0].len()
    }

    fn from_rows(task: TaskKind, rows: Vec<(Vec<f64>, f64)>, sizes: [usize; 3]) -> Result<Self> {
        let mut it = rows.into_iter();
        let mut take = |n: usize| {
            let (x, y) = it.by_ref().take(n).unzip();
            Split { x, y }
        };
        let train = take(sizes[0]);
        let valid = take(sizes[1]);
        let test = take(sizes[2]);
        Self::new(task, train, valid, test)
    }

    /// `y = x·w + noise`, `x ~ U(−1, 1)^p`, `w ~ N(0, I)`.
    pub fn linear(sizes: [usize; 3], n_features: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed, &[1]);
        let w: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rows = (0..sizes.iter().sum())
            .map(|_| {
                let x: Vec<f64> = (0..n_features).map(|_| rng.random_range(-1.0..1.0)).collect();
                let e: f64 = StandardNormal.sample(&mut rng);
                let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise * e;
                (x, y)
            })
            .collect();
        Self::from_rows(TaskKind::Regression, rows, sizes)
    }

    /// Friedman #1: `10 sin(π x1 x2) + 20 (x3 − ½)² + 10 x4 + 5 x5 + noise`
    /// with `n_features ≥ 5` uniform inputs (the rest are irrelevant).
    pub fn friedman(sizes: [usize; 3], n_features: usize, noise: f64, seed: u64) -> Result<Self> {
        if n_features < 5 {
            return Err(Error::invalid("friedman needs at least 5 features"));
        }
        let mut rng = rng_from(seed, &[2]);
        let rows = (0..sizes.iter().sum())
            .map(|_| {
                let x: Vec<f64> = (0..n_features).map(|_| rng.random::<f64>()).collect();
                let e: f64 = StandardNormal.sample(&mut rng);
                let y = 10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
                    + noise * e;
                (x, y)
            })
            .collect();
        Self::from_rows(TaskKind::Regression, rows, sizes)
    }

    /// Two isotropic Gaussians whose means are `separation` apart; labels 0/1.
    pub fn two_gaussians(sizes: [usize; 3], n_features: usize, separation: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed, &[3]);
        let dir: Vec<f64> = {
            let v: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a / n).collect()
        };
        let rows = (0..sizes.iter().sum())
            .map(|_| {
                let label = if rng.random::<bool>() { 1.0 } else { 0.0 };
                let sign = 2.0 * label - 1.0;
                let x = dir
                    .iter()
                    .map(|d| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        sign * 0.5 * separation * d + e
                    })
                    .collect();
                (x, label)
            })
            .collect();
        Self::from_rows(TaskKind::Classification, rows, sizes)
    }

    /// Reads a CSV with a header row; the last column is the target. Rows
    /// are shuffled with `seed` and split by `fractions` (train, validation;
    /// the rest is test).
    pub fn from_csv(path: &Path, task: TaskKind, fractions: (f64, f64), seed: u64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            if vals.len() < 2 {
                return Err(Error::invalid("csv needs at least one feature and a target"));
            }
            let (x, y) = vals.split_at(vals.len() - 1);
            rows.push((x.to_vec(), y[0]));
        }
        rows.shuffle(&mut rng_from(seed, &[4]));
        let n = rows.len();
        let n_train = (fractions.0 * n as f64).round() as usize;
        let n_valid = (fractions.1 * n as f64).round() as usize;
        let n_test = n.saturating_sub(n_train + n_valid);
        Self::from_rows(task, rows, [n_train, n_valid, n_test])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFn {
    ZeroOne,
    Squared,
}

impl LossFn {
    pub fn eval(self, prediction: f64, target: f64) -> f64 {
        match self {
            LossFn::ZeroOne => {
                if prediction == target {
                    0.0
                } else {
                    1.0
                }
            }
            LossFn::Squared => (prediction - target) * (prediction - target),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ridge,
    KernelRidge,
    /// Kernel ridge on ±1 targets, thresholded at zero (binary only).
    KernelRidgeClassifier,
    KnnRegressor,
    KnnClassifier,
}

impl Algorithm {
    pub fn space(self) -> HyperParamSpace {
        let lambda = Dimension::continuous("lambda", Scale::Log, 1e-5, 1e3);
        let dims = match self {
            Algorithm::Ridge => vec![lambda],
            Algorithm::KernelRidge | Algorithm::KernelRidgeClassifier => {
                vec![lambda, Dimension::continuous("gamma", Scale::Log, 1e-5, 1e3)]
            }
            Algorithm::KnnRegressor | Algorithm::KnnClassifier => vec![Dimension::integer("k", 1, 50)],
        };
        HyperParamSpace::new(dims).expect("built-in spaces are valid")
    }

    pub fn task(self) -> TaskKind {
        match self {
            Algorithm::Ridge | Algorithm::KernelRidge | Algorithm::KnnRegressor => TaskKind::Regression,
            Algorithm::KernelRidgeClassifier | Algorithm::KnnClassifier => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticObjective {
    Branin,
    #[serde(rename = "quadratic_1d")]
    Quadratic1d,
    #[serde(rename = "styblinski_2d")]
    Styblinski2d,
}

impl SyntheticObjective {
    pub fn space(self) -> HyperParamSpace {
        let dims = match self {
            SyntheticObjective::Branin => vec![
                Dimension::continuous("x1", Scale::Linear, -5.0, 10.0),
                Dimension::continuous("x2", Scale::Linear, 0.0, 15.0),
            ],
            SyntheticObjective::Quadratic1d => vec![Dimension::continuous("x", Scale::Linear, -5.0, 5.0)],
            SyntheticObjective::Styblinski2d => vec![
                Dimension::continuous("x1", Scale::Linear, -5.0, 5.0),
                Dimension::continuous("x2", Scale::Linear, -5.0, 5.0),
            ],
        };
        HyperParamSpace::new(dims).expect("built-in spaces are valid")
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            SyntheticObjective::Branin => {
                let (a, r, s) = (1.0, 6.0, 10.0);
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                let (x1, x2) = (x[0], x[1]);
                a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
            }
            SyntheticObjective::Quadratic1d => (x[0] - QUADRATIC_ARGMIN).powi(2) + QUADRATIC_MIN,
            SyntheticObjective::Styblinski2d => {
                0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>()
            }
        }
    }

    /// Published global minimum value.
    pub fn global_minimum(self) -> f64 {
        match self {
            SyntheticObjective::Branin => 0.397_887_357_729_738,
            SyntheticObjective::Quadratic1d => QUADRATIC_MIN,
            SyntheticObjective::Styblinski2d => -78.332_330_74,
        }
    }
}

pub const QUADRATIC_ARGMIN: f64 = 1.3;
pub const QUADRATIC_MIN: f64 = 0.5;

pub fn synthetic_objective(name: SyntheticObjective, config: &HyperParamConfig) -> f64 {
    name.eval(&config.values)
}

/// Per-feature mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.len() as f64;
        let p = x[0].len();
        let mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..p)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Linear {
        weights: Vec<f64>,
        intercept: f64,
    },
    Kernel {
        scaler: Standardizer,
        support: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        gamma: f64,
        offset: f64,
        classify: bool,
    },
    Knn {
        scaler: Standardizer,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        k: usize,
        classify: bool,
    },
    /// Zero-training stand-in for synthetic objectives.
    Constant(f64),
}

/// A trained predictor `h_γ` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub algorithm: Option<Algorithm>,
    pub config: HyperParamConfig,
    model: Model,
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.model {
            Model::Linear { weights, intercept } => {
                intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            Model::Kernel {
                scaler,
                support,
                alpha,
                gamma,
                offset,
                classify,
            } => {
                let z = scaler.apply(x);
                let f = offset
                    + support
                        .iter()
                        .zip(alpha)
                        .map(|(s, a)| a * (-gamma * sq_dist(&z, s)).exp())
                        .sum::<f64>();
                if *classify {
                    if f > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    f
                }
            }
            Model::Knn {
                scaler,
                x: train,
                y,
                k,
                classify,
            } => {
                let z = scaler.apply(x);
                let mut d: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (sq_dist(&z, t), i)).collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let nearest = d[..*k].iter().map(|&(_, i)| y[i]);
                if *classify {
                    let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
                    for label in nearest {
                        *votes.entry(label as i64).or_default() += 1;
                    }
                    // BTreeMap iterates labels ascending, so ties keep the smallest
                    let mut best = (i64::MIN, 0);
                    for (label, count) in votes {
                        if count > best.1 {
                            best = (label, count);
                        }
                    }
                    best.0 as f64
                } else {
                    nearest.sum::<f64>() / *k as f64
                }
            }
            Model::Constant(v) => *v,
        }
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict(r)).collect()
    }

    /// A predictor that always returns `value`, as produced for synthetic
    /// objectives.
    pub fn constant(config: HyperParamConfig, value: f64) -> Self {
        Self {
            algorithm: None,
            config,
            model: Model::Constant(value),
        }
    }

    /// The objective value for synthetic problems.
    pub fn constant_value(&self) -> Option<f64> {
        match self.model {
            Model::Constant(v) => Some(v),
            _ => None,
        }
    }
}

fn train_ridge(train: &Split, lambda: f64) -> Result<Model> {
    let n = train.len() as f64;
    let p = train.x[0].len();
    let xm: Vec<f64> = (0..p).map(|j| train.x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let ym = train.y.iter().sum::<f64>() / n;
    let mut a = SymMatrix::from_fn(p, |i, j| {
        train.x.iter().map(|r| (r[i] - xm[i]) * (r[j] - xm[j])).sum()
    });
    a.add_diagonal(lambda);
    let b: Vec<f64> = (0..p)
        .map(|j| train.x.iter().zip(&train.y).map(|(r, y)| (r[j] - xm[j]) * (y - ym)).sum())
        .collect();
    let chol = Cholesky::factor(&a).ok_or_else(|| Error::Training("ridge normal equations are singular".into()))?;
    let weights = chol.solve(&b);
    let intercept = ym - weights.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();
    Ok(Model::Linear { weights, intercept })
}

fn train_kernel_ridge(train: &Split, lambda: f64, gamma: f64, classify: bool) -> Result<Model> {
    let scaler = Standardizer::fit(&train.x);
    let support: Vec<Vec<f64>> = train.x.iter().map(|r| scaler.apply(r)).collect();
    let targets: Vec<f64> = if classify {
        train.y.iter().map(|&y| if y > 0.0 { 1.0 } else { -1.0 }).collect()
    } else {
        train.y.clone()
    };
    let offset = targets.iter().sum::<f64>() / targets.len() as f64;
    let centered: Vec<f64> = targets.iter().map(|t| t - offset).collect();
    let mut k = SymMatrix::from_fn(support.len(), |i, j| (-gamma * sq_dist(&support[i], &support[j])).exp());
    k.add_diagonal(lambda);
    let chol = Cholesky::factor(&k).ok_or_else(|| Error::Training("kernel system is singular".into()))?;
    let alpha = chol.solve(&centered);
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Training("kernel ridge produced non-finite weights".into()));
    }
    Ok(Model::Kernel {
        scaler,
        support,
        alpha,
        gamma,
        offset,
        classify,
    })
}

fn train_knn(train: &Split, k: usize, classify: bool) -> Model {
    let scaler = Standardizer::fit(&train.x);
    Model::Knn {
        x: train.x.iter().map(|r| scaler.apply(r)).collect(),
        y: train.y.clone(),
        k: k.clamp(1, train.len()),
        scaler,
        classify,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Learner {
        algorithm: Algorithm,
        data: Dataset,
        loss: LossFn,
    },
    Synthetic(SyntheticObjective),
}

/// A learning algorithm bound to its space, data and loss, or a synthetic
/// objective. Counts every training.
#[derive(Debug)]
pub struct TuningProblem {
    pub id: String,
    space: HyperParamSpace,
    kind: ProblemKind,
    trainings: AtomicUsize,
}

impl TuningProblem {
    pub fn learner(id: &str, algorithm: Algorithm, data: Dataset, loss: LossFn) -> Result<Self> {
        if algorithm.task() != data.task {
            return Err(Error::invalid(format!("{algorithm:?} does not fit a {:?} dataset", data.task)));
        }
        if algorithm == Algorithm::KernelRidgeClassifier
            && data.train.y.iter().chain(&data.valid.y).chain(&data.test.y).any(|&y| y != 0.0 && y != 1.0)
        {
            return Err(Error::invalid("kernel ridge classifier needs 0/1 labels"));
        }
        Ok(Self {
            id: id.to_string(),
            space: algorithm.space(),
            kind: ProblemKind::Learner { algorithm, data, loss },
            trainings: AtomicUsize::new(0),
        })
    }

    pub fn synthetic(id: &str, objective: SyntheticObjective) -> Self {
        Self {
            id: id.to_string(),
            space: objective.space(),
            kind: ProblemKind::Synthetic(objective),
            trainings: AtomicUsize::new(0),
        }
    }

    pub fn space(&self) -> &HyperParamSpace {
        &self.space
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn task(&self) -> TaskKind {
        match &self.kind {
            ProblemKind::Learner { data, .. } => data.task,
            ProblemKind::Synthetic(_) => TaskKind::Regression,
        }
    }

    /// Number of validation examples `m` (1 for synthetic objectives).
    pub fn validation_size(&self) -> usize {
        match &self.kind {
            ProblemKind::Synthetic(_) => 1,
            ProblemKind::Learner { data, .. } => data.valid.len(),
        }
    }

    pub fn training_count(&self) -> usize {
        self.trainings.load(Ordering::SeqCst)
    }

    /// Trains `h_γ` on the training split. Every call counts, including
    /// failures.
    pub fn train(&self, config: &HyperParamConfig) -> Result<Predictor> {
        self.trainings.fetch_add(1, Ordering::SeqCst);
        self.space.check(config)?;
        let v = &config.values;
        let (algorithm, model) = match &self.kind {
            ProblemKind::Synthetic(obj) => (None, Model::Constant(obj.eval(v))),
            ProblemKind::Learner { algorithm, data, .. } => {
                let m = match algorithm {
                    Algorithm::Ridge => train_ridge(&data.train, v[0])?,
                    Algorithm::KernelRidge => train_kernel_ridge(&data.train, v[0], v[1], false)?,
                    Algorithm::KernelRidgeClassifier => train_kernel_ridge(&data.train, v[0], v[1], true)?,
                    Algorithm::KnnRegressor => train_knn(&data.train, v[0] as usize, false),
                    Algorithm::KnnClassifier => train_knn(&data.train, v[0] as usize, true),
                };
                (Some(*algorithm), m)
            }
        };
        Ok(Predictor {
            algorithm,
            config: config.clone(),
            model,
        })
    }

    /// Per-example validation losses `l_{γ,i}`. Synthetic objectives have a
    /// single "example" whose loss is the objective value.
    pub fn validation_losses(&self, predictor: &Predictor) -> Vec<f64> {
        match &self.kind {
            ProblemKind::Synthetic(_) => vec![predictor.constant_value().unwrap_or(f64::INFINITY)],
            ProblemKind::Learner { data, loss, .. } => losses(predictor, &data.valid, *loss),
        }
    }

    /// Test-split predictions (synthetic: the objective value).
    pub fn test_predictions(&self, predictor: &Predictor) -> Vec<f64> {
        match &self.kind {
            ProblemKind::Synthetic(_) => vec![predictor.constant_value().unwrap_or(f64::INFINITY)],
            ProblemKind::Learner { data, .. } => predictor.predict_all(&data.test.x),
        }
    }

    /// Mean test loss of a vector of test predictions.
    pub fn test_risk_of_predictions(&self, predictions: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::Synthetic(_) => predictions[0],
            ProblemKind::Learner { data, loss, .. } => {
                let l: Vec<f64> = predictions.iter().zip(&data.test.y).map(|(p, y)| loss.eval(*p, *y)).collect();
                weighted_risk(&l, &BootstrapWeights::ones(l.len())).unwrap_or(f64::INFINITY)
            }
        }
    }

    pub fn test_risk(&self, predictor: &Predictor) -> f64 {
        self.test_risk_of_predictions(&self.test_predictions(predictor))
    }
}

fn losses(predictor: &Predictor, split: &Split, loss: LossFn) -> Vec<f64> {
    split.x.iter().zip(&split.y).map(|(x, y)| loss.eval(predictor.predict(x), *y)).collect()
}

/// Holdout risk `R_S(h)`, or `R_{S'}(h)` when bootstrap weights are given.
pub fn empirical_risk(
    predictor: &Predictor,
    split: &Split,
    loss: LossFn,
    weights: Option<&BootstrapWeights>,
) -> Result<f64> {
    let l = losses(predictor, split, loss);
    match weights {
        Some(w) => weighted_risk(&l, w),
        None => weighted_risk(&l, &BootstrapWeights::ones(l.len())),
    }
}

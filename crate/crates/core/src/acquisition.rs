//! Expected improvement and its maximization over the search space.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::GpModel;
use crate::parallel::{map_indexed, map_slice, Execution};
use crate::rng::{derive_seed, rng_from, tag};
use crate::sobol::Sobol;
use crate::space::{HyperParamConfig, HyperParamSpace};

/// EI below this is treated as flat.
pub const FLAT_EI: f64 = 1e-300;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `E[max(r_best − f, 0)]` for `f ~ N(mean, stdev²)`, i.e.
/// `σ (d Φ(d) + φ(d))` with `d = (r_best − μ)/σ`. The `σ = 0` limit is
/// `max(r_best − μ, 0)`.
pub fn expected_improvement(mean: f64, stdev: f64, r_best: f64) -> f64 {
    let gap = r_best - mean;
    if !(stdev > 0.0) {
        return gap.max(0.0);
    }
    let d = gap / stdev;
    (stdev * (d * norm_cdf(d) + norm_pdf(d))).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub config: HyperParamConfig,
    pub ei_value: f64,
    pub n_restarts_used: usize,
    /// Per-restart convergence (step size fell below tolerance before the
    /// step budget ran out).
    pub restart_converged: Vec<bool>,
    /// False when EI was flat everywhere and a random config was returned.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionOptions {
    pub n_candidates: usize,
    pub n_refine: usize,
    pub max_steps: usize,
    pub step_tol: f64,
    pub exec: Execution,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            n_candidates: 512,
            n_refine: 10,
            max_steps: 100,
            step_tol: 1e-6,
            exec: Execution::default(),
        }
    }
}

fn ei_at(gp: &GpModel, u: &[f64], r_best: f64) -> f64 {
    let (m, v) = gp.predict_unit(u);
    expected_improvement(m, v.sqrt(), r_best)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Larger EI first, then lexicographically smaller point.
fn by_score(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| lexicographic(&a.0, &b.0))
}

/// Bounded gradient ascent on EI with a central-difference gradient.
fn refine(gp: &GpModel, start: &[f64], r_best: f64, opts: &AcquisitionOptions) -> (Vec<f64>, f64, bool) {
    const H: f64 = 1e-6;
    let mut x = start.to_vec();
    let mut f = ei_at(gp, &x, r_best);
    let mut step = 0.05;
    for _ in 0..opts.max_steps {
        let grad: Vec<f64> = (0..x.len())
            .map(|j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] = (xp[j] + H).min(1.0);
                xm[j] = (xm[j] - H).max(0.0);
                (ei_at(gp, &xp, r_best) - ei_at(gp, &xm, r_best)) / (xp[j] - xm[j])
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return (x, f, true);
        }
        loop {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, g)| (xi + step * g / norm).clamp(0.0, 1.0))
                .collect();
            let fc = ei_at(gp, &cand, r_best);
            if fc > f {
                x = cand;
                f = fc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < opts.step_tol {
                return (x, f, true);
            }
        }
    }
    (x, f, false)
}

/// Scores Sobol candidates by EI, refines the best few by gradient ascent,
/// and returns the best configuration (integer dimensions rounded). Falls
/// back to a uniformly random configuration when EI is flat.
pub fn maximize_ei(
    gp: &GpModel,
    space: &HyperParamSpace,
    r_best: f64,
    seed: u64,
    opts: &AcquisitionOptions,
) -> Result<AcquisitionResult> {
    let sobol = Sobol::new(space.len(), Some(derive_seed(seed, &[tag::SUGGEST, 1])))?;
    let candidates = sobol.take(opts.n_candidates.max(1));
    let scores = map_slice(opts.exec, &candidates, |u| ei_at(gp, u, r_best));
    let mut scored: Vec<(Vec<f64>, f64)> = candidates.into_iter().zip(scores).collect();
    scored.sort_by(by_score);
    scored.truncate(opts.n_refine.max(1));

    let refined = map_indexed(opts.exec, scored.len(), |i| refine(gp, &scored[i].0, r_best, opts));
    let restart_converged: Vec<bool> = refined.iter().map(|r| r.2).collect();

    // Round integer dimensions, then rescore at the returned config.
    let mut finals: Vec<(Vec<f64>, f64)> = refined
        .iter()
        .map(|(u, _, _)| {
            let config = space.denormalize(u);
            let ei = ei_at(gp, &space.normalize(&config), r_best);
            (config.values, ei)
        })
        .collect();
    finals.sort_by(by_score);
    let (values, ei_value) = finals.swap_remove(0);

    if !(ei_value > FLAT_EI) {
        let mut rng = rng_from(seed, &[tag::SUGGEST, 2]);
        let config = space.sample_uniform(&mut rng);
        let ei_value = ei_at(gp, &space.normalize(&config), r_best);
        return Ok(AcquisitionResult {
            config,
            ei_value,
            n_restarts_used: refined.len(),
            restart_converged,
            converged: false,
        });
    }
    Ok(AcquisitionResult {
        config: HyperParamConfig::new(values),
        ei_value,
        n_restarts_used: refined.len(),
        restart_converged,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use crate::space::{Dimension, Scale};
    use approx::assert_relative_eq;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_space(d: usize) -> HyperParamSpace {
        HyperParamSpace::new((0..d).map(|i| Dimension::continuous(&format!("x{i}"), Scale::Linear, 0.0, 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn zero_stdev_branches() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.25, 0.0, 1.0), 0.75);
    }

    #[test]
    fn closed_form_values() {
        assert_relative_eq!(expected_improvement(0.0, 1.0, 0.0), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        // Φ(1) + φ(1)
        assert_relative_eq!(expected_improvement(0.0, 1.0, 1.0), 1.083_315_470_587_686_3, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let mut rng = rng_from(11, &[]);
        for _ in 0..50 {
            let mean: f64 = rng.random_range(-2.0..2.0);
            let sd: f64 = rng.random_range(0.05..2.0);
            let best: f64 = rng.random_range(-2.0..2.0);
            let n = 200_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let imp = (best - (mean + sd * z)).max(0.0);
                s += imp;
                s2 += imp * imp;
            }
            let m = s / n as f64;
            let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
            let ei = expected_improvement(mean, sd, best);
            assert!((ei - m).abs() <= 3.0 * se + 1e-12, "{ei} vs {m} ± {se}");
        }
    }

    #[test]
    fn monotone_in_stdev_and_mean() {
        for i in 0..40 {
            let mean = -2.0 + 0.1 * i as f64;
            let mut prev = 0.0;
            for j in 0..50 {
                let sd = 0.02 * j as f64;
                let e = expected_improvement(mean, sd, 0.0);
                assert!(e >= prev - 1e-15);
                prev = e;
            }
        }
        for j in 0..20 {
            let sd = 0.1 * j as f64;
            let mut prev = f64::INFINITY;
            for i in 0..80 {
                let e = expected_improvement(-4.0 + 0.1 * i as f64, sd, 0.0);
                assert!(e <= prev + 1e-15);
                prev = e;
            }
        }
    }

    fn gp_1d(xs: &[f64], ys: &[f64]) -> GpModel {
        GpModel::condition(
            KernelParams::new(1.0, vec![0.2], 1e-10).unwrap(),
            0.0,
            xs.iter().map(|&x| vec![x]).collect(),
            ys.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn pushed_away_from_observation() {
        let gp = gp_1d(&[0.3], &[0.0]);
        let r = maximize_ei(&gp, &unit_space(1), 0.0, 4, &AcquisitionOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.config.values[0] - 0.3).abs() > 0.05);
        assert!(r.ei_value > 0.0);
    }

    #[test]
    fn symmetric_pair_matches_grid_oracle() {
        let gp = gp_1d(&[0.25, 0.75], &[0.0, 0.0]);
        let grid: Vec<f64> = (0..10_000).map(|i| i as f64 / 9_999.0).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| ei_at(&gp, &[*a], 0.0).total_cmp(&ei_at(&gp, &[*b], 0.0)))
            .unwrap();
        let r = maximize_ei(&gp, &unit_space(1), 0.0, 9, &AcquisitionOptions::default()).unwrap();
        let x = r.config.values[0];
        assert!((x - best).abs() < 1e-2 || (x - (1.0 - best)).abs() < 1e-2, "{x} vs grid {best}");
        assert_relative_eq!(r.ei_value, ei_at(&gp, &[x], 0.0));
    }

    #[test]
    fn deterministic_and_in_bounds() {
        let space = HyperParamSpace::new(vec![
            Dimension::continuous("a", Scale::Log, 1e-3, 1e2),
            Dimension::integer("k", 1, 9),
        ])
        .unwrap();
        let xs = vec![vec![0.1, 0.2], vec![0.8, 0.5], vec![0.4, 0.9]];
        let gp = GpModel::condition(KernelParams::new(1.0, vec![0.3, 0.3], 1e-8).unwrap(), 0.0, xs, vec![0.3, -0.2, 0.5])
            .unwrap();
        let a = maximize_ei(&gp, &space, -0.2, 21, &AcquisitionOptions::default()).unwrap();
        let b = maximize_ei(&gp, &space, -0.2, 21, &AcquisitionOptions::default()).unwrap();
        let seq = AcquisitionOptions { exec: Execution::Sequential, ..Default::default() };
        let c = maximize_ei(&gp, &space, -0.2, 21, &seq).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(space.contains(&a.config));
        assert_eq!(a.config.values[1].fract(), 0.0);
    }

    #[test]
    fn flat_ei_falls_back_to_random() {
        // every prediction is far above r_best with negligible variance
        let gp = GpModel::condition(KernelParams::new(1e-6, vec![100.0], 1e-10).unwrap(), 1e3, vec![vec![0.5]], vec![1e3])
            .unwrap();
        let r = maximize_ei(&gp, &unit_space(1), 0.0, 2, &AcquisitionOptions::default()).unwrap();
        assert!(!r.converged);
        assert!((0.0..=1.0).contains(&r.config.values[0]));
    }
}

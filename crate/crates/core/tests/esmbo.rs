use esmbo::agnostic::weighted_risk;
use esmbo::esmbo::{history_weights, round_robin_index, run_esmbo, BootstrapMode, EsmboOptions};
use esmbo::learners::{Algorithm, Dataset, LossFn, TaskKind, TuningProblem};
use esmbo::parallel::Execution;
use esmbo::smbo::{run_smbo, SmboOptions};
use proptest::prelude::*;

fn classifier() -> TuningProblem {
    let data = Dataset::two_gaussians([50, 25, 40], 3, 1.5, 21).unwrap();
    TuningProblem::learner("krc", Algorithm::KernelRidgeClassifier, data, LossFn::ZeroOne).unwrap()
}

fn options(exec: Execution, n: usize) -> EsmboOptions {
    EsmboOptions {
        smbo: SmboOptions::with_exec(exec),
        ensemble_size: n,
        bootstrap: BootstrapMode::Resample,
    }
}

#[test]
fn execution_policy_does_not_change_results() {
    let p = classifier();
    let seq = run_esmbo(&p, 14, 5, &options(Execution::Sequential, 4)).unwrap();
    let par = run_esmbo(&p, 14, 5, &options(Execution::Parallel, 4)).unwrap();
    assert_eq!(seq.state.histories, par.state.histories);
    assert_eq!(seq.ensemble, par.ensemble);

    let a = run_smbo(&p, 10, 5, &SmboOptions::with_exec(Execution::Sequential)).unwrap();
    let b = run_smbo(&p, 10, 5, &SmboOptions::with_exec(Execution::Parallel)).unwrap();
    assert_eq!(a.history, b.history);
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let p = classifier();
    let o = options(Execution::default(), 3);
    let a = run_esmbo(&p, 9, 8, &o).unwrap();
    let b = run_esmbo(&p, 9, 8, &o).unwrap();
    let c = run_esmbo(&p, 9, 9, &o).unwrap();
    assert_eq!(a.state.histories, b.state.histories);
    assert_ne!(a.state.histories, c.state.histories);
}

#[test]
fn histories_agree_with_their_weights() {
    let p = classifier();
    let out = run_esmbo(&p, 12, 2, &options(Execution::default(), 5)).unwrap();
    let m = p.validation_size();
    for (h, w) in out.state.histories.iter().zip(&out.state.weights) {
        assert_eq!(w.total(), m as u64);
        for (rec, ev) in h.records().iter().zip(&out.state.trained) {
            assert_eq!(rec.config, ev.config);
            let losses = ev.losses.as_ref().unwrap();
            assert_eq!(rec.risk, weighted_risk(losses, w).unwrap());
        }
    }
    // Histories see the same configurations but rank them differently.
    let risks: Vec<Vec<f64>> = out.state.histories.iter().map(|h| h.records().iter().map(|r| r.risk).collect()).collect();
    assert!(risks.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn ensemble_votes_are_labels() {
    let p = classifier();
    let out = run_esmbo(&p, 12, 3, &options(Execution::default(), 6)).unwrap();
    assert_eq!(out.ensemble.task, TaskKind::Classification);
    let w = out.ensemble.normalized_weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for x in [[0.0, 0.0, 0.0], [3.0, -1.0, 2.0], [-2.0, 1.0, 0.5]] {
        let y = out.ensemble.predict(&x).unwrap();
        assert!(y == 0.0 || y == 1.0);
    }
}

#[test]
fn exhausted_integer_space_reuses_evaluations() {
    let data = Dataset::friedman([12, 10, 10], 5, 0.3, 4).unwrap();
    let p = TuningProblem::learner("knn", Algorithm::KnnRegressor, data, LossFn::Squared).unwrap();
    let out = run_esmbo(&p, 60, 1, &options(Execution::default(), 3)).unwrap();
    // k ranges over 1..=50, so at least 10 of 60 suggestions repeat.
    assert!(out.state.train_count <= 50);
    assert_eq!(out.state.train_count, p.training_count());
    assert!(out.state.histories.iter().all(|h| h.len() == 60));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resampled_weights_keep_size(m in 1usize..200, j in 0usize..20, seed in any::<u64>()) {
        let w = history_weights(m, j, seed, BootstrapMode::Resample).unwrap();
        prop_assert_eq!(w.len(), m);
        prop_assert_eq!(w.total(), m as u64);
        prop_assert_eq!(w, history_weights(m, j, seed, BootstrapMode::Resample).unwrap());
    }

    #[test]
    fn round_robin_is_balanced(n in 1usize..30, rounds in 1usize..5) {
        let mut seen = vec![0; n];
        for k in 1..=n * rounds {
            let j = round_robin_index(k, n);
            prop_assert!((1..=n).contains(&j));
            seen[j - 1] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == rounds));
    }
}

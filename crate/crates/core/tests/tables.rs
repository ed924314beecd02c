use esmbo::harness::{emit_tables, format_table};
use esmbo::stats::{pb_probability, ComparisonReport, RiskTable};

const GOLDEN: &str = include_str!("fixtures/table_4methods.csv");

fn fixture() -> RiskTable {
    let rows = [
        [1, 1, 1, 1, 1, 2],
        [2, 2, 2, 2, 2, 1],
        [3, 3, 3, 2, 2, 3],
        [4, 4, 4, 4, 4, 4],
    ];
    RiskTable::new(
        ["A", "B", "C", "D"].map(String::from).to_vec(),
        (1..=6).map(|j| format!("d{j}")).collect(),
        rows.iter().map(|r| r.iter().map(|&v| f64::from(v) / 10.0).collect()).collect(),
    )
    .unwrap()
}

fn choose(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Mass of `Beta(a, b)` above one half for integer `a`, `b`, as the
/// rational `Σ_{k<a} C(a+b−1, k) / 2^(a+b−1)`.
fn beta_upper_half(a: u64, b: u64) -> (u64, u64) {
    let n = a + b - 1;
    ((0..a).map(|k| choose(n, k)).sum(), 1 << n)
}

#[test]
fn four_method_table_matches_golden_file() {
    let report = ComparisonReport::compare(&fixture());
    assert_eq!(format_table(&report).unwrap(), GOLDEN);

    let dir = tempfile::tempdir().unwrap();
    emit_tables(&report, dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("table.csv")).unwrap(), GOLDEN);
    let ranks = std::fs::read_to_string(dir.path().join("expected_rank.csv")).unwrap();
    assert!(ranks.starts_with("method,expected_rank\nA,1.1666666666666667\n"));
}

#[test]
fn pairwise_probabilities_are_exact() {
    let report = ComparisonReport::compare(&fixture());
    // (row, column, wins, losses, ties)
    let pairs = [(0, 1, 5, 1, 0), (0, 2, 6, 0, 0), (1, 2, 4, 0, 2), (2, 3, 6, 0, 0), (1, 0, 1, 5, 0)];
    for (i, l, w, lo, t) in pairs {
        let (num, den) = beta_upper_half(1 + w + t / 2, 1 + lo + t / 2);
        approx::assert_relative_eq!(report.pb_prob[i][l], num as f64 / den as f64, max_relative = 1e-12);
        let n = w + lo;
        let top = w.max(lo);
        let tail: u64 = (top..=n).map(|k| choose(n, k)).sum();
        approx::assert_relative_eq!(report.sign_p[i][l], tail as f64 / (1u64 << n) as f64, max_relative = 1e-12);
    }
}

#[test]
fn pb_grows_with_wins() {
    for l in [5usize, 22, 39] {
        let p: Vec<f64> = (0..=l).map(|w| pb_probability(w, l - w, 0)).collect();
        assert!(p.windows(2).all(|w| w[0] < w[1]), "L = {l}");
        approx::assert_abs_diff_eq!(p[0] + p[l], 1.0, epsilon = 1e-12);
    }
}

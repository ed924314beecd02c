//! Multi-dataset comparison of methods by test risk: per-dataset rank,
//! expected rank, pairwise win frequency, a one-sided sign test and a
//! Beta-posterior "PB" probability that one method beats another.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Test risks of `K` methods (rows) on `L` datasets (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    risks: Vec<Vec<f64>>,
}

impl RiskTable {
    /// A single method is accepted so that trivial reports can be built.
    pub fn new(methods: Vec<String>, datasets: Vec<String>, risks: Vec<Vec<f64>>) -> Result<Self> {
        if methods.is_empty() || datasets.is_empty() {
            return Err(Error::invalid("risk table needs at least one method and one dataset"));
        }
        if risks.len() != methods.len() || risks.iter().any(|r| r.len() != datasets.len()) {
            return Err(Error::invalid("risk table shape does not match its labels"));
        }
        if risks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("risk table entries must be finite"));
        }
        Ok(Self { methods, datasets, risks })
    }

    /// Unlabelled table, methods `m0..` and datasets `d0..`.
    pub fn from_rows(risks: Vec<Vec<f64>>) -> Result<Self> {
        let k = risks.len();
        let l = risks.first().map_or(0, Vec::len);
        Self::new(
            (0..k).map(|i| format!("m{i}")).collect(),
            (0..l).map(|j| format!("d{j}")).collect(),
            risks,
        )
    }

    pub fn n_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn risk(&self, method: usize, dataset: usize) -> f64 {
        self.risks[method][dataset]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.risks
    }

    /// Risks of every method on dataset `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.risks.iter().map(|r| r[j]).collect()
    }

    /// Every entry rounded to 12 significant digits.
    pub fn quantized(&self) -> Self {
        Self {
            risks: self.risks.iter().map(|r| r.iter().map(|&v| quantize(v)).collect()).collect(),
            ..self.clone()
        }
    }
}

/// Rounds to 12 significant digits so tie detection ignores last-bit noise.
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.11e}").parse().expect("formatted float parses")
}

/// `Rank_i = Σ_l I[R_l ≤ R_i]`: the best method gets 1 and exact ties
/// share the larger rank.
pub fn rank_on_dataset(risks: &[f64]) -> Vec<usize> {
    risks
        .iter()
        .map(|ri| risks.iter().filter(|rl| *rl <= ri).count())
        .collect()
}

/// Mean rank of each method over the datasets.
pub fn expected_rank(table: &RiskTable) -> Vec<f64> {
    let l = table.n_datasets();
    let mut sum = vec![0usize; table.n_methods()];
    for j in 0..l {
        for (s, r) in sum.iter_mut().zip(rank_on_dataset(&table.column(j))) {
            *s += r;
        }
    }
    sum.iter().map(|&s| s as f64 / l as f64).collect()
}

/// Paired outcomes of method `i` against method `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

pub fn pair_counts(table: &RiskTable, i: usize, l: usize) -> PairCounts {
    let mut c = PairCounts { wins: 0, losses: 0, ties: 0 };
    for (a, b) in table.risks[i].iter().zip(&table.risks[l]) {
        if a < b {
            c.wins += 1;
        } else if a > b {
            c.losses += 1;
        } else {
            c.ties += 1;
        }
    }
    c
}

/// `ρ_{i,l}`: fraction of datasets where `i` has lower risk, ties 0.5.
pub fn win_frequency(table: &RiskTable, i: usize, l: usize) -> f64 {
    let c = pair_counts(table, i, l);
    (c.wins as f64 + 0.5 * c.ties as f64) / table.n_datasets() as f64
}

fn ln_choose(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

/// One-sided binomial tail `Σ_{w' ≥ w} C(n, w') 2⁻ⁿ` in the direction of
/// the observed winner, `w = max(wins, losses)`, `n = wins + losses`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 {
        return 1.0;
    }
    let w = wins.max(losses) as u64;
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let p: f64 = (w..=n).map(|k| (ln_choose(n, k) + ln_half_n).exp()).sum();
    p.min(1.0)
}

/// Sign test between methods `i` and `l`; tied datasets are discarded.
pub fn sign_test(table: &RiskTable, i: usize, l: usize) -> f64 {
    let c = pair_counts(table, i, l);
    sign_test_p(c.wins, c.losses)
}

/// Posterior mass above 0.5 of `Beta(1 + w + t/2, 1 + l + t/2)`.
pub fn pb_probability(wins: usize, losses: usize, ties: usize) -> f64 {
    let a = 1.0 + wins as f64 + 0.5 * ties as f64;
    let b = 1.0 + losses as f64 + 0.5 * ties as f64;
    if a == b {
        return 0.5;
    }
    // 1 − I_{1/2}(a, b) = I_{1/2}(b, a)
    beta_reg(b, a, 0.5)
}

/// `Pr(i ≻ l)` from the paired record.
pub fn pb_test(table: &RiskTable, i: usize, l: usize) -> f64 {
    let c = pair_counts(table, i, l);
    pb_probability(c.wins, c.losses, c.ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    None,
    Significant,
    HighlySignificant,
}

impl Significance {
    /// `Pr(A ≻ B) > 0.9` highly significant, `> 0.8` significant.
    pub fn from_pb(p: f64) -> Self {
        if p > 0.9 {
            Self::HighlySignificant
        } else if p > 0.8 {
            Self::Significant
        } else {
            Self::None
        }
    }

    /// `p < 0.05` highly significant, `p < 0.1` significant.
    pub fn from_sign(p: f64) -> Self {
        if p < 0.05 {
            Self::HighlySignificant
        } else if p < 0.1 {
            Self::Significant
        } else {
            Self::None
        }
    }

    pub fn dot(self) -> &'static str {
        match self {
            Self::None => "",
            Self::Significant => "·",
            Self::HighlySignificant => "••",
        }
    }
}

/// Every pairwise metric of a [`RiskTable`]. Matrices are indexed
/// `[row method][column method]` and read "row against column".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub methods: Vec<String>,
    pub n_datasets: usize,
    pub expected_ranks: Vec<f64>,
    pub win_freq: Vec<Vec<f64>>,
    pub pb_prob: Vec<Vec<f64>>,
    pub sign_p: Vec<Vec<f64>>,
    pub pb_flags: Vec<Vec<Significance>>,
    pub sign_flags: Vec<Vec<Significance>>,
}

fn square<T: Clone>(k: usize, f: impl Fn(usize, usize) -> T) -> Vec<Vec<T>> {
    (0..k).map(|i| (0..k).map(|l| f(i, l)).collect()).collect()
}

impl ComparisonReport {
    pub fn compare(table: &RiskTable) -> Self {
        let k = table.n_methods();
        let win_freq = square(k, |i, l| if i == l { 0.5 } else { win_frequency(table, i, l) });
        let pb_prob = square(k, |i, l| if i == l { 0.5 } else { pb_test(table, i, l) });
        let sign_p = square(k, |i, l| if i == l { 1.0 } else { sign_test(table, i, l) });
        Self::from_metrics(table.methods.clone(), table.n_datasets(), expected_rank(table), win_freq, pb_prob, sign_p)
    }

    /// Assembles a report and derives its significance flags. A sign-test
    /// flag is only raised for the row method when it wins the pair.
    pub fn from_metrics(
        methods: Vec<String>,
        n_datasets: usize,
        expected_ranks: Vec<f64>,
        win_freq: Vec<Vec<f64>>,
        pb_prob: Vec<Vec<f64>>,
        sign_p: Vec<Vec<f64>>,
    ) -> Self {
        let k = methods.len();
        let pb_flags = square(k, |i, l| if i == l { Significance::None } else { Significance::from_pb(pb_prob[i][l]) });
        let sign_flags = square(k, |i, l| {
            if i != l && win_freq[i][l] > 0.5 {
                Significance::from_sign(sign_p[i][l])
            } else {
                Significance::None
            }
        });
        Self {
            methods,
            n_datasets,
            expected_ranks,
            win_freq,
            pb_prob,
            sign_p,
            pb_flags,
            sign_flags,
        }
    }

    /// Method indices by ascending expected rank; ties keep input order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.methods.len()).collect();
        idx.sort_by(|&a, &b| self.expected_ranks[a].total_cmp(&self.expected_ranks[b]));
        idx
    }

    /// The report with methods permuted into [`ComparisonReport::order`].
    pub fn sorted(&self) -> Self {
        let o = self.order();
        let perm = |m: &Vec<Vec<f64>>| o.iter().map(|&i| o.iter().map(|&l| m[i][l]).collect()).collect();
        let permf = |m: &Vec<Vec<Significance>>| o.iter().map(|&i| o.iter().map(|&l| m[i][l]).collect()).collect();
        Self {
            methods: o.iter().map(|&i| self.methods[i].clone()).collect(),
            n_datasets: self.n_datasets,
            expected_ranks: o.iter().map(|&i| self.expected_ranks[i]).collect(),
            win_freq: perm(&self.win_freq),
            pb_prob: perm(&self.pb_prob),
            sign_p: perm(&self.sign_p),
            pb_flags: permf(&self.pb_flags),
            sign_flags: permf(&self.sign_flags),
        }
    }
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..series.len())
        .map(|t| {
            let win = &series[(t + 1).saturating_sub(w)..=t];
            win.iter().sum::<f64>() / win.len() as f64
        })
        .collect()
}

/// Smooths every metric of a per-iteration report sequence with
/// [`smooth`]; flags are recomputed from the smoothed values.
pub fn smoothed_series(reports: &[ComparisonReport], window: usize) -> Result<Vec<ComparisonReport>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let k = first.methods.len();
    if reports.iter().any(|r| r.methods != first.methods) {
        return Err(Error::invalid("reports compare different methods"));
    }
    let track = |get: &dyn Fn(&ComparisonReport) -> f64| smooth(&reports.iter().map(get).collect::<Vec<_>>(), window);
    let ranks: Vec<Vec<f64>> = (0..k).map(|i| track(&|r| r.expected_ranks[i])).collect();
    let mats = |get: &dyn Fn(&ComparisonReport, usize, usize) -> f64| -> Vec<Vec<Vec<f64>>> {
        (0..k).map(|i| (0..k).map(|l| track(&|r| get(r, i, l))).collect()).collect()
    };
    let wf = mats(&|r, i, l| r.win_freq[i][l]);
    let pb = mats(&|r, i, l| r.pb_prob[i][l]);
    let sp = mats(&|r, i, l| r.sign_p[i][l]);
    Ok((0..reports.len())
        .map(|t| {
            let at = |m: &Vec<Vec<Vec<f64>>>| square(k, |i, l| m[i][l][t]);
            ComparisonReport::from_metrics(
                first.methods.clone(),
                reports[t].n_datasets,
                ranks.iter().map(|s| s[t]).collect(),
                at(&wf),
                at(&pb),
                at(&sp),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn table(rows: Vec<Vec<f64>>) -> RiskTable {
        RiskTable::from_rows(rows).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_on_dataset(&[0.1, 0.2, 0.3, 0.4]), vec![1, 2, 3, 4]);
        assert_eq!(rank_on_dataset(&[0.1, 0.1]), vec![2, 2]);
        assert_eq!(rank_on_dataset(&[0.5, 0.5, 0.5]), vec![3, 3, 3]);
    }

    #[test]
    fn expected_rank_fixture() {
        // Per-dataset ranks by hand:
        // d0: [1,2,3,4]  d1: [4,1,3,3]  d2: [2,2,4,3]
        let t = table(vec![
            vec![0.1, 0.9, 0.2],
            vec![0.2, 0.1, 0.2],
            vec![0.3, 0.5, 0.8],
            vec![0.4, 0.5, 0.3],
        ]);
        let er = expected_rank(&t);
        let want = [7.0 / 3.0, 5.0 / 3.0, 10.0 / 3.0, 10.0 / 3.0];
        for (a, b) in er.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(expected_rank(&table(vec![vec![0.0; 5], vec![1.0; 5]]))[0], 1.0);
    }

    #[test]
    fn two_method_identity_with_rho() {
        // ρ = 0.75 with no ties: 3 wins of 4.
        let t = table(vec![vec![0.1, 0.1, 0.1, 0.9], vec![0.2, 0.2, 0.2, 0.5]]);
        assert_eq!(win_frequency(&t, 0, 1), 0.75);
        assert_eq!(expected_rank(&t)[0], 1.25);
    }

    #[test]
    fn win_frequency_examples() {
        assert_eq!(win_frequency(&table(vec![vec![0.0; 3], vec![1.0; 3]]), 0, 1), 1.0);
        assert_eq!(win_frequency(&table(vec![vec![0.3; 3], vec![0.3; 3]]), 0, 1), 0.5);
        let t = table(vec![vec![0.1, 0.1, 0.1, 0.9, 0.5], vec![0.2, 0.2, 0.2, 0.5, 0.5]]);
        assert!((win_frequency(&t, 0, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn sign_test_closed_forms() {
        assert!((sign_test_p(10, 0) - 2f64.powi(-10)).abs() < 1e-15);
        assert!((sign_test_p(9, 1) - 11.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(5, 5) - 638.0 / 1024.0).abs() < 1e-14);
        assert_eq!(sign_test_p(1, 9), sign_test_p(9, 1));
        assert_eq!(sign_test_p(0, 0), 1.0);
    }

    fn brute_force_tail(wins: usize, losses: usize) -> f64 {
        let n = wins + losses;
        let w = wins.max(losses) as u32;
        let hits = (0u32..1 << n).filter(|p| p.count_ones() >= w).count();
        hits as f64 / f64::from(1u32 << n)
    }

    #[test]
    fn sign_test_matches_enumeration() {
        for n in 0..=12 {
            for w in 0..=n {
                let a = sign_test_p(w, n - w);
                let b = brute_force_tail(w, n - w);
                assert!((a - b).abs() < 1e-13, "n={n} w={w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn pb_examples() {
        // 1 − I_{1/2}(9, 3) = 1 − 67/2048
        assert!((pb_probability(8, 2, 0) - (1.0 - 67.0 / 2048.0)).abs() < 1e-12);
        assert_eq!(pb_probability(4, 4, 2), 0.5);
        assert_eq!(pb_probability(0, 0, 7), 0.5);
        assert!((pb_probability(2, 8, 0) + pb_probability(8, 2, 0) - 1.0).abs() < 1e-12);
        let l = 12;
        let ps: Vec<f64> = (0..=l).map(|w| pb_probability(w, l - w, 0)).collect();
        assert!(ps.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn dominance_at_39_datasets() {
        let t = table(vec![vec![0.1; 39], vec![0.2; 39]]);
        let r = ComparisonReport::compare(&t);
        assert_eq!(r.win_freq[0][1], 1.0);
        assert!((r.sign_p[0][1] - 2f64.powi(-39)).abs() < 1e-25);
        assert!(r.pb_prob[0][1] > 1.0 - 1e-9);
        assert_eq!(r.pb_flags[0][1], Significance::HighlySignificant);
        assert_eq!(r.sign_flags[0][1], Significance::HighlySignificant);
        assert_eq!(r.sign_flags[1][0], Significance::None);
        assert_eq!(r.pb_flags[1][0], Significance::None);
    }

    #[test]
    fn sorted_report_orders_by_rank() {
        let t = table(vec![vec![0.5, 0.5], vec![0.1, 0.2], vec![0.3, 0.1]]);
        let r = ComparisonReport::compare(&t).sorted();
        assert_eq!(r.methods, vec!["m1", "m2", "m0"]);
        assert!(r.expected_ranks.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.win_freq[2][0], 0.0);
    }

    #[test]
    fn smoothing_rules() {
        assert_eq!(smooth(&[2.0; 30], 15), vec![2.0; 30]);
        let s: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(smooth(&s, 15)[4], 3.0);
        let step: Vec<f64> = (0..50).map(|t| if t < 20 { 0.0 } else { 1.0 }).collect();
        let out = smooth(&step, 15);
        for (t, v) in out.iter().enumerate().take(35).skip(20) {
            assert!((v - (t - 19) as f64 / 15.0).abs() < 1e-15);
        }
        assert_eq!(out[40], 1.0);
    }

    #[test]
    fn smoothed_reports_average_metrics() {
        let a = ComparisonReport::compare(&table(vec![vec![0.1], vec![0.2]]));
        let b = ComparisonReport::compare(&table(vec![vec![0.3], vec![0.2]]));
        let s = smoothed_series(&[a.clone(), b], 15).unwrap();
        assert_eq!(s[0], a);
        assert_eq!(s[1].expected_ranks, vec![1.5, 1.5]);
        assert_eq!(s[1].win_freq[0][1], 0.5);
    }

    #[test]
    fn quantization_merges_last_bit_noise() {
        assert_eq!(quantize(0.1 + 0.2), quantize(0.3));
        assert_eq!(quantize(0.0), 0.0);
        assert_eq!(quantize(123.456), 123.456);
    }

    #[test]
    fn two_method_identity_on_random_tables() {
        let mut rng = rng_from(0x57a7, &[]);
        for _ in 0..200 {
            let l = rng.random_range(1..40);
            let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..l).map(|_| rng.random::<f64>()).collect()).collect();
            let t = table(rows);
            let er = expected_rank(&t);
            for (i, o) in [(0, 1), (1, 0)] {
                assert!((er[i] - (1.0 + (1.0 - win_frequency(&t, i, o)))).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn antisymmetry_is_exact(
            rows in prop::collection::vec(prop::collection::vec(0u8..4, 7), 2..5)
        ) {
            let t = table(rows.iter().map(|r| r.iter().map(|&v| f64::from(v) / 4.0).collect()).collect());
            for i in 0..t.n_methods() {
                for l in 0..t.n_methods() {
                    if i != l {
                        prop_assert_eq!(win_frequency(&t, i, l) + win_frequency(&t, l, i), 1.0);
                        prop_assert!((pb_test(&t, i, l) + pb_test(&t, l, i) - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

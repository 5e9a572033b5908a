//! Nonparametric tests for comparing per-subject accuracies: Shapiro-Wilk,
//! Friedman, Wilcoxon signed-rank, and Bonferroni adjustment.

mod shapiro;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub use shapiro::shapiro_wilk;

use crate::error::{Error, Result};

/// Chance accuracy (percent) for 13 balanced classes.
pub const CHANCE_PERCENT: f64 = 100.0 / 13.0;

/// Effective sample sizes up to this use exact enumeration in the signed-rank test.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Sample count after exclusions.
    pub n: usize,
    pub method_note: String,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Average (1-based) ranks; tied values share the mean of their positions.
/// Also returns the tie-group sizes.
pub fn average_ranks(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Friedman test on an `n_subjects × k` score matrix (rows are subjects).
pub fn friedman(scores: &[Vec<f64>]) -> Result<TestResult> {
    let n = scores.len();
    let k = scores.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::Stats(format!("friedman needs at least 2 subjects and 2 conditions, got {n}x{k}")));
    }
    if scores.iter().any(|r| r.len() != k) {
        return Err(Error::Stats("friedman rows differ in length".into()));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in scores {
        let (r, ties) = average_ranks(row);
        for (s, v) in rank_sums.iter_mut().zip(&r) {
            *s += v;
        }
        tie_term += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n,
            method_note: "all rows constant".into(),
        });
    }
    let ssq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let chi2 = (12.0 / (nf * kf * (kf + 1.0)) * ssq - 3.0 * nf * (kf + 1.0)) / correction;
    let chi2 = chi2.max(0.0);
    let dist = ChiSquared::new(kf - 1.0).expect("positive dof");
    Ok(TestResult {
        statistic: chi2,
        p_value: (1.0 - dist.cdf(chi2)).clamp(0.0, 1.0),
        n,
        method_note: format!("chi-square approximation, {} dof, tie-corrected", k - 1),
    })
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn signed_rank_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided signed-rank test of `x - y`. Zero differences are dropped;
/// the statistic is `min(W+, W-)`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Stats("no information: all differences are zero".into()));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let t = w_plus.min(w_minus);

    if n <= WILCOXON_EXACT_MAX_N {
        // average ranks are multiples of 1/2, so doubling makes them integral
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let tot2: u64 = doubled.iter().sum();
        let t2 = (2.0 * t).round() as u64;
        let counts = signed_rank_counts(&doubled);
        let hits: f64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as u64).min(tot2 - *s as u64) <= t2)
            .map(|(_, c)| c)
            .sum();
        let p = (hits / 2f64.powi(n as i32)).min(1.0);
        return Ok(TestResult {
            statistic: t,
            p_value: p,
            n,
            method_note: "exact enumeration over sign assignments".into(),
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_adj: f64 = ties.iter().map(|&c| (c * c * c - c) as f64).sum::<f64>() / 48.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj).sqrt();
    let z = ((t - mean).abs() - 0.5).max(0.0) / sd;
    let p = (2.0 * (1.0 - std_normal().cdf(z))).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: t,
        p_value: p,
        n,
        method_note: "normal approximation, tie-corrected variance, continuity 0.5".into(),
    })
}

/// One-sample form: tests `x` against a constant.
pub fn wilcoxon_vs_constant(x: &[f64], c: f64) -> Result<TestResult> {
    wilcoxon_signed_rank(x, &vec![c; x.len()])
}

/// `min(1, p · m)` for each p.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() {
        return Err(Error::Stats(format!("family size {m} smaller than {} p-values", p_values.len())));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Stats(format!("p-value {p} outside [0, 1]")));
    }
    Ok(p_values.iter().map(|p| (p * m as f64).min(1.0)).collect())
}

/// Mean with sample standard deviation (n - 1) and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub sem: f64,
}

pub fn summarize(x: &[f64]) -> Summary {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        n,
        mean,
        sd,
        sem: sd / (n as f64).sqrt(),
    }
}

/// One row of a stats report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub test: String,
    pub comparison: String,
    pub statistic: f64,
    pub p: f64,
    pub p_adjusted: Option<f64>,
}

/// Normality per model, a Friedman omnibus test, and Wilcoxon tests for
/// every model pair and every model against chance, Bonferroni-adjusted over
/// `family_size` tests (default: the number of Wilcoxon tests run here).
/// `scores[j][i]` is subject `i`'s accuracy (percent) under model `j`.
pub fn compare_models(names: &[&str], scores: &[Vec<f64>], chance: f64, family_size: Option<usize>) -> Result<Vec<StatsEntry>> {
    if names.len() != scores.len() {
        return Err(Error::Stats("one name per model required".into()));
    }
    let mut out = Vec::new();
    for (name, s) in names.iter().zip(scores) {
        match shapiro_wilk(s) {
            Ok(r) => out.push(StatsEntry {
                test: "shapiro_wilk".into(),
                comparison: name.to_string(),
                statistic: r.statistic,
                p: r.p_value,
                p_adjusted: None,
            }),
            Err(e) => log::warn!("shapiro-wilk skipped for {name}: {e}"),
        }
    }
    let n_subjects = scores.first().map_or(0, Vec::len);
    let rows: Vec<Vec<f64>> = (0..n_subjects).map(|i| scores.iter().map(|s| s[i]).collect()).collect();
    let f = friedman(&rows)?;
    out.push(StatsEntry {
        test: "friedman".into(),
        comparison: names.join(" / "),
        statistic: f.statistic,
        p: f.p_value,
        p_adjusted: None,
    });

    let mut tests = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let r = wilcoxon_signed_rank(&scores[i], &scores[j])?;
            tests.push((format!("{} vs {}", names[i], names[j]), r));
        }
    }
    for (name, s) in names.iter().zip(scores) {
        let r = wilcoxon_vs_constant(s, chance)?;
        tests.push((format!("{name} vs chance"), r));
    }
    let m = family_size.unwrap_or(tests.len());
    let adjusted = bonferroni(&tests.iter().map(|(_, r)| r.p_value).collect::<Vec<_>>(), m)?;
    for ((comparison, r), adj) in tests.into_iter().zip(adjusted) {
        out.push(StatsEntry {
            test: "wilcoxon".into(),
            comparison,
            statistic: r.statistic,
            p: r.p_value,
            p_adjusted: Some(adj),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ranks_with_ties() {
        let (r, t) = average_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn friedman_cases() {
        let same = vec![vec![1.0, 1.0, 1.0]; 4];
        let r = friedman(&same).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        let ordered: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64 + 1.0, i as f64 + 2.0]).collect();
        let r = friedman(&ordered).unwrap();
        assert!((r.statistic - 10.0).abs() < 1e-12);
        // reference: scipy.stats.friedmanchisquare
        assert!((r.p_value - 0.006737946999085468).abs() < 1e-12);

        let tied = vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 1.0], vec![2.0, 4.0, 5.0], vec![4.0, 5.0, 5.0]];
        let r = friedman(&tied).unwrap();
        assert!((r.statistic - 2.7142857142857144).abs() < 1e-12);
        assert!((r.p_value - 0.257395142052568).abs() < 1e-12);

        assert!(friedman(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn friedman_is_bounded_by_perfect_ordering() {
        // for k = 3 the statistic cannot exceed 2n
        let rows: Vec<Vec<f64>> = (0..37).map(|i| vec![50.0 + i as f64, 90.0, 95.0 - (i % 3) as f64]).collect();
        let r = friedman(&rows).unwrap();
        assert!(r.statistic <= 74.0);
    }

    /// Exhaustive sign flips over the ranks of nonzero differences.
    fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
        let (ranks, _) = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let total: f64 = ranks.iter().sum();
        let observed = {
            let wp: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
            wp.min(total - wp)
        };
        let n = d.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let wp: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if wp.min(total - wp) <= observed + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn textbook_eight_pairs() {
        let x = [125.0, 115.0, 130.0, 140.0, 140.0, 115.0, 140.0, 125.0];
        let y = [110.0, 122.0, 125.0, 120.0, 140.0, 124.0, 123.0, 137.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        // one zero difference dropped; |d| = 15 7 5 20 9 17 12 with ranks 5 2 1 7 3 6 4
        assert_eq!(r.n, 7);
        assert_eq!(r.statistic, 9.0);
        assert!((r.p_value - brute_force_p(&x, &y)).abs() < 1e-15);
    }

    #[test]
    fn all_positive_differences_give_zero_statistic() {
        let acc = [40.0, 55.0, 61.0, 38.0, 47.0, 52.0];
        let r = wilcoxon_vs_constant(&acc, CHANCE_PERCENT).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_carry_no_information() {
        let e = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err();
        assert!(e.to_string().contains("no information"));
    }

    #[test]
    fn normal_approximation_for_large_n() {
        let x: Vec<f64> = (0..37).map(|i| 80.0 + (i as f64 * 1.3).sin() * 5.0).collect();
        let y: Vec<f64> = (0..37).map(|i| 78.0 + (i as f64 * 0.7).cos() * 5.0).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!(r.method_note.contains("normal"));
        // direct evaluation of the approximation
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let (ranks, _) = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let wp: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let t = wp.min(703.0 - wp);
        let z = ((t - 351.5f64).abs() - 0.5) / (37.0f64 * 38.0 * 75.0 / 24.0).sqrt();
        let p = 2.0 * (1.0 - std_normal().cdf(z));
        assert_eq!(r.statistic, t);
        assert!((r.p_value - p).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_cases() {
        let adj = bonferroni(&[0.01, 0.5], 6).unwrap();
        assert!((adj[0] - 0.06).abs() < 1e-15);
        assert_eq!(adj[1], 1.0);
        assert_eq!(bonferroni(&[0.2, 0.03], 2).unwrap(), vec![0.4, 0.06]);
        assert_eq!(bonferroni(&[0.2], 1).unwrap(), vec![0.2]);
        assert!(bonferroni(&[0.2, 0.1], 1).is_err());
    }

    #[test]
    fn summary_reports_sd_and_sem() {
        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert!((s.sem - s.sd / 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn model_comparison_has_six_adjusted_tests() {
        let e: Vec<f64> = (0..10).map(|i| 40.0 + i as f64 * 1.7).collect();
        let g: Vec<f64> = (0..10).map(|i| 70.0 + (i * 7 % 10) as f64).collect();
        let m: Vec<f64> = (0..10).map(|i| 85.0 + (i * 3 % 10) as f64 * 0.9).collect();
        let scores = [e, g, m];
        let report = compare_models(&["eog", "gaze", "multimodal"], &scores, CHANCE_PERCENT, None).unwrap();
        let wil: Vec<_> = report.iter().filter(|r| r.test == "wilcoxon").collect();
        assert_eq!(wil.len(), 6);
        for w in &wil {
            assert!((w.p_adjusted.unwrap() - (w.p * 6.0).min(1.0)).abs() < 1e-15);
        }
        assert_eq!(report.iter().filter(|r| r.test == "shapiro_wilk").count(), 3);
        assert_eq!(report.iter().filter(|r| r.test == "friedman").count(), 1);

        // a wider family, e.g. both scenarios together
        let wide = compare_models(&["eog", "gaze", "multimodal"], &scores, CHANCE_PERCENT, Some(12)).unwrap();
        for w in wide.iter().filter(|r| r.test == "wilcoxon") {
            assert_eq!(w.p_adjusted.unwrap(), (w.p * 12.0).min(1.0));
        }
        assert!(compare_models(&["eog", "gaze", "multimodal"], &scores, CHANCE_PERCENT, Some(5)).is_err());
    }

    proptest! {
        #[test]
        fn exact_p_matches_exhaustive_enumeration(
            x in proptest::collection::vec(0i32..8, 1..12),
            y in proptest::collection::vec(0i32..8, 12),
        ) {
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = y[..x.len()].iter().map(|&v| v as f64).collect();
            prop_assume!(x.iter().zip(&y).any(|(a, b)| a != b));
            let r = wilcoxon_signed_rank(&x, &y).unwrap();
            prop_assert!((r.p_value - brute_force_p(&x, &y)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn friedman_is_rank_invariant(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..15)) {
            let a = friedman(&rows).unwrap();
            let transformed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.powi(3) + v).collect()).collect();
            let b = friedman(&transformed).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
        }
    }
}

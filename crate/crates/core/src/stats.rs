//! Small statistical helpers: summary statistics, t-tests and chi-square
//! tests used by the experiment harness and the test suites.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Sample mean and standard error of the mean (0 for fewer than two values).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for the alternative `mean_diff > 0`.
    pub p_greater: f64,
}

/// Paired t-test on `a[i] - b[i]`.
///
/// A zero-variance difference yields `t = +-inf` (or 0 when the mean is 0).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> TTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    assert!(a.len() >= 2, "paired t-test needs at least two pairs");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_and_se(&diffs);
    let df = (diffs.len() - 1) as f64;
    let t = if se > 0.0 {
        mean / se
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    TTest { mean_diff: mean, t, df, p_greater: upper_t(t, df) }
}

fn upper_t(t: f64, df: f64) -> f64 {
    if t == f64::INFINITY {
        0.0
    } else if t == f64::NEG_INFINITY {
        1.0
    } else {
        1.0 - StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn chi_p(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(statistic)
}

/// Pearson goodness-of-fit of `counts` against `probs`. Categories with zero
/// expected probability must have zero counts; they are dropped.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareTest {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cats = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return ChiSquareTest { statistic: f64::INFINITY, df: counts.len() - 1, p_value: 0.0 };
            }
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        cats += 1;
    }
    let df = cats.saturating_sub(1);
    ChiSquareTest { statistic: stat, df, p_value: chi_p(stat, df) }
}

/// Two-sample chi-square homogeneity test on a `2 x k` contingency table.
/// Columns empty in both samples are dropped.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> ChiSquareTest {
    assert_eq!(a.len(), b.len());
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = na + nb;
    let mut stat = 0.0;
    let mut cols = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cols += 1;
        let (ea, eb) = (na * col / total, nb * col / total);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let df = cols.saturating_sub(1);
    ChiSquareTest { statistic: stat, df, p_value: chi_p(stat, df) }
}

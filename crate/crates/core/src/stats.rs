//! Small-sample tests for comparing resolution conditions: the exact
//! Wilcoxon signed-rank test and Spearman rank correlation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of nonzero differences the exact Wilcoxon null
/// distribution is built for (counts are held in `u128`).
pub const WILCOXON_EXACT_MAX: usize = 100;

/// Largest sample for the exact Spearman permutation test (8! = 40320).
pub const SPEARMAN_EXACT_MAX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    ExactEnumeration,
    TApproximation,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::ExactEnumeration => "exact-enumeration",
            TestMethod::TApproximation => "t-approximation",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    /// Wilcoxon: sum of positive-signed ranks. Spearman: rho.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: TestMethod,
    /// Observations entering the test (nonzero differences for Wilcoxon).
    pub n: usize,
    /// Set when the test could not be carried out (all differences zero).
    pub degenerate: bool,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Result<Vec<f64>> {
    Ok(doubled_midranks(values)?.into_iter().map(|r| r as f64 / 2.0).collect())
}

/// Twice the midranks, which are always integers.
fn doubled_midranks(values: &[f64]) -> Result<Vec<i64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::StatInput("non-finite value".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0i64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share rank (start + 1 + end) / 2
        let doubled = (start + 1 + end) as i64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    Ok(ranks)
}

fn check_pairs(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::StatInput(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::StatInput(format!("need at least {min} pairs, got {}", x.len())));
    }
    Ok(())
}

/// Paired two-sided Wilcoxon signed-rank test with an exact p-value.
///
/// Zero differences are dropped, tied absolute differences get midranks,
/// and the statistic is the sum of ranks of positive differences. The null
/// distribution over all `2^m` sign assignments is built exactly by
/// counting, and `p = min(1, 2 * min(P(W <= w), P(W >= w)))`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<StatTestResult> {
    check_pairs(x, y, 2)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::StatInput("non-finite difference".into()));
    }
    let m = diffs.len();
    if m == 0 {
        return Ok(StatTestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: TestMethod::ExactEnumeration,
            n: 0,
            degenerate: true,
        });
    }
    if m > WILCOXON_EXACT_MAX {
        return Err(Error::StatInput(format!(
            "exact signed-rank distribution limited to {WILCOXON_EXACT_MAX} nonzero differences, got {m}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs)?;
    let observed: i64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    // counts[s] = number of sign assignments whose doubled positive-rank sum is s
    let total: i64 = ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let obs = observed as usize;
    let lower: u128 = counts[..=obs].iter().sum();
    let upper: u128 = counts[obs..].iter().sum();
    let tail = 2 * lower.min(upper);
    let all = 1u128 << m;
    let p_value = if tail >= all { 1.0 } else { tail as f64 / all as f64 };

    Ok(StatTestResult {
        statistic: observed as f64 / 2.0,
        p_value,
        method: TestMethod::ExactEnumeration,
        n: m,
        degenerate: false,
    })
}

/// Spearman rank correlation with a two-sided t-approximation p-value
/// (`t = rho * sqrt((n - 2) / (1 - rho^2))`, `n - 2` degrees of freedom).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<StatTestResult> {
    spearman_with(x, y, TestMethod::TApproximation)
}

/// Spearman rank correlation with the chosen p-value method. The exact
/// method enumerates every permutation of the second rank vector and is
/// available for `n <= 8`.
///
/// Under the t-approximation a perfect correlation (`|rho| = 1`) has
/// `p = 0`.
pub fn spearman_with(x: &[f64], y: &[f64], method: TestMethod) -> Result<StatTestResult> {
    check_pairs(x, y, 3)?;
    let n = x.len();
    let rx = doubled_midranks(x)?;
    let ry = doubled_midranks(y)?;
    // centered doubled ranks: 2r - (n + 1), integers summing to zero
    let center = |r: Vec<i64>| -> Vec<i64> { r.into_iter().map(|v| v - (n as i64 + 1)).collect() };
    let (a, b) = (center(rx), center(ry));
    let sxx: i64 = a.iter().map(|v| v * v).sum();
    let syy: i64 = b.iter().map(|v| v * v).sum();
    if sxx == 0 || syy == 0 {
        return Err(Error::StatInput("zero rank variance; correlation undefined".into()));
    }
    let sxy: i64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let rho = (sxy as f64 / ((sxx as f64) * (syy as f64)).sqrt()).clamp(-1.0, 1.0);

    let p_value = match method {
        TestMethod::TApproximation => {
            let df = (n - 2) as f64;
            if rho.abs() >= 1.0 {
                0.0
            } else {
                let t = rho * (df / (1.0 - rho * rho)).sqrt();
                student_t_two_sided(t, df)
            }
        }
        TestMethod::ExactEnumeration => {
            if n > SPEARMAN_EXACT_MAX {
                return Err(Error::StatInput(format!(
                    "exact permutation test limited to n <= {SPEARMAN_EXACT_MAX}, got {n}"
                )));
            }
            let target = sxy.abs();
            let mut perm = b.clone();
            let mut extreme = 0u64;
            let mut total = 0u64;
            for_each_permutation(&mut perm, &mut |p| {
                total += 1;
                let s: i64 = a.iter().zip(p).map(|(u, v)| u * v).sum();
                if s.abs() >= target {
                    extreme += 1;
                }
            });
            extreme as f64 / total as f64
        }
    };
    Ok(StatTestResult { statistic: rho, p_value, method, n, degenerate: false })
}

/// Heap's algorithm; visits all `n!` orderings, including the initial one.
fn for_each_permutation(items: &mut [i64], visit: &mut impl FnMut(&[i64])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

/// Student's t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via its continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

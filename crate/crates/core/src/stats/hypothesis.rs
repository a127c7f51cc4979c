use serde::Serialize;

use super::rank::average_ranks;
use super::special::normal_two_sided;
use super::StatsError;
use crate::Scalar;

/// Largest `n_a * n_b` for which the Mann-Whitney p-value is computed by
/// exact enumeration (tie-free samples only).
pub const EXACT_MWU_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    TApprox,
    NormalApprox,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided, in `(0, 1]`.
    pub p_value: f64,
    pub method: TestMethod,
    pub n: (usize, usize),
}

impl TestResult {
    pub(crate) fn new(statistic: f64, p_value: f64, method: TestMethod, n: (usize, usize)) -> Self {
        TestResult {
            statistic,
            p_value: p_value.clamp(f64::MIN_POSITIVE, 1.0),
            method,
            n,
        }
    }
}

/// Two-sided Mann-Whitney U test. `statistic` is `U_a`, the number of
/// `(a_i, b_j)` pairs with `a_i > b_j` plus half the tied pairs.
pub fn mann_whitney_u<T: Scalar>(a: &[T], b: &[T]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).map(|v| v.to_f64().unwrap()).collect();
    let ranks = average_ranks(&pooled)?;
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;

    let tie_term = tie_correction(&pooled);
    if na * nb <= EXACT_MWU_LIMIT && tie_term == 0.0 {
        let p = exact_mwu_pvalue(u_a.round() as usize, na, nb);
        return Ok(TestResult::new(u_a, p, TestMethod::Exact, (na, nb)));
    }

    let n = (na + nb) as f64;
    let prod = (na * nb) as f64;
    let mean = prod / 2.0;
    let var = prod / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
        normal_two_sided(z)
    };
    Ok(TestResult::new(u_a, p, TestMethod::NormalApprox, (na, nb)))
}

/// `sum(t^3 - t)` over tie groups of the pooled sample.
fn tie_correction(pooled: &[f64]) -> f64 {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

/// Null distribution counts of U for sample sizes `(na, nb)`: entry `u` is
/// the number of rank assignments giving `U_a = u`.
fn mwu_null_counts(na: usize, nb: usize) -> Vec<u128> {
    let max_u = na * nb;
    // dp[j][u]: ways to place j of the a-items among the first i pooled
    // positions with partial U equal to u
    let mut dp = vec![vec![0u128; max_u + 1]; na + 1];
    dp[0][0] = 1;
    for i in 1..=na + nb {
        for j in (1..=na.min(i)).rev() {
            // the j-th smallest a-item at position i sits above i - j b-items
            let shift = i - j;
            if shift > nb {
                continue;
            }
            let (lower, upper) = dp.split_at_mut(j);
            for u in (0..=max_u - shift).rev() {
                let add = lower[j - 1][u];
                if add != 0 {
                    upper[0][u + shift] += add;
                }
            }
        }
    }
    dp.swap_remove(na)
}

/// Exact two-sided p-value for an observed tie-free `U_a`.
pub fn exact_mwu_pvalue(u: usize, na: usize, nb: usize) -> f64 {
    let counts = mwu_null_counts(na, nb);
    let total: u128 = counts.iter().sum();
    let lower: u128 = counts[..=u.min(na * nb)].iter().sum();
    let upper: u128 = counts[u.min(na * nb)..].iter().sum();
    let tail = lower.min(upper) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Fisher r-to-z test for a difference between two independent correlations.
pub fn fisher_r_to_z(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<TestResult, StatsError> {
    for r in [r1, r2] {
        if r.is_nan() || r.abs() >= 1.0 {
            return Err(StatsError::InvalidCorrelation(r));
        }
    }
    for n in [n1, n2] {
        if n <= 3 {
            return Err(StatsError::InvalidSampleSize(n));
        }
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    Ok(TestResult::new(
        z,
        normal_two_sided(z),
        TestMethod::NormalApprox,
        (n1, n2),
    ))
}

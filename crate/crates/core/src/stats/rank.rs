use std::cmp::Ordering;

use super::hypothesis::{TestMethod, TestResult};
use super::special::student_t_two_sided;
use super::StatsError;
use crate::Scalar;

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Result<Vec<T>, StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = T::from_count(start + 1 + end) / T::lit(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// Pearson correlation; errors when either series has zero variance.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = T::from_count(x.len());
    let mx = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let my = y.iter().fold(T::zero(), |a, &v| a + v) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(StatsError::Degenerate);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman rank correlation with a two-sided t-approximation p-value on
/// `n - 2` degrees of freedom.
pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<(T, TestResult), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples {
            needed: 3,
            got: x.len(),
        });
    }
    let rho = pearson(&average_ranks(x)?, &average_ranks(y)?)?;
    let n = x.len();
    let r = rho.to_f64().unwrap();
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    let (statistic, p) = if denom <= 0.0 {
        (r.signum() * f64::INFINITY, f64::MIN_POSITIVE)
    } else {
        let t = r * (df / denom).sqrt();
        (t, student_t_two_sided(t, df))
    };
    Ok((
        rho,
        TestResult::new(statistic, p, TestMethod::TApprox, (n, n)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn average_ties() {
        assert_eq!(
            average_ranks(&[1.0, 2.0, 2.0, 4.0]).unwrap(),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(
            average_ranks(&[3.0, 3.0, 3.0]).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn monotone_and_reversed() {
        let (rho, t) = spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rho, 1.0);
        assert_eq!(t.p_value, f64::MIN_POSITIVE);
        let (rho, _) = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(rho, -1.0);
    }

    #[test]
    fn tied_worked_value() {
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4]; Pearson = 4.5 / sqrt(4.5 * 5)
        let (rho, _) = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(rho, 4.5 / (4.5f64 * 5.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(rho, 0.948683, epsilon = 1e-6);
    }

    #[test]
    fn errors() {
        assert_eq!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            StatsError::Degenerate
        );
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFewSamples { .. })
        ));
    }

    fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-50i32..50, n)
                    .prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(-50i32..50, n)
                    .prop_map(|v| v.into_iter().map(f64::from).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_rank_invariant((x, y) in paired()) {
            match spearman(&x, &y) {
                Ok((rho, t)) => {
                    let (back, _) = spearman(&y, &x).unwrap();
                    prop_assert_eq!(rho, back);
                    let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 3.0 * v).collect();
                    let (moved, _) = spearman(&cubed, &y).unwrap();
                    prop_assert_eq!(rho, moved);
                    prop_assert!(t.p_value > 0.0 && t.p_value <= 1.0);
                }
                Err(e) => prop_assert_eq!(e, StatsError::Degenerate),
            }
        }
    }
}

//! Normal and Student-t distribution functions backed by `statrs`.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided standard normal tail probability `P(|Z| >= |z|)`, floored at
/// the smallest positive double so it stays a valid p-value.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Student-t CDF with `df > 0` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if t == 0.0 {
        return 0.5;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)` for `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return f64::MIN_POSITIVE;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(f64::MIN_POSITIVE, 1.0)
}

use super::StatsError;
use crate::Scalar;

pub fn mean<T: Scalar>(samples: &[T]) -> Result<T, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let sum = samples.iter().fold(T::zero(), |acc, &v| acc + v);
    Ok(sum / T::from_count(samples.len()))
}

/// Arithmetic mean and sample standard deviation (divisor n - 1).
pub fn mean_std<T: Scalar>(samples: &[T]) -> Result<(T, T), StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let m = mean(samples)?;
    let ss = samples
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - m) * (v - m));
    Ok((m, (ss / T::from_count(samples.len() - 1)).sqrt()))
}

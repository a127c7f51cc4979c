use super::StatsError;
use crate::trace::LikertRating;
use crate::Scalar;

const BINS: usize = LikertRating::LEVELS;

/// Probability mass over the five rating levels, with the sample count it
/// was estimated from (`n = 0` when built from a bare pmf).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution<T> {
    pmf: [T; BINS],
    n: usize,
}

impl<T: Scalar> Distribution<T> {
    pub fn from_pmf(pmf: [T; BINS], n: usize) -> Result<Self, StatsError> {
        if pmf.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(StatsError::InvalidDistribution(
                "pmf entries must be finite and nonnegative".into(),
            ));
        }
        let total = pmf.iter().fold(T::zero(), |acc, &p| acc + p);
        if (total - T::one()).abs() > T::pmf_tolerance() {
            return Err(StatsError::InvalidDistribution(format!(
                "pmf sums to {total}"
            )));
        }
        Ok(Distribution { pmf, n })
    }

    pub fn from_counts(counts: [usize; BINS]) -> Result<Self, StatsError> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(StatsError::EmptySample);
        }
        let total = T::from_count(n);
        Ok(Distribution {
            pmf: counts.map(|c| T::from_count(c) / total),
            n,
        })
    }

    pub fn pmf(&self) -> &[T; BINS] {
        &self.pmf
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cdf(&self) -> [T; BINS] {
        let mut acc = T::zero();
        let mut out = [T::zero(); BINS];
        for (o, &p) in out.iter_mut().zip(&self.pmf) {
            acc = acc + p;
            *o = acc.min(T::one());
        }
        // the last entry is 1 by construction; pin it against rounding drift
        out[BINS - 1] = T::one();
        out
    }

    /// pmf after adding `pseudocount / n` to every bin and renormalising,
    /// i.e. `(count + pseudocount) / (n + 5 * pseudocount)`.
    pub fn smoothed(&self, pseudocount: T) -> Result<[T; BINS], StatsError> {
        if !pseudocount.is_finite() || pseudocount < T::zero() {
            return Err(StatsError::InvalidPseudocount);
        }
        if pseudocount == T::zero() {
            return Ok(self.pmf);
        }
        if self.n == 0 {
            return Err(StatsError::InvalidDistribution(
                "pseudocount smoothing needs a sample count".into(),
            ));
        }
        let add = pseudocount / T::from_count(self.n);
        let norm = T::one() + add * T::from_count(BINS);
        Ok(self.pmf.map(|p| (p + add) / norm))
    }
}

pub fn pmf_of<T: Scalar>(samples: &[LikertRating]) -> Result<Distribution<T>, StatsError> {
    let mut counts = [0usize; BINS];
    for r in samples {
        counts[r.index()] += 1;
    }
    Distribution::from_counts(counts)
}

/// `D(p || q)` in nats. With zero pseudocount, any bin where `p > 0` and
/// `q = 0` makes the result `+inf`.
pub fn kl_divergence<T: Scalar>(
    p: &Distribution<T>,
    q: &Distribution<T>,
    pseudocount: T,
) -> Result<T, StatsError> {
    let ps = p.smoothed(pseudocount)?;
    let qs = q.smoothed(pseudocount)?;
    let mut total = T::zero();
    for (&pv, &qv) in ps.iter().zip(&qs) {
        if pv == T::zero() {
            continue;
        }
        if qv == T::zero() {
            return Ok(T::infinity());
        }
        total = total + pv * (pv / qv).ln();
    }
    // Gibbs: negative only through rounding
    Ok(total.max(T::zero()))
}

/// First Wasserstein distance on the unit-spaced support 0..=4.
pub fn wasserstein_distance<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> T {
    p.cdf()
        .iter()
        .zip(q.cdf().iter())
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs())
}

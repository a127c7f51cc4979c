//! Slow, direct reference implementations used to check the statistics
//! module. Each takes a different route to the same number.
#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

/// KL as cross-entropy minus entropy over smoothed counts.
pub fn kl(p_counts: &[usize; 5], q_counts: &[usize; 5], pseudocount: f64) -> f64 {
    let smooth = |c: &[usize; 5]| -> Vec<f64> {
        let n: usize = c.iter().sum();
        c.iter()
            .map(|&v| (v as f64 + pseudocount) / (n as f64 + 5.0 * pseudocount))
            .collect()
    };
    let (p, q) = (smooth(p_counts), smooth(q_counts));
    let mut cross = 0.0;
    let mut entropy = 0.0;
    for (pv, qv) in p.iter().zip(&q) {
        if *pv > 0.0 {
            if *qv == 0.0 {
                return f64::INFINITY;
            }
            cross -= pv * qv.ln();
            entropy -= pv * pv.ln();
        }
    }
    cross - entropy
}

/// W1 as the integral of |F_p^-1(u) - F_q^-1(u)| over u in [0, 1].
pub fn w1(p: &[f64; 5], q: &[f64; 5]) -> f64 {
    let cuts = |pmf: &[f64; 5]| -> Vec<f64> {
        pmf.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    };
    let (cp, cq) = (cuts(p), cuts(q));
    let quantile = |c: &[f64], u: f64| c.iter().position(|&x| u < x - 1e-15).unwrap_or(4) as f64;
    let mut breaks: Vec<f64> = cp
        .iter()
        .chain(&cq)
        .copied()
        .filter(|&x| x > 0.0 && x < 1.0)
        .collect();
    breaks.extend([0.0, 1.0]);
    breaks.sort_by(f64::total_cmp);
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[1] - w[0]) * (quantile(&cp, mid) - quantile(&cq, mid)).abs()
        })
        .sum()
}

/// Average ranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// `U_a` by pair counting.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| {
            b.iter().map(move |y| {
                if x > y {
                    1.0
                } else if x == y {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .sum()
}

/// Exact two-sided MWU p-value for tie-free samples by enumerating every
/// assignment of pooled ranks to the first sample.
pub fn mwu_exact_bruteforce(a: &[f64], b: &[f64]) -> f64 {
    let (na, n) = (a.len(), a.len() + b.len());
    let observed = u_statistic(a, b).round() as i64;
    let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let rank_sum: i64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| i as i64 + 1)
            .sum();
        let u = rank_sum - (na * (na + 1) / 2) as i64;
        total += 1;
        le += u64::from(u <= observed);
        ge += u64::from(u >= observed);
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

/// Composite Simpson rule on [a, b].
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let inner: f64 = (1..m)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    h / 3.0 * (f(a) + inner + f(b))
}

/// `P(|Z| >= |z|)` by integrating the normal density.
pub fn normal_two_sided(z: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (1.0 - 2.0 * simpson(phi, 0.0, z.abs(), 20_000)).max(0.0)
}

/// `P(|T| >= |t|)` on `df` degrees of freedom by integrating the density.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    let log_norm =
        ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    (1.0 - 2.0 * simpson(density, 0.0, t.abs(), 20_000)).max(0.0)
}

/// Fisher r-to-z statistic and two-sided p-value.
pub fn fisher(r1: f64, n1: usize, r2: f64, n2: usize) -> (f64, f64) {
    let z = |r: f64| 0.5 * ((1.0 + r) / (1.0 - r)).ln();
    let se = (1.0 / (n1 as f64 - 3.0) + 1.0 / (n2 as f64 - 3.0)).sqrt();
    let stat = (z(r1) - z(r2)) / se;
    (stat, normal_two_sided(stat))
}

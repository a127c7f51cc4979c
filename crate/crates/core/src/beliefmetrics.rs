//! Belief-dynamics metrics over cohorts and the full cohort-vs-cohort
//! comparison.
//!
//! * belief update: stage-2 rating minus stage-1 rating
//! * social influence: Spearman correlation between (mean peer rating minus
//!   own initial rating) and the belief update, across a cohort
//! * follow signal: mean initial rating of the followed candidates
//! * belief network distance: |follow signal - own initial rating|

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::stats::{
    fisher_r_to_z, kl_divergence, mann_whitney_u, mean, mean_std, pmf_of, spearman,
    wasserstein_distance, Distribution, StatsError, TestResult,
};
use crate::trace::{align_for_stage, Cohort, DropCounts, LikertRating, RoundTrace, Stage};

/// Pseudocount the comparison layer applies to empirical rating pmfs before
/// taking KL divergence.
pub const DEFAULT_KL_PSEUDOCOUNT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("trace has no stage-2 response")]
    MissingStage2,
    #[error("trace has no stage-1 response")]
    MissingStage1,
    #[error("trace follows nobody")]
    NoFollows,
    #[error("followed id `{0}` is not a candidate")]
    UnknownFollow(String),
    #[error("need at least {needed} eligible traces, got {got}")]
    TooFewTraces { needed: usize, got: usize },
    #[error("no comparable instances")]
    NoComparableInstances,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn initial(trace: &RoundTrace) -> Result<LikertRating, MetricError> {
    trace.initial_rating().ok_or(MetricError::MissingStage1)
}

pub fn belief_update(trace: &RoundTrace) -> Result<i8, MetricError> {
    let before = initial(trace)?;
    let after = trace.updated_rating().ok_or(MetricError::MissingStage2)?;
    Ok(after.value() as i8 - before.value() as i8)
}

/// Mean stage-2 peer rating minus own initial rating.
pub fn peer_gap(trace: &RoundTrace) -> Result<f64, MetricError> {
    let own = initial(trace)?;
    let ratings: Vec<f64> = trace.peers.iter().map(|p| p.rating.as_f64()).collect();
    Ok(mean(&ratings)? - own.as_f64())
}

/// Spearman correlation of peer gap against belief update over every trace
/// carrying stage-2 data.
pub fn social_influence(cohort: &Cohort) -> Result<(f64, TestResult), MetricError> {
    let eligible: Vec<&RoundTrace> = cohort.iter().filter(|t| t.supports(Stage::Two)).collect();
    if eligible.len() < 3 {
        return Err(MetricError::TooFewTraces {
            needed: 3,
            got: eligible.len(),
        });
    }
    let mut gaps = Vec::with_capacity(eligible.len());
    let mut updates = Vec::with_capacity(eligible.len());
    for t in eligible {
        gaps.push(peer_gap(t)?);
        updates.push(f64::from(belief_update(t)?));
    }
    Ok(spearman(&gaps, &updates)?)
}

pub fn follow_signal(trace: &RoundTrace) -> Result<f64, MetricError> {
    let follows = trace.follows.as_ref().ok_or(MetricError::NoFollows)?;
    if follows.is_empty() {
        return Err(MetricError::NoFollows);
    }
    let mut total = 0.0;
    for id in follows {
        let c = trace
            .candidates
            .iter()
            .find(|c| &c.peer_id == id)
            .ok_or_else(|| MetricError::UnknownFollow(id.clone()))?;
        total += c.rating.as_f64();
    }
    Ok(total / follows.len() as f64)
}

pub fn belief_network_distance(trace: &RoundTrace) -> Result<f64, MetricError> {
    let signal = follow_signal(trace)?;
    Ok((signal - initial(trace)?.as_f64()).abs())
}

fn stage1_ratings(cohort: &Cohort) -> Vec<LikertRating> {
    cohort
        .iter()
        .filter(|t| t.supports(Stage::One))
        .filter_map(|t| t.initial_rating())
        .collect()
}

/// Random half split of the stage-1 ratings: the first half gets the extra
/// trace when the count is odd. Returns `(KL(first || second), W1)`.
pub fn baseline_half_split(
    cohort: &Cohort,
    seed: u64,
    pseudocount: f64,
) -> Result<(f64, f64), MetricError> {
    let mut ratings = stage1_ratings(cohort);
    if ratings.len() < 2 {
        return Err(MetricError::TooFewTraces {
            needed: 2,
            got: ratings.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ratings.shuffle(&mut rng);
    let cut = ratings.len().div_ceil(2);
    let first: Distribution<f64> = pmf_of(&ratings[..cut])?;
    let second: Distribution<f64> = pmf_of(&ratings[cut..])?;
    Ok((
        kl_divergence(&first, &second, pseudocount)?,
        wasserstein_distance(&first, &second),
    ))
}

/// A metric value, or the reason it could not be computed. Keeps report
/// tables rectangular.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Computed<T> {
    Value(T),
    NotComputable(String),
}

impl<T> Computed<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Computed::Value(v) => Some(v),
            Computed::NotComputable(_) => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Computed::Value(_))
    }

    pub fn map<U>(&self, f: impl FnOnce(&T) -> U) -> Computed<U> {
        match self {
            Computed::Value(v) => Computed::Value(f(v)),
            Computed::NotComputable(r) => Computed::NotComputable(r.clone()),
        }
    }
}

impl<T, E: std::fmt::Display> From<Result<T, E>> for Computed<T> {
    fn from(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Computed::Value(v),
            Err(e) => Computed::NotComputable(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub rho: f64,
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage1Metrics {
    pub n: usize,
    /// `D(reference || subject)`.
    pub kl: Computed<f64>,
    pub wasserstein: Computed<f64>,
    pub mwu: Computed<TestResult>,
    pub spearman: Computed<Correlation>,
    pub subject: Computed<MeanStd>,
    pub reference: Computed<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Metrics {
    pub n: usize,
    pub belief_change_subject: Computed<MeanStd>,
    pub belief_change_reference: Computed<MeanStd>,
    pub belief_change_spearman: Computed<Correlation>,
    pub social_influence_subject: Computed<Correlation>,
    pub social_influence_reference: Computed<Correlation>,
    /// Subject correlation against reference correlation, `n` per side.
    pub fisher: Computed<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage3Metrics {
    pub n: usize,
    pub follow_signal_spearman: Computed<Correlation>,
    pub bnd_subject: Computed<MeanStd>,
    pub bnd_reference: Computed<MeanStd>,
    pub bnd_spearman: Computed<Correlation>,
    pub bnd_mwu: Computed<TestResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageDrops {
    pub stage1: DropCounts,
    pub stage2: DropCounts,
    pub stage3: DropCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub kl_pseudocount: f64,
    pub log_base: &'static str,
    pub kl_direction: &'static str,
    pub fisher_n: &'static str,
    pub drop_counts: StageDrops,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// `(subject, reference)` cohort labels.
    pub label_pair: (String, String),
    /// Stage-1 aligned size.
    pub n_aligned: usize,
    pub stage1: Stage1Metrics,
    pub stage2: Stage2Metrics,
    pub stage3: Stage3Metrics,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonConfig {
    pub kl_pseudocount: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            kl_pseudocount: DEFAULT_KL_PSEUDOCOUNT,
        }
    }
}

fn paired_spearman(x: &[f64], y: &[f64]) -> Computed<Correlation> {
    spearman(x, y)
        .map(|(rho, test)| Correlation { rho, test })
        .into()
}

fn summary(values: &[f64]) -> Computed<MeanStd> {
    mean_std(values)
        .map(|(mean, std)| MeanStd { mean, std })
        .into()
}

fn not_computable<T>(reason: &str) -> Computed<T> {
    Computed::NotComputable(reason.to_string())
}

fn stage1_metrics(subject: &Cohort, reference: &Cohort, pseudocount: f64) -> Stage1Metrics {
    let s_ratings = stage1_ratings(subject);
    let r_ratings = stage1_ratings(reference);
    let s: Vec<f64> = s_ratings.iter().map(|r| r.as_f64()).collect();
    let r: Vec<f64> = r_ratings.iter().map(|r| r.as_f64()).collect();
    let dists =
        pmf_of::<f64>(&s_ratings).and_then(|sd| pmf_of::<f64>(&r_ratings).map(|rd| (sd, rd)));
    let (kl, wasserstein) = match &dists {
        Ok((sd, rd)) => (
            kl_divergence(rd, sd, pseudocount).into(),
            Computed::Value(wasserstein_distance(rd, sd)),
        ),
        Err(e) => (
            not_computable(&e.to_string()),
            not_computable(&e.to_string()),
        ),
    };
    Stage1Metrics {
        n: s.len(),
        kl,
        wasserstein,
        mwu: mann_whitney_u(&s, &r).into(),
        spearman: paired_spearman(&s, &r),
        subject: summary(&s),
        reference: summary(&r),
    }
}

fn stage2_metrics(subject: &Cohort, reference: &Cohort) -> Stage2Metrics {
    let n = subject.len();
    let changes = |c: &Cohort| -> Vec<f64> {
        c.iter()
            .filter_map(|t| belief_update(t).ok())
            .map(f64::from)
            .collect()
    };
    let (s_change, r_change) = (changes(subject), changes(reference));
    let influence = |c: &Cohort| -> Computed<Correlation> {
        social_influence(c)
            .map(|(rho, test)| Correlation { rho, test })
            .into()
    };
    let (s_inf, r_inf) = (influence(subject), influence(reference));
    let fisher = match (&s_inf, &r_inf) {
        (Computed::Value(s), Computed::Value(r)) => fisher_r_to_z(s.rho, n, r.rho, n).into(),
        _ => not_computable("social influence not computable"),
    };
    Stage2Metrics {
        n,
        belief_change_subject: summary(&s_change),
        belief_change_reference: summary(&r_change),
        belief_change_spearman: paired_spearman(&s_change, &r_change),
        social_influence_subject: s_inf,
        social_influence_reference: r_inf,
        fisher,
    }
}

fn stage3_metrics(subject: &Cohort, reference: &Cohort) -> Stage3Metrics {
    let n = subject.len();
    if n == 0 {
        let na = "no instances with stage-3 data in both cohorts";
        return Stage3Metrics {
            n,
            follow_signal_spearman: not_computable(na),
            bnd_subject: not_computable(na),
            bnd_reference: not_computable(na),
            bnd_spearman: not_computable(na),
            bnd_mwu: not_computable(na),
        };
    }
    let collect = |c: &Cohort, f: fn(&RoundTrace) -> Result<f64, MetricError>| -> Vec<f64> {
        c.iter().filter_map(|t| f(t).ok()).collect()
    };
    let (s_follow, r_follow) = (
        collect(subject, follow_signal),
        collect(reference, follow_signal),
    );
    let (s_bnd, r_bnd) = (
        collect(subject, belief_network_distance),
        collect(reference, belief_network_distance),
    );
    Stage3Metrics {
        n,
        follow_signal_spearman: paired_spearman(&s_follow, &r_follow),
        bnd_subject: summary(&s_bnd),
        bnd_reference: summary(&r_bnd),
        bnd_spearman: paired_spearman(&s_bnd, &r_bnd),
        bnd_mwu: mann_whitney_u(&s_bnd, &r_bnd).into(),
    }
}

/// Full comparison of `subject` (e.g. a model cohort) against `reference`
/// (e.g. the human cohort). Each stage is computed over the keys present in
/// both cohorts with that stage's data on both sides.
pub fn compare_cohorts(
    subject: &Cohort,
    reference: &Cohort,
    config: &ComparisonConfig,
) -> Result<MetricReport, MetricError> {
    let a1 = align_for_stage(subject, reference, Stage::One);
    if a1.drops.n_aligned == 0 {
        return Err(MetricError::NoComparableInstances);
    }
    let a2 = align_for_stage(subject, reference, Stage::Two);
    let a3 = align_for_stage(subject, reference, Stage::Three);
    Ok(MetricReport {
        label_pair: (subject.label.clone(), reference.label.clone()),
        n_aligned: a1.drops.n_aligned,
        stage1: stage1_metrics(&a1.subject, &a1.reference, config.kl_pseudocount),
        stage2: stage2_metrics(&a2.subject, &a2.reference),
        stage3: stage3_metrics(&a3.subject, &a3.reference),
        metadata: ReportMetadata {
            kl_pseudocount: config.kl_pseudocount,
            log_base: "e",
            kl_direction: "D(reference || subject)",
            fisher_n: "aligned stage-2 instances per cohort",
            drop_counts: StageDrops {
                stage1: a1.drops,
                stage2: a2.drops,
                stage3: a3.drops,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{PeerObservation, Persona, StageResponse, TraceStatus};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rating(v: i64) -> LikertRating {
        LikertRating::new(v).unwrap()
    }

    fn trace(
        pid: &str,
        r1: i64,
        peers: &[i64],
        r2: i64,
        candidates: &[i64],
        follows: &[usize],
    ) -> RoundTrace {
        let obs = |prefix: &str, rs: &[i64]| -> Vec<PeerObservation> {
            rs.iter()
                .enumerate()
                .map(|(i, &r)| PeerObservation::new(format!("{prefix}{i}"), rating(r), "r"))
                .collect()
        };
        RoundTrace {
            participant_id: pid.into(),
            round: 1,
            topic: "t".into(),
            statement: "s".into(),
            statement_is_true: None,
            persona: Persona {
                agent_id: pid.into(),
                display_name: pid.into(),
                demographics: String::new(),
                big5: None,
            },
            stage1: Some(StageResponse {
                rating: rating(r1),
                reason: String::new(),
            }),
            peers: obs("p", peers),
            stage2: Some(StageResponse {
                rating: rating(r2),
                reason: String::new(),
            }),
            candidates: obs("c", candidates),
            k: follows.len(),
            follows: Some(follows.iter().map(|i| format!("c{i}")).collect()),
            status: TraceStatus::Complete,
        }
    }

    #[test]
    fn belief_update_differences() {
        assert_eq!(
            belief_update(&trace("a", 2, &[1], 4, &[1], &[0])).unwrap(),
            2
        );
        assert_eq!(
            belief_update(&trace("a", 3, &[1], 3, &[1], &[0])).unwrap(),
            0
        );
        let mut t = trace("a", 3, &[1], 3, &[1], &[0]);
        t.stage2 = None;
        assert_eq!(belief_update(&t), Err(MetricError::MissingStage2));
    }

    #[test]
    fn follow_signal_and_distance() {
        let t = trace("a", 1, &[1], 1, &[3], &[0]);
        assert_eq!(follow_signal(&t).unwrap(), 3.0);
        let t = trace("a", 1, &[1], 1, &[4, 0, 4, 2], &[0, 2, 3]);
        assert_abs_diff_eq!(follow_signal(&t).unwrap(), 10.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            belief_network_distance(&t).unwrap(),
            7.0 / 3.0,
            epsilon = 1e-15
        );
        let t = trace("a", 2, &[1], 1, &[2, 2], &[0, 1]);
        assert_eq!(belief_network_distance(&t).unwrap(), 0.0);
        let t = trace("a", 0, &[1], 1, &[4, 4], &[0, 1]);
        assert_eq!(belief_network_distance(&t).unwrap(), 4.0);
        let t = trace("a", 0, &[1], 1, &[4, 4], &[]);
        assert_eq!(follow_signal(&t), Err(MetricError::NoFollows));
        let mut t = trace("a", 0, &[1], 1, &[4, 4], &[0]);
        t.follows = Some(vec!["zz".into()]);
        assert_eq!(
            follow_signal(&t),
            Err(MetricError::UnknownFollow("zz".into()))
        );
    }

    #[test]
    fn social_influence_rank_oracle() {
        // peer gaps x = [2, 0, -2], updates y = [1, 0, -1]
        let c = Cohort::from_traces(
            "c",
            [
                trace("a", 1, &[3, 3], 2, &[1], &[0]),
                trace("b", 2, &[2], 2, &[1], &[0]),
                trace("c", 3, &[1, 1, 1], 2, &[1], &[0]),
            ],
        )
        .unwrap();
        let (rho, _) = social_influence(&c).unwrap();
        assert_eq!(rho, 1.0);
    }

    #[test]
    fn social_influence_degenerate_when_nobody_moves() {
        let c = Cohort::from_traces(
            "c",
            [
                trace("a", 1, &[3], 1, &[1], &[0]),
                trace("b", 2, &[0], 2, &[1], &[0]),
                trace("c", 3, &[4], 3, &[1], &[0]),
            ],
        )
        .unwrap();
        let err = social_influence(&c).unwrap_err();
        assert_eq!(err, MetricError::Stats(StatsError::Degenerate));
        assert_eq!(err.to_string(), "degenerate: zero rank variance");
    }

    #[test]
    fn half_split_constant_cohort() {
        let c = Cohort::from_traces(
            "c",
            (0..8).map(|i| trace(&format!("p{i}"), 2, &[1], 2, &[1], &[0])),
        )
        .unwrap();
        assert_eq!(baseline_half_split(&c, 3, 0.5).unwrap(), (0.0, 0.0));
        // unequal halves smooth differently, so only W1 stays exactly zero
        let odd = c.restrict(c.keys().take(7).collect::<Vec<_>>());
        let (kl, w) = baseline_half_split(&odd, 3, 0.5).unwrap();
        assert_eq!(w, 0.0);
        assert!(kl > 0.0 && kl < 0.01);
        assert_eq!(baseline_half_split(&odd, 3, 0.0).unwrap(), (0.0, 0.0));
        let one = Cohort::from_traces("c", [trace("a", 2, &[1], 2, &[1], &[0])]).unwrap();
        assert!(matches!(
            baseline_half_split(&one, 3, 0.5),
            Err(MetricError::TooFewTraces { .. })
        ));
    }

    proptest! {
        #[test]
        fn follow_signal_within_followed_range(
            r1 in 0i64..5,
            cands in prop::collection::vec(0i64..5, 1..8),
            pick in prop::collection::vec(any::<prop::sample::Index>(), 1..8),
        ) {
            let mut follows: Vec<usize> = pick.iter().map(|i| i.index(cands.len())).collect();
            follows.sort();
            follows.dedup();
            let t = trace("a", r1, &[1], 1, &cands, &follows);
            let fs = follow_signal(&t).unwrap();
            let followed: Vec<i64> = follows.iter().map(|&i| cands[i]).collect();
            prop_assert!(fs >= *followed.iter().min().unwrap() as f64);
            prop_assert!(fs <= *followed.iter().max().unwrap() as f64);
            let bnd = belief_network_distance(&t).unwrap();
            prop_assert_eq!(bnd == 0.0, fs == r1 as f64);
        }

        #[test]
        fn closer_follows_never_increase_distance(
            r1 in 0i64..5,
            cands in prop::collection::vec(0i64..5, 2..8),
            which in any::<prop::sample::Index>(),
        ) {
            // replace one followed candidate by a strictly closer one
            let i = which.index(cands.len());
            let before = trace("a", r1, &[1], 1, &cands, &[i]);
            let dist = (cands[i] - r1).abs();
            if let Some(j) = (0..cands.len()).find(|&j| (cands[j] - r1).abs() < dist) {
                let after = trace("a", r1, &[1], 1, &cands, &[j]);
                prop_assert!(belief_network_distance(&after).unwrap() <= belief_network_distance(&before).unwrap());
            }
        }
    }
}

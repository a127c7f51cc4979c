//! The agent contract shared by scripted, replay and model-backed agents,
//! plus the deterministic scripted agents.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Cohort, LikertRating, PeerObservation, Persona, Stage, TraceKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    /// The agent's output could not be turned into a decision.
    #[error("unparseable output: {0}")]
    Parse(String),
    /// The model endpoint could not be reached.
    #[error("transport: {0}")]
    Transport(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("invalid decision: {0}")]
    Invalid(String),
}

/// What an agent remembers from earlier stages of the current round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: Stage,
    pub rating: LikertRating,
    pub reason: String,
}

impl fmt::Display for StageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reason = one_line(&self.reason);
        match self.stage {
            Stage::One => write!(f, "Stage 1: rated {} because {}", self.rating, reason),
            _ => write!(
                f,
                "Stage {}: updated rating to {} because {}",
                self.stage.number(),
                self.rating,
                reason
            ),
        }
    }
}

/// Collapses line breaks so a free-text field renders on one line.
pub(crate) fn one_line(text: &str) -> String {
    text.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

/// Per-round view handed to an agent. `round_memory` starts empty and only
/// ever holds summaries from the same round.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub key: TraceKey,
    /// Seed derived from the run seed and the key; scripted agents draw all
    /// randomness from it.
    pub seed: u64,
    pub persona: Persona,
    pub statement: String,
    pub round_memory: Vec<StageSummary>,
}

impl AgentContext {
    pub fn new(key: TraceKey, seed: u64, persona: Persona, statement: impl Into<String>) -> Self {
        AgentContext {
            key,
            seed,
            persona,
            statement: statement.into(),
            round_memory: Vec::new(),
        }
    }

    pub fn summary(&self, stage: Stage) -> Option<&StageSummary> {
        self.round_memory.iter().find(|s| s.stage == stage)
    }

    fn own_initial(&self) -> Result<LikertRating, AgentError> {
        self.summary(Stage::One)
            .map(|s| s.rating)
            .ok_or_else(|| AgentError::Invalid("no stage-1 summary in round memory".into()))
    }

    fn rng(&self, stage: Stage) -> ChaCha8Rng {
        let salt = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(u64::from(stage.number()));
        ChaCha8Rng::seed_from_u64(self.seed ^ salt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentDecision {
    Rating {
        rating: LikertRating,
        reason: String,
    },
    Follow {
        follow_ids: Vec<String>,
        reason: String,
    },
}

impl AgentDecision {
    pub fn rating(rating: LikertRating, reason: impl Into<String>) -> Self {
        AgentDecision::Rating {
            rating,
            reason: reason.into(),
        }
    }

    pub fn follow(follow_ids: Vec<String>, reason: impl Into<String>) -> Self {
        AgentDecision::Follow {
            follow_ids,
            reason: reason.into(),
        }
    }
}

/// One participant's behaviour through the three stages of a round.
pub trait Agent: Send + Sync {
    fn name(&self) -> String;
    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError>;
    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError>;
    fn stage3(
        &self,
        ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError>;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        (**self).stage1(ctx)
    }
    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        (**self).stage2(ctx, peers)
    }
    fn stage3(
        &self,
        ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        (**self).stage3(ctx, candidates, k)
    }
}

/// How a scripted agent picks its stage-1 rating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPolicy {
    Fixed {
        rating: LikertRating,
    },
    #[default]
    Uniform,
    /// Normal draw, rounded half away from zero and clamped to 0..=4.
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Draw rating `v` with probability proportional to `weights[v]`.
    Categorical {
        weights: [f64; 5],
    },
}

impl InitialPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            InitialPolicy::Gaussian { mean, std }
                if !(mean.is_finite() && std.is_finite() && std >= 0.0) =>
            {
                Err(format!(
                    "gaussian needs finite mean and std >= 0, got ({mean}, {std})"
                ))
            }
            InitialPolicy::Categorical { weights }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0 =>
            {
                Err(format!(
                    "categorical weights must be nonnegative with a positive sum, got {weights:?}"
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> LikertRating {
        match *self {
            InitialPolicy::Fixed { rating } => rating,
            InitialPolicy::Uniform => LikertRating::new(rng.random_range(0..=4)).unwrap(),
            InitialPolicy::Gaussian { mean, std } => {
                let v = Normal::new(mean, std.max(0.0))
                    .map(|n| n.sample(rng))
                    .unwrap_or(mean);
                clamp_rating(v)
            }
            InitialPolicy::Categorical { weights } => {
                let index = WeightedIndex::new(weights).expect("categorical weights validated");
                LikertRating::new(index.sample(rng) as i64).unwrap()
            }
        }
    }
}

/// Rounds half away from zero and clamps onto the rating scale.
pub fn clamp_rating(v: f64) -> LikertRating {
    LikertRating::new(v.round().clamp(0.0, 4.0) as i64).unwrap()
}

fn check_k(candidates: &[PeerObservation], k: usize) -> Result<(), AgentError> {
    if k == 0 || k > candidates.len() {
        return Err(AgentError::Invalid(format!(
            "k = {k} with {} candidates",
            candidates.len()
        )));
    }
    Ok(())
}

/// The `k` candidates ordered by `score` ascending, ties by ascending id.
fn pick_by<F: Fn(&PeerObservation) -> i64>(
    candidates: &[PeerObservation],
    k: usize,
    score: F,
) -> Vec<String> {
    let mut ranked: Vec<&PeerObservation> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        score(a)
            .cmp(&score(b))
            .then_with(|| a.peer_id.cmp(&b.peer_id))
    });
    ranked
        .into_iter()
        .take(k)
        .map(|c| c.peer_id.clone())
        .collect()
}

fn follow_highest(candidates: &[PeerObservation], k: usize) -> Result<AgentDecision, AgentError> {
    check_k(candidates, k)?;
    Ok(AgentDecision::follow(
        pick_by(candidates, k, |c| -i64::from(c.rating.value())),
        "scripted: highest-rated candidates",
    ))
}

fn initial_decision(policy: &InitialPolicy, ctx: &AgentContext) -> AgentDecision {
    let rating = policy.draw(&mut ctx.rng(Stage::One));
    AgentDecision::rating(rating, "scripted initial rating")
}

/// Moves a fraction `alpha` of the way from the initial rating towards the
/// mean peer rating; follows the highest-rated candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeGrootAgent {
    pub alpha: f64,
    pub initial: InitialPolicy,
}

impl DeGrootAgent {
    pub fn new(alpha: f64, initial: InitialPolicy) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
        DeGrootAgent { alpha, initial }
    }

    pub fn update(
        &self,
        own: LikertRating,
        peers: &[PeerObservation],
    ) -> Result<LikertRating, AgentError> {
        if peers.is_empty() {
            return Err(AgentError::Invalid("no peers to observe".into()));
        }
        let mean = peers.iter().map(|p| p.rating.as_f64()).sum::<f64>() / peers.len() as f64;
        let r0 = own.as_f64();
        Ok(clamp_rating(r0 + self.alpha * (mean - r0)))
    }
}

impl Agent for DeGrootAgent {
    fn name(&self) -> String {
        format!("degroot(alpha={})", self.alpha)
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        Ok(initial_decision(&self.initial, ctx))
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        let rating = self.update(ctx.own_initial()?, peers)?;
        Ok(AgentDecision::rating(
            rating,
            "scripted: weighted toward peer mean",
        ))
    }

    fn stage3(
        &self,
        _ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        follow_highest(candidates, k)
    }
}

/// Never moves at stage 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubbornAgent {
    pub initial: InitialPolicy,
}

impl Agent for StubbornAgent {
    fn name(&self) -> String {
        "stubborn".into()
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        Ok(initial_decision(&self.initial, ctx))
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        _peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        Ok(AgentDecision::rating(
            ctx.own_initial()?,
            "scripted: unchanged",
        ))
    }

    fn stage3(
        &self,
        _ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        follow_highest(candidates, k)
    }
}

/// Follows the candidates closest to its own initial rating; stages 1 and 2
/// come from `base`.
#[derive(Debug, Clone)]
pub struct HomophilyAgent<A> {
    pub base: A,
}

impl<A: Agent> Agent for HomophilyAgent<A> {
    fn name(&self) -> String {
        format!("homophily({})", self.base.name())
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        self.base.stage1(ctx)
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        self.base.stage2(ctx, peers)
    }

    fn stage3(
        &self,
        ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        check_k(candidates, k)?;
        let own = i64::from(ctx.own_initial()?.value());
        Ok(AgentDecision::follow(
            pick_by(candidates, k, |c| (i64::from(c.rating.value()) - own).abs()),
            "scripted: closest candidates",
        ))
    }
}

/// Follows `k` candidates drawn uniformly at random; stages 1 and 2 come
/// from `base`.
#[derive(Debug, Clone)]
pub struct RandomFollowAgent<A> {
    pub base: A,
}

impl<A: Agent> Agent for RandomFollowAgent<A> {
    fn name(&self) -> String {
        format!("random_follow({})", self.base.name())
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        self.base.stage1(ctx)
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        self.base.stage2(ctx, peers)
    }

    fn stage3(
        &self,
        ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        check_k(candidates, k)?;
        let mut rng = ctx.rng(Stage::Three);
        let ids = sample(&mut rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i].peer_id.clone())
            .collect();
        Ok(AgentDecision::follow(ids, "scripted: random candidates"))
    }
}

/// Re-emits the decisions recorded in a cohort. A stage the recording
/// failed at fails again.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    source: Cohort,
}

impl ReplayAgent {
    pub fn new(source: Cohort) -> Self {
        ReplayAgent { source }
    }

    fn recorded(&self, key: &TraceKey) -> Result<&crate::trace::RoundTrace, AgentError> {
        self.source
            .get(key)
            .ok_or_else(|| AgentError::Replay(format!("no recording for {key}")))
    }
}

impl Agent for ReplayAgent {
    fn name(&self) -> String {
        format!("replay({})", self.source.label)
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        let t = self.recorded(&ctx.key)?;
        let s = t
            .stage1
            .as_ref()
            .ok_or_else(|| AgentError::Replay("recorded stage 1 failed".into()))?;
        Ok(AgentDecision::rating(s.rating, s.reason.clone()))
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        _peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        let t = self.recorded(&ctx.key)?;
        let s = t
            .stage2
            .as_ref()
            .ok_or_else(|| AgentError::Replay("recorded stage 2 failed".into()))?;
        Ok(AgentDecision::rating(s.rating, s.reason.clone()))
    }

    fn stage3(
        &self,
        ctx: &AgentContext,
        _candidates: &[PeerObservation],
        _k: usize,
    ) -> Result<AgentDecision, AgentError> {
        let t = self.recorded(&ctx.key)?;
        let follows = t
            .follows
            .as_ref()
            .filter(|_| t.status == crate::trace::TraceStatus::Complete)
            .ok_or_else(|| AgentError::Replay("recorded stage 3 failed".into()))?;
        Ok(AgentDecision::follow(follows.clone(), "replayed"))
    }
}

//! Runs the three-stage protocol for every participant-round of a stimulus
//! plan. Rounds are independent jobs: nothing carries over between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    Agent, AgentContext, AgentDecision, AgentError, DeGrootAgent, HomophilyAgent, InitialPolicy,
    RandomFollowAgent, ReplayAgent, StageSummary, StubbornAgent,
};
use crate::llmagent::{AuditLog, LlmAgent, ModelEndpoint};
use crate::trace::{
    check_follows, load_cohort_with, Big5, Cohort, LikertRating, LoadOptions, PeerObservation,
    Persona, RoundTrace, Stage, StageResponse, TraceError, TraceKey, TraceStatus,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stimulus plan is missing {} participant-round(s): {}", .0.len(), list_keys(.0))]
    PlanGaps(Vec<TraceKey>),
    #[error("invalid stimulus {key}: {reason}")]
    InvalidStimulus { key: TraceKey, reason: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn list_keys(keys: &[TraceKey]) -> String {
    keys.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Everything shown to one participant in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub participant_id: String,
    pub round: u32,
    pub topic: String,
    pub statement: String,
    pub statement_is_true: Option<bool>,
    pub persona: Persona,
    pub peers: Vec<PeerObservation>,
    pub candidates: Vec<PeerObservation>,
    pub k: usize,
}

impl Stimulus {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(self.participant_id.clone(), self.round)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.participant_id.is_empty() {
            return Err("participant_id is empty".into());
        }
        if self.round == 0 {
            return Err("round must be >= 1".into());
        }
        if self.statement.is_empty() {
            return Err("statement is empty".into());
        }
        if self.peers.is_empty() {
            return Err("no peers".into());
        }
        if self.k == 0 || self.k > self.candidates.len() {
            return Err(format!(
                "k = {} with {} candidates",
                self.k,
                self.candidates.len()
            ));
        }
        let mut ids = BTreeSet::new();
        if let Some(dup) = self
            .candidates
            .iter()
            .find(|c| !ids.insert(c.peer_id.as_str()))
        {
            return Err(format!("duplicate candidate id `{}`", dup.peer_id));
        }
        Ok(())
    }

    fn from_trace(t: &RoundTrace) -> Self {
        Stimulus {
            participant_id: t.participant_id.clone(),
            round: t.round,
            topic: t.topic.clone(),
            statement: t.statement.clone(),
            statement_is_true: t.statement_is_true,
            persona: t.persona.clone(),
            peers: t.peers.clone(),
            candidates: t.candidates.clone(),
            k: t.k,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StimulusPlan {
    pub entries: BTreeMap<TraceKey, Stimulus>,
}

impl StimulusPlan {
    pub fn from_stimuli(stimuli: impl IntoIterator<Item = Stimulus>) -> Result<Self, EngineError> {
        let mut entries = BTreeMap::new();
        for s in stimuli {
            let key = s.key();
            if entries.contains_key(&key) {
                return Err(EngineError::InvalidStimulus {
                    key,
                    reason: "duplicate participant-round".into(),
                });
            }
            entries.insert(key, s);
        }
        Ok(StimulusPlan { entries })
    }

    /// The stimuli a recorded cohort was run on.
    pub fn from_cohort(cohort: &Cohort) -> Self {
        StimulusPlan {
            entries: cohort
                .iter()
                .map(|t| (t.key(), Stimulus::from_trace(t)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every participant must have rounds `1..=rounds` and nothing else, and
    /// each stimulus must be runnable. Gaps are reported all at once.
    pub fn validate(&self, rounds: u32) -> Result<(), EngineError> {
        let participants: BTreeSet<&str> = self
            .entries
            .keys()
            .map(|k| k.participant_id.as_str())
            .collect();
        let gaps: Vec<TraceKey> = participants
            .iter()
            .flat_map(|p| (1..=rounds).map(move |r| TraceKey::new(*p, r)))
            .filter(|k| !self.entries.contains_key(k))
            .collect();
        if !gaps.is_empty() {
            return Err(EngineError::PlanGaps(gaps));
        }
        for (key, s) in &self.entries {
            if key.round > rounds {
                return Err(EngineError::InvalidStimulus {
                    key: key.clone(),
                    reason: format!("round exceeds configured rounds ({rounds})"),
                });
            }
            s.validate()
                .map_err(|reason| EngineError::InvalidStimulus {
                    key: key.clone(),
                    reason,
                })?;
        }
        Ok(())
    }
}

/// Seed for one participant-round, independent of scheduling.
pub fn round_seed(seed: u64, key: &TraceKey) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{}:{}", key.participant_id, key.round).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: AgentError,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub trace: RoundTrace,
    pub failure: Option<StageFailure>,
}

fn expect_rating(d: AgentDecision) -> Result<StageResponse, AgentError> {
    match d {
        AgentDecision::Rating { rating, reason } => Ok(StageResponse { rating, reason }),
        AgentDecision::Follow { .. } => Err(AgentError::Invalid(
            "expected a rating, got follow ids".into(),
        )),
    }
}

fn expect_follows(d: AgentDecision, s: &Stimulus) -> Result<Vec<String>, AgentError> {
    match d {
        AgentDecision::Follow { follow_ids, .. } => {
            check_follows(&follow_ids, &s.candidates, s.k).map_err(AgentError::Invalid)?;
            Ok(follow_ids)
        }
        AgentDecision::Rating { .. } => Err(AgentError::Invalid(
            "expected follow ids, got a rating".into(),
        )),
    }
}

/// Runs stages 1 to 3 in order with a fresh round memory. The first failing
/// stage sets the status; earlier stages stay recorded, later ones are
/// skipped.
pub fn run_round<A: Agent + ?Sized>(agent: &A, stimulus: &Stimulus, seed: u64) -> RoundOutcome {
    let key = stimulus.key();
    let mut ctx = AgentContext::new(
        key.clone(),
        round_seed(seed, &key),
        stimulus.persona.clone(),
        stimulus.statement.clone(),
    );
    let mut trace = RoundTrace {
        participant_id: stimulus.participant_id.clone(),
        round: stimulus.round,
        topic: stimulus.topic.clone(),
        statement: stimulus.statement.clone(),
        statement_is_true: stimulus.statement_is_true,
        persona: stimulus.persona.clone(),
        stage1: None,
        peers: stimulus.peers.clone(),
        stage2: None,
        candidates: stimulus.candidates.clone(),
        k: stimulus.k,
        follows: None,
        status: TraceStatus::Complete,
    };
    let fail = |mut trace: RoundTrace, stage: Stage, error: AgentError| {
        log::debug!("{key} {stage} failed: {error}");
        trace.status = TraceStatus::failed_at(stage);
        RoundOutcome {
            trace,
            failure: Some(StageFailure { stage, error }),
        }
    };

    let first = match agent.stage1(&ctx).and_then(expect_rating) {
        Ok(r) => r,
        Err(e) => return fail(trace, Stage::One, e),
    };
    ctx.round_memory.push(StageSummary {
        stage: Stage::One,
        rating: first.rating,
        reason: first.reason.clone(),
    });
    trace.stage1 = Some(first);

    let second = match agent.stage2(&ctx, &stimulus.peers).and_then(expect_rating) {
        Ok(r) => r,
        Err(e) => return fail(trace, Stage::Two, e),
    };
    ctx.round_memory.push(StageSummary {
        stage: Stage::Two,
        rating: second.rating,
        reason: second.reason.clone(),
    });
    trace.stage2 = Some(second);

    match agent
        .stage3(&ctx, &stimulus.candidates, stimulus.k)
        .and_then(|d| expect_follows(d, stimulus))
    {
        Ok(ids) => trace.follows = Some(ids),
        Err(e) => return fail(trace, Stage::Three, e),
    }
    RoundOutcome {
        trace,
        failure: None,
    }
}

/// Engine-side run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub label: String,
    pub seed: u64,
    pub parallelism: usize,
    pub rounds: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            label: "simulated".into(),
            seed: 0,
            parallelism: 1,
            rounds: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub n_total: usize,
    pub n_complete: usize,
    pub failed_stage1: usize,
    pub failed_stage2: usize,
    pub failed_stage3: usize,
    /// Stage failures caused by an unreachable endpoint.
    pub transport_failures: usize,
}

impl RunSummary {
    pub fn completion_fraction(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_complete as f64 / self.n_total as f64
        }
    }

    fn add(&mut self, outcome: &RoundOutcome) {
        self.n_total += 1;
        match outcome.trace.status {
            TraceStatus::Complete => self.n_complete += 1,
            TraceStatus::FailedStage1 => self.failed_stage1 += 1,
            TraceStatus::FailedStage2 => self.failed_stage2 += 1,
            TraceStatus::FailedStage3 => self.failed_stage3 += 1,
        }
        if matches!(
            outcome.failure,
            Some(StageFailure {
                error: AgentError::Transport(_),
                ..
            })
        ) {
            self.transport_failures += 1;
        }
    }
}

pub fn run_cohort<A: Agent + ?Sized>(
    agent: &A,
    plan: &StimulusPlan,
    opts: &RunOptions,
) -> Result<Cohort, EngineError> {
    run_cohort_detailed(agent, plan, opts).map(|(c, _)| c)
}

/// Runs every plan entry on a pool of `opts.parallelism` threads. Results
/// are keyed, so the cohort does not depend on scheduling.
pub fn run_cohort_detailed<A: Agent + ?Sized>(
    agent: &A,
    plan: &StimulusPlan,
    opts: &RunOptions,
) -> Result<(Cohort, RunSummary), EngineError> {
    if opts.parallelism == 0 {
        return Err(EngineError::Config("parallelism must be >= 1".into()));
    }
    plan.validate(opts.rounds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
    let stimuli: Vec<&Stimulus> = plan.entries.values().collect();
    let outcomes: Vec<RoundOutcome> = pool.install(|| {
        stimuli
            .par_iter()
            .map(|s| run_round(agent, s, opts.seed))
            .collect()
    });

    let mut summary = RunSummary::default();
    let mut cohort = Cohort::new(opts.label.clone());
    for outcome in outcomes {
        summary.add(&outcome);
        cohort.insert(outcome.trace)?;
    }
    log::info!(
        "{}: {}/{} complete ({} failed at stage 1, {} at stage 2, {} at stage 3)",
        opts.label,
        summary.n_complete,
        summary.n_total,
        summary.failed_stage1,
        summary.failed_stage2,
        summary.failed_stage3
    );
    Ok((cohort, summary))
}

fn default_rounds() -> u32 {
    3
}

fn default_pool_includes_peers() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementSpec {
    pub topic: String,
    pub statement: String,
    #[serde(default)]
    pub is_true: Option<bool>,
}

fn default_statements() -> Vec<StatementSpec> {
    vec![
        StatementSpec {
            topic: "immigration".into(),
            statement: "Most immigrants arriving in the last decade entered the country illegally."
                .into(),
            is_true: None,
        },
        StatementSpec {
            topic: "oil and fuel".into(),
            statement: "Domestic fuel prices are set mainly by the national government.".into(),
            is_true: None,
        },
    ]
}

/// Generator settings for desk-scale stimulus plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub participants: usize,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Peers shown at stage 2.
    pub n_peers: usize,
    /// Candidates offered at stage 3.
    pub pool_size: usize,
    pub k: usize,
    #[serde(default)]
    pub peer_ratings: InitialPolicy,
    /// Ratings of candidates that are not also peers; defaults to
    /// `peer_ratings`.
    #[serde(default)]
    pub candidate_ratings: Option<InitialPolicy>,
    /// When set, the pool starts with the round's peers.
    #[serde(default = "default_pool_includes_peers")]
    pub pool_includes_peers: bool,
    #[serde(default = "default_statements")]
    pub statements: Vec<StatementSpec>,
}

impl SynthConfig {
    pub fn new(participants: usize, n_peers: usize, pool_size: usize, k: usize) -> Self {
        SynthConfig {
            participants,
            rounds: 3,
            n_peers,
            pool_size,
            k,
            peer_ratings: InitialPolicy::Uniform,
            candidate_ratings: None,
            pool_includes_peers: true,
            statements: default_statements(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.participants == 0 || self.rounds == 0 {
            return bad("participants and rounds must be >= 1".into());
        }
        if self.n_peers == 0 {
            return bad("n_peers must be >= 1".into());
        }
        if self.k == 0 || self.k > self.pool_size {
            return bad(format!(
                "k = {} must be in 1..=pool_size ({})",
                self.k, self.pool_size
            ));
        }
        if self.statements.is_empty() {
            return bad("statement bank is empty".into());
        }
        for policy in std::iter::once(&self.peer_ratings).chain(&self.candidate_ratings) {
            policy.validate().map_err(EngineError::Config)?;
        }
        Ok(())
    }
}

const AGE_BANDS: [&str; 5] = ["18-24", "25-34", "35-44", "45-64", "65+"];
const GENDERS: [&str; 3] = ["female", "male", "non-binary"];
const LEANINGS: [&str; 5] = [
    "liberal",
    "slightly liberal",
    "moderate",
    "slightly conservative",
    "conservative",
];
const EDUCATION: [&str; 4] = [
    "high school",
    "some college",
    "bachelor's degree",
    "graduate degree",
];

fn synth_persona(id: &str, index: usize, rng: &mut ChaCha8Rng) -> Persona {
    let demographics = format!(
        "Age {}, {}, {}, politically {}",
        AGE_BANDS[rng.random_range(0..AGE_BANDS.len())],
        GENDERS[rng.random_range(0..GENDERS.len())],
        EDUCATION[rng.random_range(0..EDUCATION.len())],
        LEANINGS[rng.random_range(0..LEANINGS.len())],
    );
    let mut trait_score = || (rng.random_range(10..=50) as f64) / 10.0;
    Persona {
        agent_id: id.to_string(),
        display_name: format!("Participant {}", index + 1),
        demographics,
        big5: Some(Big5 {
            openness: trait_score(),
            conscientiousness: trait_score(),
            extraversion: trait_score(),
            agreeableness: trait_score(),
            neuroticism: trait_score(),
        }),
    }
}

fn synth_reason(r: LikertRating) -> String {
    match r.value() {
        0 => "This does not match anything I have seen.",
        1 => "I doubt it, though parts might be right.",
        2 => "I am unsure; it could go either way.",
        3 => "It seems mostly right from what I have read.",
        _ => "This matches what I know well.",
    }
    .to_string()
}

/// Fabricates a plan of `participants x rounds` stimuli. Deterministic in
/// `(config, seed)`.
pub fn synthesize_stimuli(config: &SynthConfig, seed: u64) -> Result<StimulusPlan, EngineError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = config.participants.to_string().len().max(3);
    let candidate_policy = config.candidate_ratings.unwrap_or(config.peer_ratings);
    let mut stimuli = Vec::with_capacity(config.participants * config.rounds as usize);
    for i in 0..config.participants {
        let pid = format!("p{:0width$}", i + 1);
        let persona = synth_persona(&pid, i, &mut rng);
        for round in 1..=config.rounds {
            let spec = &config.statements[rng.random_range(0..config.statements.len())];
            let peers: Vec<PeerObservation> = (0..config.n_peers)
                .map(|j| {
                    let r = config.peer_ratings.draw(&mut rng);
                    PeerObservation::new(format!("n{:02}", j + 1), r, synth_reason(r))
                })
                .collect();
            let reused = if config.pool_includes_peers {
                config.pool_size.min(peers.len())
            } else {
                0
            };
            let mut candidates: Vec<PeerObservation> = peers[..reused].to_vec();
            candidates.extend((reused..config.pool_size).map(|j| {
                let r = candidate_policy.draw(&mut rng);
                PeerObservation::new(format!("c{:02}", j + 1), r, synth_reason(r))
            }));
            candidates.shuffle(&mut rng);
            stimuli.push(Stimulus {
                participant_id: pid.clone(),
                round,
                topic: spec.topic.clone(),
                statement: spec.statement.clone(),
                statement_is_true: spec.is_true,
                persona: persona.clone(),
                peers,
                candidates,
                k: config.k,
            });
        }
    }
    StimulusPlan::from_stimuli(stimuli)
}

/// Agent construction spec as written in a run config: a `kind` plus an
/// optional `params` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawAgentSpec")]
pub enum AgentSpec {
    Degroot { alpha: f64, initial: InitialPolicy },
    Stubborn { initial: InitialPolicy },
    Homophily { base: Box<AgentSpec> },
    RandomFollow { base: Box<AgentSpec> },
    Replay { path: PathBuf },
    Llm { parse_retries: Option<u32> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgentSpec {
    kind: String,
    #[serde(default)]
    params: Option<toml::Value>,
}

#[derive(Deserialize)]
#[serde(
    tag = "kind",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
enum TaggedAgentSpec {
    Degroot {
        alpha: f64,
        #[serde(default)]
        initial: InitialPolicy,
    },
    Stubborn {
        #[serde(default)]
        initial: InitialPolicy,
    },
    Homophily {
        base: Box<AgentSpec>,
    },
    RandomFollow {
        base: Box<AgentSpec>,
    },
    Replay {
        path: PathBuf,
    },
    Llm {
        #[serde(default)]
        parse_retries: Option<u32>,
    },
}

impl TryFrom<RawAgentSpec> for AgentSpec {
    type Error = String;

    fn try_from(raw: RawAgentSpec) -> Result<Self, String> {
        let mut table = toml::Table::new();
        table.insert("kind".into(), toml::Value::String(raw.kind.clone()));
        table.insert(
            "params".into(),
            raw.params.unwrap_or(toml::Value::Table(toml::Table::new())),
        );
        let tagged: TaggedAgentSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| format!("agent `{}`: {}", raw.kind, e.message()))?;
        Ok(match tagged {
            TaggedAgentSpec::Degroot { alpha, initial } => AgentSpec::Degroot { alpha, initial },
            TaggedAgentSpec::Stubborn { initial } => AgentSpec::Stubborn { initial },
            TaggedAgentSpec::Homophily { base } => AgentSpec::Homophily { base },
            TaggedAgentSpec::RandomFollow { base } => AgentSpec::RandomFollow { base },
            TaggedAgentSpec::Replay { path } => AgentSpec::Replay { path },
            TaggedAgentSpec::Llm { parse_retries } => AgentSpec::Llm { parse_retries },
        })
    }
}

/// What an agent needs from its surroundings when built.
pub struct AgentEnv<'a> {
    pub endpoint: Option<&'a ModelEndpoint>,
    pub audit_path: Option<&'a Path>,
    pub lenient_parse: bool,
    pub strict_schema: bool,
}

impl AgentSpec {
    pub fn uses_endpoint(&self) -> bool {
        match self {
            AgentSpec::Llm { .. } => true,
            AgentSpec::Homophily { base } | AgentSpec::RandomFollow { base } => {
                base.uses_endpoint()
            }
            _ => false,
        }
    }

    pub fn build(&self, env: &AgentEnv<'_>) -> Result<Box<dyn Agent>, EngineError> {
        Ok(match self {
            AgentSpec::Degroot { alpha, initial } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(EngineError::Config(format!(
                        "alpha must be in [0, 1], got {alpha}"
                    )));
                }
                initial.validate().map_err(EngineError::Config)?;
                Box::new(DeGrootAgent::new(*alpha, *initial))
            }
            AgentSpec::Stubborn { initial } => {
                initial.validate().map_err(EngineError::Config)?;
                Box::new(StubbornAgent { initial: *initial })
            }
            AgentSpec::Homophily { base } => Box::new(HomophilyAgent {
                base: base.build(env)?,
            }),
            AgentSpec::RandomFollow { base } => Box::new(RandomFollowAgent {
                base: base.build(env)?,
            }),
            AgentSpec::Replay { path } => {
                let source = load_cohort_with(
                    path,
                    LoadOptions {
                        strict: env.strict_schema,
                    },
                )?;
                Box::new(ReplayAgent::new(source))
            }
            AgentSpec::Llm { parse_retries } => {
                let endpoint = env.endpoint.ok_or_else(|| {
                    EngineError::Config("agent kind `llm` requires an [endpoint] table".into())
                })?;
                endpoint
                    .validate()
                    .map_err(|e| EngineError::Config(e.to_string()))?;
                let audit = match env.audit_path {
                    Some(p) => AuditLog::create(p)?,
                    None => AuditLog::sink(),
                };
                let mut agent = LlmAgent::new(endpoint.clone(), audit).lenient(env.lenient_parse);
                if let Some(n) = parse_retries {
                    agent.parse_retries = *n;
                }
                Box::new(agent)
            }
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            AgentSpec::Replay { path } => *path = base.join(&*path),
            AgentSpec::Homophily { base: inner } | AgentSpec::RandomFollow { base: inner } => {
                inner.resolve_paths(base)
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StimuliSpec {
    File { path: PathBuf },
    Synth(SynthConfig),
}

fn default_parallelism() -> usize {
    1
}

fn default_min_complete() -> f64 {
    0.95
}

fn default_label() -> String {
    "simulated".into()
}

/// A run config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentSpec,
    #[serde(default)]
    pub endpoint: Option<ModelEndpoint>,
    pub stimuli: StimuliSpec,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_label")]
    pub label: String,
    pub output_path: PathBuf,
    /// Defaults to the output path with an `.audit.jsonl` suffix.
    #[serde(default)]
    pub audit_path: Option<PathBuf>,
    #[serde(default = "default_min_complete")]
    pub min_complete_fraction: f64,
    #[serde(default)]
    pub lenient_parse: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_path = base.join(&cfg.output_path);
        if let Some(a) = cfg.audit_path.as_mut() {
            *a = base.join(&*a);
        }
        if let StimuliSpec::File { path } = &mut cfg.stimuli {
            *path = base.join(&*path);
        }
        cfg.agent.resolve_paths(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.parallelism == 0 {
            return Err(EngineError::Config("parallelism must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(EngineError::Config("rounds must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_complete_fraction) {
            return Err(EngineError::Config(
                "min_complete_fraction must be in [0, 1]".into(),
            ));
        }
        if self.agent.uses_endpoint() && self.endpoint.is_none() {
            return Err(EngineError::Config(
                "agent kind `llm` requires an [endpoint] table".into(),
            ));
        }
        if let StimuliSpec::Synth(s) = &self.stimuli {
            s.validate()?;
            if s.rounds != self.rounds {
                return Err(EngineError::Config(format!(
                    "stimuli.rounds ({}) differs from rounds ({})",
                    s.rounds, self.rounds
                )));
            }
        }
        Ok(())
    }

    pub fn audit_path(&self) -> PathBuf {
        self.audit_path.clone().unwrap_or_else(|| {
            let mut name = self
                .output_path
                .file_name()
                .unwrap_or_default()
                .to_os_string();
            name.push(".audit.jsonl");
            self.output_path.with_file_name(name)
        })
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            label: self.label.clone(),
            seed: self.seed,
            parallelism: self.parallelism,
            rounds: self.rounds,
        }
    }

    pub fn plan(&self, strict_schema: bool) -> Result<StimulusPlan, EngineError> {
        match &self.stimuli {
            StimuliSpec::Synth(s) => synthesize_stimuli(s, self.seed),
            StimuliSpec::File { path } => {
                let cohort = load_cohort_with(
                    path,
                    LoadOptions {
                        strict: strict_schema,
                    },
                )?;
                Ok(StimulusPlan::from_cohort(&cohort))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: i64) -> LikertRating {
        LikertRating::new(v).unwrap()
    }

    #[test]
    fn synth_cardinalities() {
        let plan = synthesize_stimuli(&SynthConfig::new(100, 5, 8, 3), 1).unwrap();
        assert_eq!(plan.len(), 300);
        for s in plan.entries.values() {
            assert_eq!((s.peers.len(), s.candidates.len(), s.k), (5, 8, 3));
        }
        plan.validate(3).unwrap();
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig::new(10, 4, 6, 2);
        assert_eq!(
            synthesize_stimuli(&cfg, 9).unwrap(),
            synthesize_stimuli(&cfg, 9).unwrap()
        );
        assert_ne!(
            synthesize_stimuli(&cfg, 9).unwrap(),
            synthesize_stimuli(&cfg, 10).unwrap()
        );
    }

    #[test]
    fn synth_point_mass_panels() {
        let mut cfg = SynthConfig::new(20, 6, 6, 2);
        cfg.peer_ratings = InitialPolicy::Fixed { rating: r(4) };
        for s in synthesize_stimuli(&cfg, 3).unwrap().entries.values() {
            assert!(s.peers.iter().all(|p| p.rating == r(4)));
        }
    }

    #[test]
    fn synth_rejects_k_above_pool() {
        let err = synthesize_stimuli(&SynthConfig::new(5, 3, 4, 5), 0).unwrap_err();
        assert!(matches!(err, EngineError::Config(_)), "{err}");
    }

    #[test]
    fn plan_gaps_are_listed() {
        let mut plan = synthesize_stimuli(&SynthConfig::new(3, 2, 3, 1), 0).unwrap();
        plan.entries.remove(&TraceKey::new("p002", 2));
        match plan.validate(3).unwrap_err() {
            EngineError::PlanGaps(g) => assert_eq!(g, vec![TraceKey::new("p002", 2)]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn round_seed_depends_on_key() {
        let a = round_seed(1, &TraceKey::new("p1", 1));
        assert_eq!(a, round_seed(1, &TraceKey::new("p1", 1)));
        assert_ne!(a, round_seed(1, &TraceKey::new("p1", 2)));
        assert_ne!(a, round_seed(2, &TraceKey::new("p1", 1)));
    }

    #[test]
    fn degroot_full_step() {
        let plan = synthesize_stimuli(&SynthConfig::new(1, 2, 2, 1), 0).unwrap();
        let mut s = plan.entries.values().next().unwrap().clone();
        s.peers = vec![
            PeerObservation::new("a", r(4), ""),
            PeerObservation::new("b", r(4), ""),
        ];
        let agent = DeGrootAgent::new(1.0, InitialPolicy::Fixed { rating: r(0) });
        let out = run_round(&agent, &s, 0);
        assert_eq!(out.trace.stage2.unwrap().rating, r(4));
        assert_eq!(out.trace.status, TraceStatus::Complete);
    }

    #[test]
    fn config_round_trip() {
        let text = r#"
label = "degroot"
seed = 7
parallelism = 4
output_path = "out/cohort.jsonl"

[agent]
kind = "homophily"
[agent.params.base]
kind = "degroot"
params = { alpha = 0.5, initial = { kind = "gaussian", mean = 2.25, std = 1.25 } }

[stimuli]
source = "synth"
participants = 10
n_peers = 5
pool_size = 8
k = 3
peer_ratings = { kind = "categorical", weights = [1.0, 1.0, 2.0, 1.0, 1.0] }
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.min_complete_fraction, 0.95);
        assert_eq!(
            cfg.audit_path(),
            PathBuf::from("out/cohort.jsonl.audit.jsonl")
        );
        match &cfg.agent {
            AgentSpec::Homophily { base } => {
                assert!(matches!(**base, AgentSpec::Degroot { alpha, .. } if alpha == 0.5))
            }
            other => panic!("{other:?}"),
        }
        let env = AgentEnv {
            endpoint: None,
            audit_path: None,
            lenient_parse: false,
            strict_schema: true,
        };
        assert_eq!(
            cfg.agent.build(&env).unwrap().name(),
            "homophily(degroot(alpha=0.5))"
        );
        assert_eq!(cfg.plan(true).unwrap().len(), 30);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = RunConfig::from_toml(
            "seed = 1\n[agent]\nkind = \"stubborn\"\n[stimuli]\nsource = \"file\"\npath = \"x\"",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("output_path"), "{err}");
        let err = RunConfig::from_toml(
            "output_path = \"o\"\n[agent]\nkind = \"llm\"\n[stimuli]\nsource = \"file\"\npath = \"x\"",
        )
        .unwrap_err();
        assert!(err.to_string().contains("endpoint"), "{err}");
    }
}

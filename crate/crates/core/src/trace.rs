//! Domain types for participant-round traces, the line-delimited trace file
//! format, and cohort alignment.
//!
//! A trace file holds one JSON object per line. Ratings are integers on the
//! 0-4 agreement scale; stage 2 and the follow list are `null` when the round
//! failed before reaching them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: rating out of range: {value}")]
    RatingOutOfRange { line: usize, value: i64 },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: duplicate trace ({participant_id}, round {round})")]
    Duplicate {
        line: usize,
        participant_id: String,
        round: u32,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate trace ({participant_id}, round {round})")]
    DuplicateKey { participant_id: String, round: u32 },
    #[error("invalid trace ({participant_id}, round {round}): {message}")]
    InvalidTrace {
        participant_id: String,
        round: u32,
        message: String,
    },
    #[error("no comparable instances")]
    NoComparableInstances,
}

/// Rating outside the 0-4 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("rating out of range: {0}")]
pub struct RatingOutOfRange(pub i64);

/// Integer agreement rating: 0 = strongly disagree ... 4 = strongly agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct LikertRating(u8);

impl LikertRating {
    pub const MIN: LikertRating = LikertRating(0);
    pub const MAX: LikertRating = LikertRating(4);
    pub const LEVELS: usize = 5;

    pub fn new(value: i64) -> Result<Self, RatingOutOfRange> {
        if (0..=4).contains(&value) {
            Ok(LikertRating(value as u8))
        } else {
            Err(RatingOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = LikertRating> {
        (0..=4u8).map(LikertRating)
    }
}

impl TryFrom<i64> for LikertRating {
    type Error = RatingOutOfRange;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        LikertRating::new(value)
    }
}

impl From<LikertRating> for i64 {
    fn from(r: LikertRating) -> i64 {
        i64::from(r.0)
    }
}

impl fmt::Display for LikertRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The five canonical personality trait scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Big5 {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub agent_id: String,
    pub display_name: String,
    pub demographics: String,
    pub big5: Option<Big5>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerObservation {
    pub peer_id: String,
    pub rating: LikertRating,
    pub reason: String,
}

impl PeerObservation {
    pub fn new(
        peer_id: impl Into<String>,
        rating: LikertRating,
        reason: impl Into<String>,
    ) -> Self {
        PeerObservation {
            peer_id: peer_id.into(),
            rating,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResponse {
    pub rating: LikertRating,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Complete,
    FailedStage1,
    FailedStage2,
    FailedStage3,
}

impl TraceStatus {
    pub fn failed_at(stage: Stage) -> Self {
        match stage {
            Stage::One => TraceStatus::FailedStage1,
            Stage::Two => TraceStatus::FailedStage2,
            Stage::Three => TraceStatus::FailedStage3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

/// Cohort key: one participant in one round.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceKey {
    pub participant_id: String,
    pub round: u32,
}

impl TraceKey {
    pub fn new(participant_id: impl Into<String>, round: u32) -> Self {
        TraceKey {
            participant_id: participant_id.into(),
            round,
        }
    }
}

impl fmt::Display for TraceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, round {})", self.participant_id, self.round)
    }
}

/// One participant-round through all three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub participant_id: String,
    pub round: u32,
    pub topic: String,
    pub statement: String,
    pub statement_is_true: Option<bool>,
    pub persona: Persona,
    pub stage1: Option<StageResponse>,
    pub peers: Vec<PeerObservation>,
    pub stage2: Option<StageResponse>,
    pub candidates: Vec<PeerObservation>,
    pub k: usize,
    pub follows: Option<Vec<String>>,
    pub status: TraceStatus,
}

impl RoundTrace {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(self.participant_id.clone(), self.round)
    }

    /// Whether the data needed for `stage` comparisons is present.
    pub fn supports(&self, stage: Stage) -> bool {
        match stage {
            Stage::One => self.status != TraceStatus::FailedStage1 && self.stage1.is_some(),
            Stage::Two => {
                matches!(
                    self.status,
                    TraceStatus::Complete | TraceStatus::FailedStage3
                ) && self.stage1.is_some()
                    && self.stage2.is_some()
            }
            Stage::Three => self.status == TraceStatus::Complete,
        }
    }

    pub fn initial_rating(&self) -> Option<LikertRating> {
        self.stage1.as_ref().map(|s| s.rating)
    }

    pub fn updated_rating(&self) -> Option<LikertRating> {
        self.stage2.as_ref().map(|s| s.rating)
    }

    /// Ratings of the followed candidates, in follow order.
    pub fn followed_ratings(&self) -> Result<Vec<LikertRating>, String> {
        let follows = self.follows.as_ref().ok_or("no follow selection")?;
        follows
            .iter()
            .map(|id| {
                self.candidates
                    .iter()
                    .find(|c| &c.peer_id == id)
                    .map(|c| c.rating)
                    .ok_or_else(|| format!("followed id `{id}` is not a candidate"))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.participant_id.is_empty() {
            return Err("participant_id is empty".into());
        }
        if self.round == 0 {
            return Err("round must be >= 1".into());
        }
        if self.persona.agent_id.is_empty() {
            return Err("persona.agent_id is empty".into());
        }
        if let Some(p) = self
            .peers
            .iter()
            .chain(&self.candidates)
            .find(|p| p.peer_id.is_empty())
        {
            return Err(format!("empty peer_id (reason: {:?})", p.reason));
        }
        // stage data must be a prefix of the protocol
        if self.stage2.is_some() && self.stage1.is_none() {
            return Err("stage2 present without stage1".into());
        }
        if self.follows.is_some() && self.stage2.is_none() {
            return Err("follows present without stage2".into());
        }
        if self.stage2.is_some() && self.peers.is_empty() {
            return Err("stage2 present but no peers were observed".into());
        }
        match self.status {
            TraceStatus::Complete => {
                if self.stage1.is_none() || self.stage2.is_none() {
                    return Err("complete trace is missing stage data".into());
                }
                let follows = self
                    .follows
                    .as_ref()
                    .ok_or("complete trace has no follows")?;
                check_follows(follows, &self.candidates, self.k)?;
            }
            TraceStatus::FailedStage1 => {
                if self.stage1.is_some() {
                    return Err("failed_stage1 trace carries stage1 data".into());
                }
            }
            TraceStatus::FailedStage2 => {
                if self.stage1.is_none() || self.stage2.is_some() {
                    return Err("failed_stage2 trace must have stage1 and no stage2".into());
                }
            }
            TraceStatus::FailedStage3 => {
                if self.stage2.is_none() || self.follows.is_some() {
                    return Err("failed_stage3 trace must have stage2 and no follows".into());
                }
            }
        }
        Ok(())
    }
}

/// Exactly `k` distinct ids, each naming a candidate.
pub fn check_follows(
    follows: &[String],
    candidates: &[PeerObservation],
    k: usize,
) -> Result<(), String> {
    if follows.len() != k {
        return Err(format!("expected {k} follows, found {}", follows.len()));
    }
    let mut seen = BTreeSet::new();
    for id in follows {
        if !seen.insert(id.as_str()) {
            return Err(format!("duplicate follow id `{id}`"));
        }
        if !candidates.iter().any(|c| &c.peer_id == id) {
            return Err(format!("follow id `{id}` is not a candidate"));
        }
    }
    Ok(())
}

/// All traces produced by one agent kind (or by humans).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub label: String,
    pub traces: BTreeMap<TraceKey, RoundTrace>,
}

impl Cohort {
    pub fn new(label: impl Into<String>) -> Self {
        Cohort {
            label: label.into(),
            traces: BTreeMap::new(),
        }
    }

    pub fn from_traces(
        label: impl Into<String>,
        traces: impl IntoIterator<Item = RoundTrace>,
    ) -> Result<Self, TraceError> {
        let mut cohort = Cohort::new(label);
        for t in traces {
            cohort.insert(t)?;
        }
        Ok(cohort)
    }

    pub fn insert(&mut self, trace: RoundTrace) -> Result<(), TraceError> {
        let key = trace.key();
        if self.traces.contains_key(&key) {
            return Err(TraceError::DuplicateKey {
                participant_id: key.participant_id,
                round: key.round,
            });
        }
        self.traces.insert(key, trace);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, key: &TraceKey) -> Option<&RoundTrace> {
        self.traces.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RoundTrace> {
        self.traces.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &TraceKey> {
        self.traces.keys()
    }

    /// Checks every trace and the cohort-level persona constraints.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut owners: HashMap<&str, &str> = HashMap::new();
        for (key, t) in &self.traces {
            let invalid = |message: String| TraceError::InvalidTrace {
                participant_id: key.participant_id.clone(),
                round: key.round,
                message,
            };
            if *key != t.key() {
                return Err(invalid("key does not match trace".into()));
            }
            t.validate().map_err(invalid)?;
            let owner = owners
                .entry(t.persona.agent_id.as_str())
                .or_insert(t.participant_id.as_str());
            if *owner != t.participant_id {
                return Err(invalid(format!(
                    "agent_id `{}` is shared with participant `{owner}`",
                    t.persona.agent_id
                )));
            }
        }
        Ok(())
    }

    /// Restricts to `keys`, keeping the label.
    pub fn restrict<'a>(&self, keys: impl IntoIterator<Item = &'a TraceKey>) -> Cohort {
        let traces = keys
            .into_iter()
            .filter_map(|k| self.traces.get(k).map(|t| (k.clone(), t.clone())))
            .collect();
        Cohort {
            label: self.label.clone(),
            traces,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject unknown and missing fields instead of ignoring / defaulting them.
    pub strict: bool,
}

const TRACE_FIELDS: &[&str] = &[
    "participant_id",
    "round",
    "topic",
    "statement",
    "statement_is_true",
    "persona",
    "stage1",
    "peers",
    "stage2",
    "candidates",
    "k",
    "follows",
    "status",
];
const PERSONA_FIELDS: &[&str] = &["agent_id", "display_name", "demographics", "big5"];
const STAGE_FIELDS: &[&str] = &["rating", "reason"];
const PEER_FIELDS: &[&str] = &["peer_id", "rating", "reason"];

#[derive(Deserialize)]
struct WireStage {
    rating: i64,
    reason: String,
}

#[derive(Deserialize)]
struct WirePeer {
    peer_id: String,
    rating: i64,
    reason: String,
}

#[derive(Deserialize)]
struct WireTrace {
    participant_id: String,
    round: u32,
    topic: String,
    statement: String,
    #[serde(default)]
    statement_is_true: Option<bool>,
    persona: Persona,
    #[serde(default)]
    stage1: Option<WireStage>,
    peers: Vec<WirePeer>,
    #[serde(default)]
    stage2: Option<WireStage>,
    candidates: Vec<WirePeer>,
    k: usize,
    #[serde(default)]
    follows: Option<Vec<String>>,
    status: TraceStatus,
}

fn check_fields(
    value: &Value,
    allowed: &[&str],
    path: &str,
    line: usize,
) -> Result<(), TraceError> {
    let Some(obj) = value.as_object() else {
        return Ok(());
    };
    if let Some(field) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(TraceError::UnknownField {
            line,
            field: format!("{path}{field}"),
        });
    }
    if let Some(field) = allowed.iter().find(|f| !obj.contains_key(**f)) {
        return Err(TraceError::MissingField {
            line,
            field: format!("{path}{field}"),
        });
    }
    Ok(())
}

fn check_schema(value: &Value, line: usize) -> Result<(), TraceError> {
    check_fields(value, TRACE_FIELDS, "", line)?;
    check_fields(&value["persona"], PERSONA_FIELDS, "persona.", line)?;
    for stage in ["stage1", "stage2"] {
        if !value[stage].is_null() {
            check_fields(&value[stage], STAGE_FIELDS, &format!("{stage}."), line)?;
        }
    }
    for list in ["peers", "candidates"] {
        if let Some(items) = value[list].as_array() {
            for item in items {
                check_fields(item, PEER_FIELDS, &format!("{list}[]."), line)?;
            }
        }
    }
    Ok(())
}

fn rating(value: i64, line: usize) -> Result<LikertRating, TraceError> {
    LikertRating::new(value).map_err(|e| TraceError::RatingOutOfRange { line, value: e.0 })
}

fn convert_peers(peers: Vec<WirePeer>, line: usize) -> Result<Vec<PeerObservation>, TraceError> {
    peers
        .into_iter()
        .map(|p| {
            Ok(PeerObservation {
                peer_id: p.peer_id,
                rating: rating(p.rating, line)?,
                reason: p.reason,
            })
        })
        .collect()
}

fn convert_stage(
    stage: Option<WireStage>,
    line: usize,
) -> Result<Option<StageResponse>, TraceError> {
    stage
        .map(|s| {
            Ok(StageResponse {
                rating: rating(s.rating, line)?,
                reason: s.reason,
            })
        })
        .transpose()
}

/// Parses one trace-file line. `line` is 1-based and only used for errors.
pub fn parse_trace_line(
    text: &str,
    line: usize,
    options: LoadOptions,
) -> Result<RoundTrace, TraceError> {
    let malformed = |e: serde_json::Error| TraceError::Malformed {
        line,
        message: e.to_string(),
    };
    let value: Value = serde_json::from_str(text).map_err(malformed)?;
    if !value.is_object() {
        return Err(TraceError::Malformed {
            line,
            message: "record is not an object".into(),
        });
    }
    if options.strict {
        check_schema(&value, line)?;
    }
    let wire: WireTrace = serde_json::from_value(value).map_err(malformed)?;
    let trace = RoundTrace {
        participant_id: wire.participant_id,
        round: wire.round,
        topic: wire.topic,
        statement: wire.statement,
        statement_is_true: wire.statement_is_true,
        persona: wire.persona,
        stage1: convert_stage(wire.stage1, line)?,
        peers: convert_peers(wire.peers, line)?,
        stage2: convert_stage(wire.stage2, line)?,
        candidates: convert_peers(wire.candidates, line)?,
        k: wire.k,
        follows: wire.follows,
        status: wire.status,
    };
    trace
        .validate()
        .map_err(|message| TraceError::Invalid { line, message })?;
    Ok(trace)
}

/// Serializes one trace as a single line (no trailing newline).
pub fn trace_to_line(trace: &RoundTrace) -> String {
    serde_json::to_string(trace).expect("trace serialization is infallible")
}

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort, TraceError> {
    load_cohort_with(path, LoadOptions::default())
}

/// Loads a trace file; the cohort label is the file stem.
pub fn load_cohort_with(
    path: impl AsRef<Path>,
    options: LoadOptions,
) -> Result<Cohort, TraceError> {
    let path = path.as_ref();
    let io = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cohort = Cohort::new(label);
    for (idx, text) in BufReader::new(file).lines().enumerate() {
        let line = idx + 1;
        let text = text.map_err(io)?;
        if text.trim().is_empty() {
            continue;
        }
        let trace = parse_trace_line(&text, line, options)?;
        let key = trace.key();
        if cohort.traces.contains_key(&key) {
            return Err(TraceError::Duplicate {
                line,
                participant_id: key.participant_id,
                round: key.round,
            });
        }
        cohort.traces.insert(key, trace);
    }
    cohort.validate()?;
    Ok(cohort)
}

/// Writes one line per trace in (participant_id, round) order.
pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for trace in cohort.traces.values() {
        out.write_all(trace_to_line(trace).as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Why a key present in either cohort was left out of an aligned comparison.
/// Each dropped key is counted once, under the first reason that applies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub n_total: usize,
    pub n_aligned: usize,
    pub missing_in_subject: usize,
    pub missing_in_reference: usize,
    pub failed_in_subject: usize,
    pub failed_in_reference: usize,
}

impl DropCounts {
    pub fn dropped(&self) -> usize {
        self.missing_in_subject
            + self.missing_in_reference
            + self.failed_in_subject
            + self.failed_in_reference
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub subject: Cohort,
    pub reference: Cohort,
    pub drops: DropCounts,
}

/// Keys present in both cohorts whose traces support `stage`.
pub fn align_for_stage(subject: &Cohort, reference: &Cohort, stage: Stage) -> Alignment {
    let all: BTreeSet<&TraceKey> = subject.keys().chain(reference.keys()).collect();
    let mut drops = DropCounts {
        n_total: all.len(),
        ..DropCounts::default()
    };
    let mut kept = Vec::new();
    for key in all {
        match (subject.get(key), reference.get(key)) {
            (None, _) => drops.missing_in_subject += 1,
            (_, None) => drops.missing_in_reference += 1,
            (Some(s), _) if !s.supports(stage) => drops.failed_in_subject += 1,
            (_, Some(r)) if !r.supports(stage) => drops.failed_in_reference += 1,
            _ => kept.push(key),
        }
    }
    drops.n_aligned = kept.len();
    Alignment {
        subject: subject.restrict(kept.iter().copied()),
        reference: reference.restrict(kept.iter().copied()),
        drops,
    }
}

/// Restricts both cohorts to the keys present and complete in both.
pub fn align_cohorts(a: &Cohort, b: &Cohort) -> Result<(Cohort, Cohort), TraceError> {
    let aligned = align_for_stage(a, b, Stage::Three);
    if aligned.drops.n_aligned == 0 {
        return Err(TraceError::NoComparableInstances);
    }
    Ok((aligned.subject, aligned.reference))
}

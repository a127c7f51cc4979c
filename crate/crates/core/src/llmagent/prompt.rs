//! Stage prompt templates and their rendering.
//!
//! Placeholders are `{name}` tokens drawn from a fixed set per template; any
//! other brace (the JSON skeleton in the stage-3 prompt) is literal text.

use thiserror::Error;

use crate::agents::{one_line, AgentContext};
use crate::trace::{PeerObservation, Stage};

pub const STAGE1_TEMPLATE: &str = r#"You are the person agent_id={agent_id}. You have the following persona={persona}.
Rate the following statement on a Likert scale from 0 to 4 based on how much you believe the statement to be true,
where 0 = strongly disagree and 4 = strongly agree.

Statement: "{statement}"

Format your response EXACTLY as follows:
Rating: <number>
Reason: <a short paragraph>"#;

pub const STAGE2_TEMPLATE: &str = r#"You are the person agent_id={agent_id}. You have the following persona: {persona}.
- Memory: {memory_summary}

The statement to evaluate:
"{statement}"

Your current belief about the statement is {prior} because: {initial_rationale}.
Now you observe the following neighbor ratings and rationales: {obs_str}

Task:
Considering your own persona and your observed neighbor opinions, rate how much you believe the given statement to be true on a Likert scale from 0 to 4, where:
0 = strongly disagree; 4 = strongly agree

Provide a short rationale (1--2 sentences) explaining your update.

Format your response EXACTLY as:
Rating: <number>
Reason: <a short paragraph>"#;

pub const STAGE3_TEMPLATE: &str = r#"You are a person with the following profile.
- id: {agent_id}
- name: {name}
- persona: {persona}
- memory: {memory_summary}

The statement to evaluate: "{statement}"

Here is what you did in the previous stages:
{stage1_summary}
{stage2_summary}

You must choose exactly {k} candidates from the list below.
Candidates: {candidates_block}

Respond ONLY in strict JSON:
{
  "follow_ids": ["<id1>", "<id2>", ... exactly {k} ids ...],
  "reason": "<short explanation>"
}"#;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("no peers to show")]
    EmptyPeers,
    #[error("no candidates to show")]
    EmptyCandidates,
    #[error("k = {k} is not in 1..={available}")]
    InvalidK { k: usize, available: usize },
}

/// A rendered prompt tagged with its stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptFixture {
    pub stage: Stage,
    pub filled_template: String,
}

/// Single-pass substitution, so substituted values are never re-scanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// One entry per line, `id: <id> | rating: <r> | reason: <text>`, in input
/// order; each entry starts on a new line.
pub fn observation_block(entries: &[PeerObservation]) -> String {
    entries
        .iter()
        .map(|p| {
            format!(
                "\nid: {} | rating: {} | reason: {}",
                p.peer_id,
                p.rating,
                one_line(&p.reason)
            )
        })
        .collect()
}

fn require<'a>(value: &'a str, name: &'static str) -> Result<&'a str, PromptError> {
    if value.is_empty() {
        Err(PromptError::MissingField(name))
    } else {
        Ok(value)
    }
}

/// The memory field carries nothing across rounds and stays empty; earlier
/// stages of the round reach the prompt through the stage summaries.
const MEMORY_SUMMARY: &str = "";

pub fn render_stage1_prompt(ctx: &AgentContext) -> Result<String, PromptError> {
    let agent_id = require(&ctx.persona.agent_id, "agent_id")?;
    let persona = require(&ctx.persona.demographics, "persona")?;
    let statement = require(&ctx.statement, "statement")?;
    Ok(fill(
        STAGE1_TEMPLATE,
        &[
            ("agent_id", agent_id),
            ("persona", persona),
            ("statement", statement),
        ],
    ))
}

pub fn render_stage2_prompt(
    ctx: &AgentContext,
    peers: &[PeerObservation],
) -> Result<String, PromptError> {
    let agent_id = require(&ctx.persona.agent_id, "agent_id")?;
    let persona = require(&ctx.persona.demographics, "persona")?;
    let statement = require(&ctx.statement, "statement")?;
    let first = ctx
        .summary(Stage::One)
        .ok_or(PromptError::MissingField("stage1_summary"))?;
    if peers.is_empty() {
        return Err(PromptError::EmptyPeers);
    }
    let prior = first.rating.to_string();
    let rationale = one_line(&first.reason);
    let obs = observation_block(peers);
    Ok(fill(
        STAGE2_TEMPLATE,
        &[
            ("agent_id", agent_id),
            ("persona", persona),
            ("memory_summary", MEMORY_SUMMARY),
            ("statement", statement),
            ("prior", &prior),
            ("initial_rationale", &rationale),
            ("obs_str", &obs),
        ],
    ))
}

pub fn render_stage3_prompt(
    ctx: &AgentContext,
    candidates: &[PeerObservation],
    k: usize,
) -> Result<String, PromptError> {
    let agent_id = require(&ctx.persona.agent_id, "agent_id")?;
    let persona = require(&ctx.persona.demographics, "persona")?;
    let statement = require(&ctx.statement, "statement")?;
    let first = ctx
        .summary(Stage::One)
        .ok_or(PromptError::MissingField("stage1_summary"))?;
    let second = ctx
        .summary(Stage::Two)
        .ok_or(PromptError::MissingField("stage2_summary"))?;
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if k == 0 || k > candidates.len() {
        return Err(PromptError::InvalidK {
            k,
            available: candidates.len(),
        });
    }
    let k_text = k.to_string();
    let (s1, s2) = (first.to_string(), second.to_string());
    let block = observation_block(candidates);
    Ok(fill(
        STAGE3_TEMPLATE,
        &[
            ("agent_id", agent_id),
            ("name", &ctx.persona.display_name),
            ("persona", persona),
            ("memory_summary", MEMORY_SUMMARY),
            ("statement", statement),
            ("stage1_summary", &s1),
            ("stage2_summary", &s2),
            ("k", &k_text),
            ("candidates_block", &block),
        ],
    ))
}

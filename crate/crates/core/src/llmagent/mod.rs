//! The model-backed agent: renders stage prompts, calls a chat-completion
//! endpoint, parses the reply and re-asks on malformed output.

pub mod client;
pub mod parse;
pub mod prompt;
pub mod stub;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use client::{chat_complete, ChatError, ChatMessage, Completion, ModelEndpoint};
pub use parse::{format_rating_response, parse_follow_response, parse_rating_response, ParseError};
pub use prompt::{
    render_stage1_prompt, render_stage2_prompt, render_stage3_prompt, PromptError, PromptFixture,
};

use crate::agents::{Agent, AgentContext, AgentDecision, AgentError};
use crate::trace::{PeerObservation, Stage};

/// One line of the audit log. `response_text` is the raw reply, or null when
/// the endpoint could not be reached.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub participant_id: String,
    pub round: u32,
    pub stage: u8,
    pub attempt: u32,
    pub request_bytes_sha256: String,
    pub response_text: Option<String>,
}

/// Line-delimited audit sink shared by concurrent rounds.
pub struct AuditLog {
    out: Mutex<Box<dyn Write + Send>>,
}

impl AuditLog {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(AuditLog::to_writer(BufWriter::new(File::create(path)?)))
    }

    pub fn to_writer(w: impl Write + Send + 'static) -> Self {
        AuditLog {
            out: Mutex::new(Box::new(w)),
        }
    }

    pub fn sink() -> Self {
        AuditLog::to_writer(std::io::sink())
    }

    pub fn record(&self, rec: &AuditRecord) {
        let line = serde_json::to_string(rec).expect("audit record serializes");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            log::error!("audit log write failed: {e}");
        }
    }
}

pub struct LlmAgent {
    pub endpoint: ModelEndpoint,
    /// Re-asks with the identical prompt after a malformed reply.
    pub parse_retries: u32,
    pub lenient_parse: bool,
    audit: AuditLog,
}

impl LlmAgent {
    pub fn new(endpoint: ModelEndpoint, audit: AuditLog) -> Self {
        LlmAgent {
            parse_retries: endpoint.max_retries,
            endpoint,
            lenient_parse: false,
            audit,
        }
    }

    pub fn lenient(mut self, lenient: bool) -> Self {
        self.lenient_parse = lenient;
        self
    }

    /// Sends `prompt` as a single user message until `parse` accepts the
    /// reply or the re-ask budget runs out.
    fn ask<T>(
        &self,
        ctx: &AgentContext,
        stage: Stage,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, AgentError> {
        let messages = [ChatMessage::user(prompt)];
        let body = serde_json::to_vec(&client::request_body(&self.endpoint, &messages))
            .expect("body serializes");
        let digest = hex::encode(Sha256::digest(&body));
        let mut last = None;
        for attempt in 1..=self.parse_retries + 1 {
            let reply = chat_complete(&self.endpoint, &messages);
            self.audit.record(&AuditRecord {
                timestamp: chrono::Utc::now().to_rfc3339(),
                participant_id: ctx.key.participant_id.clone(),
                round: ctx.key.round,
                stage: stage.number(),
                attempt,
                request_bytes_sha256: digest.clone(),
                response_text: reply.as_ref().ok().map(|c| c.text.clone()),
            });
            let text = reply
                .map_err(|e| AgentError::Transport(e.to_string()))?
                .text;
            match parse(&text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{} {stage}: attempt {attempt}: {e}", ctx.key);
                    last = Some(e);
                }
            }
        }
        let e = last.expect("at least one attempt");
        Err(AgentError::Parse(format!("{}: {e}", e.code())))
    }
}

fn prompt_error(e: PromptError) -> AgentError {
    AgentError::Invalid(e.to_string())
}

impl Agent for LlmAgent {
    fn name(&self) -> String {
        self.endpoint.model_name.clone()
    }

    fn stage1(&self, ctx: &AgentContext) -> Result<AgentDecision, AgentError> {
        let prompt = render_stage1_prompt(ctx).map_err(prompt_error)?;
        let (rating, reason) = self.ask(ctx, Stage::One, &prompt, |t| {
            parse_rating_response(t, self.lenient_parse)
        })?;
        Ok(AgentDecision::rating(rating, reason))
    }

    fn stage2(
        &self,
        ctx: &AgentContext,
        peers: &[PeerObservation],
    ) -> Result<AgentDecision, AgentError> {
        let prompt = render_stage2_prompt(ctx, peers).map_err(prompt_error)?;
        let (rating, reason) = self.ask(ctx, Stage::Two, &prompt, |t| {
            parse_rating_response(t, self.lenient_parse)
        })?;
        Ok(AgentDecision::rating(rating, reason))
    }

    fn stage3(
        &self,
        ctx: &AgentContext,
        candidates: &[PeerObservation],
        k: usize,
    ) -> Result<AgentDecision, AgentError> {
        let prompt = render_stage3_prompt(ctx, candidates, k).map_err(prompt_error)?;
        let (ids, reason) = self.ask(ctx, Stage::Three, &prompt, |t| {
            parse_follow_response(t, candidates, k)
        })?;
        Ok(AgentDecision::follow(ids, reason))
    }
}

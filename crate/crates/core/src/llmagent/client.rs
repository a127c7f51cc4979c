use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Default response layouts tried in order when no path is configured.
const DEFAULT_RESPONSE_PATHS: [&str; 2] = ["choices.0.message.content", "message.content"];

fn default_temperature() -> f64 {
    1.2
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_chat_path() -> String {
    "/v1/chat/completions".to_string()
}

/// A chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    /// Environment variable that overrides `base_url` when set.
    #[serde(default)]
    pub base_url_env: Option<String>,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    /// Dotted path to the assistant text in the response body, e.g.
    /// `choices.0.message.content`.
    #[serde(default)]
    pub response_path: Option<String>,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            base_url_env: None,
            model_name: model_name.into(),
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            api_key_env: None,
            chat_path: default_chat_path(),
            response_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), ChatError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ChatError::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ChatError::Config(format!(
                "timeout_secs must be > 0, got {}",
                self.timeout_secs
            )));
        }
        if self.model_name.is_empty() {
            return Err(ChatError::Config("model_name is empty".into()));
        }
        if self.resolved_base_url().is_empty() {
            return Err(ChatError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn resolved_base_url(&self) -> String {
        self.base_url_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .unwrap_or_else(|| self.base_url.clone())
    }

    pub fn url(&self) -> String {
        let base = self.resolved_base_url();
        let base = base.trim_end_matches('/');
        if self.chat_path.is_empty() {
            base.to_string()
        } else if self.chat_path.starts_with('/') {
            format!("{base}{}", self.chat_path)
        } else {
            format!("{base}/{}", self.chat_path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Why a single attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptFailure {
    Timeout,
    Status(u16),
    Transport(String),
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptFailure::Timeout => f.write_str("timeout"),
            AttemptFailure::Status(code) => write!(f, "HTTP status {code}"),
            AttemptFailure::Transport(msg) => write!(f, "transport error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("endpoint config: {0}")]
    Config(String),
    #[error("retries exhausted after {attempts} attempt(s); last failure: {last}")]
    RetriesExhausted { attempts: u32, last: AttemptFailure },
    #[error("response carries no assistant text: {0}")]
    BadResponse(String),
}

impl ChatError {
    /// True when the endpoint itself could not be reached or kept failing.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, ChatError::RetriesExhausted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Attempts beyond the first.
    pub retries: u32,
}

/// The JSON body sent for `messages`.
pub fn request_body(endpoint: &ModelEndpoint, messages: &[ChatMessage]) -> Value {
    json!({
        "model": endpoint.model_name,
        "messages": messages,
        "temperature": endpoint.temperature,
        "stream": false,
    })
}

/// Looks up a dotted path; numeric segments index arrays.
pub fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, seg| match v {
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

fn extract_text(endpoint: &ModelEndpoint, body: &Value) -> Result<String, ChatError> {
    let found = match endpoint.response_path.as_deref() {
        Some(path) => lookup_path(body, path),
        None => DEFAULT_RESPONSE_PATHS
            .iter()
            .find_map(|p| lookup_path(body, p)),
    };
    found
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ChatError::BadResponse(truncate(&body.to_string(), 200)))
}

fn truncate(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}

fn attempt(
    agent: &ureq::Agent,
    endpoint: &ModelEndpoint,
    url: &str,
    body: &[u8],
) -> Result<Result<Value, ChatError>, AttemptFailure> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = endpoint
        .api_key_env
        .as_deref()
        .and_then(|n| std::env::var(n).ok())
    {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send(body).map_err(classify)?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(AttemptFailure::Status(status));
    }
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| ChatError::BadResponse(format!("invalid JSON: {e}"))))
}

fn classify(err: ureq::Error) -> AttemptFailure {
    match err {
        ureq::Error::Timeout(_) => AttemptFailure::Timeout,
        ureq::Error::StatusCode(code) => AttemptFailure::Status(code),
        other => AttemptFailure::Transport(other.to_string()),
    }
}

/// Sends `messages` and returns the assistant text. Timeouts, transport
/// errors and non-success statuses are retried up to `max_retries` times
/// with exponential backoff.
pub fn chat_complete(
    endpoint: &ModelEndpoint,
    messages: &[ChatMessage],
) -> Result<Completion, ChatError> {
    endpoint.validate()?;
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
        .http_status_as_error(false)
        .build();
    let agent = ureq::Agent::new_with_config(config);
    let url = endpoint.url();
    let body =
        serde_json::to_vec(&request_body(endpoint, messages)).expect("request body serializes");

    let mut delay = Duration::from_millis(endpoint.backoff_ms);
    let mut retries = 0;
    loop {
        match attempt(&agent, endpoint, &url, &body) {
            Ok(parsed) => {
                if retries > 0 {
                    log::info!("{url}: succeeded after {retries} retries");
                }
                let text = extract_text(endpoint, &parsed?)?;
                return Ok(Completion { text, retries });
            }
            Err(failure) => {
                if retries >= endpoint.max_retries {
                    log::warn!("{url}: giving up after {} attempts: {failure}", retries + 1);
                    return Err(ChatError::RetriesExhausted {
                        attempts: retries + 1,
                        last: failure,
                    });
                }
                retries += 1;
                log::warn!(
                    "{url}: {failure}; retry {retries} of {}",
                    endpoint.max_retries
                );
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_defaults_from_toml() {
        let e: ModelEndpoint =
            toml::from_str("base_url = \"http://h:1\"\nmodel_name = \"llama3.3_70b\"").unwrap();
        assert_eq!(e.temperature, 1.2);
        assert_eq!(e.url(), "http://h:1/v1/chat/completions");
        assert!(e.validate().is_ok());
        let mut bad = e.clone();
        bad.temperature = 0.0;
        assert!(matches!(bad.validate(), Err(ChatError::Config(_))));
    }

    #[test]
    fn body_shape() {
        let e = ModelEndpoint::new("http://h", "m");
        let body = request_body(&e, &[ChatMessage::user("hi")]);
        assert_eq!(
            body,
            json!({"model": "m", "messages": [{"role": "user", "content": "hi"}], "temperature": 1.2, "stream": false})
        );
    }

    #[test]
    fn path_lookup() {
        let v = json!({"choices": [{"message": {"content": "x"}}]});
        assert_eq!(
            lookup_path(&v, "choices.0.message.content"),
            Some(&json!("x"))
        );
        assert_eq!(lookup_path(&v, "choices.1.message"), None);
        let e = ModelEndpoint::new("http://h", "m");
        assert_eq!(
            extract_text(&e, &json!({"message": {"content": "y"}})).unwrap(),
            "y"
        );
        assert!(extract_text(&e, &json!({"nothing": 1})).is_err());
    }
}

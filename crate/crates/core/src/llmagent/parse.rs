use std::collections::BTreeSet;

use serde_json::Value;
use thiserror::Error;

use crate::trace::{LikertRating, PeerObservation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no parsable rating")]
    NoRating,
    #[error("rating out of range: {0}")]
    RatingOutOfRange(i64),
    #[error("no reason line")]
    NoReason,
    #[error("no JSON object found")]
    NoObject,
    #[error("object has no string array `follow_ids`")]
    MissingFollowIds,
    #[error("expected {expected} ids, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("unknown candidate id `{0}`")]
    UnknownId(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::NoRating => "no_rating",
            ParseError::RatingOutOfRange(_) => "rating_out_of_range",
            ParseError::NoReason => "no_reason",
            ParseError::NoObject => "no_object",
            ParseError::MissingFollowIds => "missing_follow_ids",
            ParseError::WrongCount { .. } => "wrong_count",
            ParseError::UnknownId(_) => "unknown_id",
            ParseError::DuplicateId(_) => "duplicate_id",
        }
    }
}

/// Leading (optionally signed) integer of `text`, ignoring leading blanks.
fn leading_int(text: &str) -> Option<i64> {
    let t = text.trim_start();
    let digits_start = usize::from(t.starts_with('-') || t.starts_with('+'));
    let len = t[digits_start..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .count();
    if len == 0 {
        return None;
    }
    t[..digits_start + len].parse().ok()
}

fn checked(value: i64) -> Result<LikertRating, ParseError> {
    LikertRating::new(value).map_err(|e| ParseError::RatingOutOfRange(e.0))
}

fn reason_from(text: &str) -> String {
    text.trim_start_matches([' ', '\t']).trim_end().to_string()
}

fn parse_strict(text: &str) -> Result<(LikertRating, String), ParseError> {
    let mut offset = 0;
    let mut rating = None;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_start();
        match rating {
            None => {
                if let Some(rest) = trimmed.strip_prefix("Rating:") {
                    rating = Some(checked(leading_int(rest).ok_or(ParseError::NoRating)?)?);
                }
            }
            Some(r) => {
                if let Some(pos) = trimmed.find("Reason:").filter(|p| trimmed[..*p].is_empty()) {
                    let lead = line.len() - trimmed.len();
                    let body = &text[start + lead + pos + "Reason:".len()..];
                    return Ok((r, reason_from(body)));
                }
            }
        }
    }
    Err(if rating.is_some() {
        ParseError::NoReason
    } else {
        ParseError::NoRating
    })
}

fn parse_lenient(text: &str) -> Result<(LikertRating, String), ParseError> {
    let at = text
        .find("Rating")
        .or_else(|| text.to_ascii_lowercase().find("rating"))
        .ok_or(ParseError::NoRating)?;
    let after = &text[at + "Rating".len()..];
    let digit = after
        .find(|c: char| c.is_ascii_digit())
        .ok_or(ParseError::NoRating)?;
    let len = after[digit..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .count();
    let value: i64 = after[digit..digit + len]
        .parse()
        .map_err(|_| ParseError::NoRating)?;
    let rating = checked(value)?;
    let tail = &after[digit + len..];
    let reason = tail
        .find("Reason:")
        .map(|p| reason_from(&tail[p + "Reason:".len()..]))
        .unwrap_or_default();
    Ok((rating, reason))
}

/// Parses a `Rating: <n>` / `Reason: <text>` response. With `lenient`, a
/// strict-mode failure other than an out-of-range rating falls back to the
/// first integer after the token `Rating`.
pub fn parse_rating_response(
    text: &str,
    lenient: bool,
) -> Result<(LikertRating, String), ParseError> {
    match parse_strict(text) {
        Ok(v) => Ok(v),
        Err(e @ ParseError::RatingOutOfRange(_)) => Err(e),
        Err(e) if !lenient => Err(e),
        Err(_) => parse_lenient(text),
    }
}

/// The response format the rating parser accepts.
pub fn format_rating_response(rating: LikertRating, reason: &str) -> String {
    format!("Rating: {rating}\nReason: {reason}")
}

/// First well-formed JSON object anywhere in `text`.
pub fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Extracts and validates `{"follow_ids": [...], "reason": "..."}`: exactly
/// `k` distinct ids, each naming a candidate.
pub fn parse_follow_response(
    text: &str,
    candidates: &[PeerObservation],
    k: usize,
) -> Result<(Vec<String>, String), ParseError> {
    let obj = first_json_object(text).ok_or(ParseError::NoObject)?;
    let ids: Vec<String> = obj
        .get("follow_ids")
        .and_then(Value::as_array)
        .ok_or(ParseError::MissingFollowIds)?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or(ParseError::MissingFollowIds)
        })
        .collect::<Result<_, _>>()?;
    if ids.len() != k {
        return Err(ParseError::WrongCount {
            expected: k,
            found: ids.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(ParseError::DuplicateId(id.clone()));
        }
        if !candidates.iter().any(|c| &c.peer_id == id) {
            return Err(ParseError::UnknownId(id.clone()));
        }
    }
    let reason = obj
        .get("reason")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok((ids, reason))
}

//! Strict JSON reply contract: parse, validate, and on failure ask exactly
//! once more before giving up.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{ChatModel, ChatRequest};
use crate::prompts;

/// Strips a surrounding markdown code fence, if any.
fn unfence(reply: &str) -> &str {
    let t = reply.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses a reply as JSON, tolerating only a code fence around it.
pub fn parse_json(reply: &str) -> std::result::Result<Value, String> {
    serde_json::from_str(unfence(reply)).map_err(|e| format!("not valid JSON: {e}"))
}

/// Sends `request`; if the reply fails `validate`, sends one repair turn.
pub fn ask<T>(
    chat: &dyn ChatModel,
    request: ChatRequest,
    contract: &'static str,
    validate: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<T> {
    let first = chat.chat(&request)?;
    let detail = match validate(&first) {
        Ok(v) => return Ok(v),
        Err(d) => d,
    };
    tracing::debug!(contract, %detail, "repairing reply");
    let retry = request.followed_by(&first, prompts::repair_message(&detail));
    let second = chat.chat(&retry)?;
    validate(&second).map_err(|d| Error::contract(contract, d))
}

/// Validator for a JSON array of non-empty strings.
pub fn string_array(reply: &str) -> std::result::Result<Vec<String>, String> {
    let v = parse_json(reply)?;
    let arr = v.as_array().ok_or("expected a JSON array")?;
    arr.iter()
        .map(|x| {
            x.as_str()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| "array items must be non-empty strings".to_string())
        })
        .collect()
}

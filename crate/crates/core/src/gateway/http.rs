//! JSON-over-HTTP backend in the dialect of common open inference servers.
//!
//! | capability | route                  |
//! |------------|------------------------|
//! | chat       | `/v1/chat/completions` |
//! | embed      | `/v1/embeddings`       |
//! | rerank     | `/v1/rerank`           |
//! | score      | `/v1/completions` with `echo` and `logprobs` |

use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{Backend, ChatRequest, TokenScore};
use crate::error::{Error, Result};

/// Number of alternatives requested per scored token.
const TOP_LOGPROBS: u32 = 5;

pub struct HttpBackend {
    base: String,
    token: Option<String>,
    client: Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            token,
            client,
        })
    }

    fn post(&self, route: &str, body: &Value) -> Result<Value> {
        let mut req = self.client.post(format!("{}{}", self.base, route)).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Error::Transport {
            message: e.to_string(),
            transient: true,
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport {
            message: e.to_string(),
            transient: true,
        })?;
        if !status.is_success() {
            return Err(Error::HttpStatus {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::MalformedResponse(format!("{route}: invalid JSON body: {e}")))
    }
}

fn malformed(route: &str, what: &str) -> Error {
    Error::MalformedResponse(format!("{route}: {what}"))
}

impl Backend for HttpBackend {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String> {
        let route = "/v1/chat/completions";
        let mut body = json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let v = self.post(route, &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed(route, "missing choices[0].message.content"))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let route = "/v1/embeddings";
        let v = self.post(route, &json!({ "model": model, "input": texts }))?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(route, "missing data array"))?;
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(route, "missing embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed(route, "non-numeric embedding")))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((index, emb));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, e)| e).collect())
    }

    fn rerank(&self, model: &str, query: &str, passage: &str) -> Result<f64> {
        let route = "/v1/rerank";
        let v = self.post(
            route,
            &json!({ "model": model, "query": query, "documents": [passage] }),
        )?;
        v.pointer("/results/0/relevance_score")
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed(route, "missing results[0].relevance_score"))
    }

    fn score(&self, model: &str, prompt: &str, completion: &str) -> Result<Vec<TokenScore>> {
        let route = "/v1/completions";
        let full = format!("{prompt}{completion}");
        let v = self.post(
            route,
            &json!({
                "model": model,
                "prompt": full,
                "max_tokens": 1,
                "temperature": 0.0,
                "echo": true,
                "logprobs": TOP_LOGPROBS,
            }),
        )?;
        let lp = v
            .pointer("/choices/0/logprobs")
            .filter(|x| !x.is_null())
            .ok_or_else(|| malformed(route, "provider did not return logprobs"))?;
        let tokens = lp.get("tokens").and_then(Value::as_array);
        let logprobs = lp.get("token_logprobs").and_then(Value::as_array);
        let offsets = lp.get("text_offset").and_then(Value::as_array);
        let (Some(tokens), Some(logprobs), Some(offsets)) = (tokens, logprobs, offsets) else {
            return Err(malformed(route, "logprobs lack tokens/token_logprobs/text_offset"));
        };
        let tops = lp.get("top_logprobs").and_then(Value::as_array);

        // Offsets are character positions into the echoed text. Tokens that
        // start inside the completion are kept; the one generated token
        // starts at or past the end and is dropped.
        let start = prompt.chars().count() as u64;
        let end = full.chars().count() as u64;
        let mut out = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            let off = offsets
                .get(i)
                .and_then(Value::as_u64)
                .ok_or_else(|| malformed(route, "bad text_offset"))?;
            if off < start || off >= end {
                continue;
            }
            let text = tok.as_str().unwrap_or_default().to_string();
            let logprob = logprobs
                .get(i)
                .and_then(Value::as_f64)
                .ok_or_else(|| malformed(route, "completion token without logprob"))?;
            let alternatives = tops.and_then(|t| t.get(i)).and_then(Value::as_object).map(|m| {
                let mut alts: Vec<(String, f64)> = m
                    .iter()
                    .filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)))
                    .collect();
                alts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                alts
            });
            out.push(TokenScore {
                token_text: text,
                logprob: logprob.min(0.0),
                top_alternatives: alternatives,
            });
        }
        if out.is_empty() {
            return Err(malformed(route, "no completion tokens in echoed logprobs"));
        }
        Ok(out)
    }
}

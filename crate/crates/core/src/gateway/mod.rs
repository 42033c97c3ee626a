//! Uniform client layer over chat, embedding, reranking and token scoring.
//!
//! A [`Provider`] pairs a declared [`ProviderProfile`] with a transport
//! [`Backend`]. The provider enforces capabilities before any I/O, applies the
//! retry policy, bounds in-flight requests, and consults the content-addressed
//! response cache. Metric code depends only on the capability traits
//! ([`ChatModel`], [`Embedder`], [`Reranker`], [`TokenScorer`]) so tests can
//! substitute scripted doubles.

mod cache;
mod http;
pub mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::MockBackend;

use crate::error::{Error, Result};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Chat,
    Embed,
    Rerank,
    Score,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Chat => "chat",
            Capability::Embed => "embed",
            Capability::Rerank => "rerank",
            Capability::Score => "score",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Decoding defaults for answer generation.
pub const GENERATION_TEMPERATURE: f64 = 0.1;
pub const GENERATION_TOP_P: f64 = 0.9;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the server; distinguishes resamples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// A single-turn generation request with the default decoding parameters.
    pub fn generation(prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature: GENERATION_TEMPERATURE,
            top_p: GENERATION_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    /// A single-turn evaluator request: greedy decoding.
    pub fn judge(prompt: impl Into<String>) -> Self {
        Self {
            temperature: 0.0,
            ..Self::generation(prompt)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Appends an assistant turn and a follow-up user turn.
    pub fn followed_by(mut self, assistant: &str, user: impl Into<String>) -> Self {
        self.messages.push(ChatMessage {
            role: Role::Assistant,
            content: assistant.to_string(),
        });
        self.messages.push(ChatMessage {
            role: Role::User,
            content: user.into(),
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::precondition("chat request has no messages"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::precondition("temperature must be >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::precondition("top_p must be in (0, 1]"));
        }
        if self.max_tokens == 0 {
            return Err(Error::precondition("max_tokens must be positive"));
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

/// Log-probability of one forced-completion token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_alternatives: Option<Vec<(String, f64)>>,
}

impl TokenScore {
    pub fn new(token_text: impl Into<String>, logprob: f64) -> Self {
        Self {
            token_text: token_text.into(),
            logprob,
            top_alternatives: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.logprob.is_nan() || self.logprob > 0.0 {
            return Err(Error::MalformedResponse(format!(
                "token `{}` has logprob {} > 0",
                self.token_text, self.logprob
            )));
        }
        if let Some(alts) = &self.top_alternatives {
            if alts.windows(2).any(|w| w[0].1 < w[1].1) {
                return Err(Error::MalformedResponse(
                    "top alternatives not sorted by descending logprob".into(),
                ));
            }
        }
        Ok(())
    }
}

pub trait ChatModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<String>;
}

pub trait Embedder: Send + Sync {
    fn embedder_id(&self) -> &str;
    /// One unit vector per input, all the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = self.embed(&[text.to_string()])?;
        v.pop()
            .ok_or_else(|| Error::MalformedResponse("empty embedding batch".into()))
    }
}

pub trait Reranker: Send + Sync {
    /// Raw cross-encoder relevance of `passage` to `query`.
    fn rerank(&self, query: &str, passage: &str) -> Result<f64>;
}

pub trait TokenScorer: Send + Sync {
    /// Teacher-forced logprobs of `completion` given `prompt`, completion tokens only.
    fn score_completion(&self, prompt: &str, completion: &str) -> Result<Vec<TokenScore>>;
}

/// One attempt against a model server. Capability checks, retries and caching
/// live in [`Provider`].
pub trait Backend: Send + Sync {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String> {
        let _ = (model, request);
        Err(unsupported("chat"))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let _ = (model, texts);
        Err(unsupported("embed"))
    }

    fn rerank(&self, model: &str, query: &str, passage: &str) -> Result<f64> {
        let _ = (model, query, passage);
        Err(unsupported("rerank"))
    }

    fn score(&self, model: &str, prompt: &str, completion: &str) -> Result<Vec<TokenScore>> {
        let _ = (model, prompt, completion);
        Err(unsupported("score"))
    }
}

fn unsupported(what: &str) -> Error {
    Error::MalformedResponse(format!("backend does not implement {what}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis((self.initial_backoff_ms as f64 * factor) as u64)
    }
}

fn default_in_flight() -> usize {
    8
}

/// Registry entry describing one provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    /// `http(s)://…` for a server, `mock://<seed>[?dim=N]` for the offline backend.
    pub endpoint_url: String,
    pub model_id: String,
    pub capabilities: BTreeSet<Capability>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl ProviderProfile {
    pub fn new(endpoint_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            capabilities: BTreeSet::new(),
            auth_env: None,
            retry: RetryPolicy::default(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn with_capabilities(mut self, caps: impl IntoIterator<Item = Capability>) -> Self {
        self.capabilities.extend(caps);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.cv.wait(used).unwrap();
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

pub struct Provider {
    name: String,
    profile: ProviderProfile,
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    calls: AtomicU64,
    in_flight: InFlight,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("name", &self.name)
            .field("profile", &self.profile)
            .field("calls", &self.calls())
            .finish()
    }
}

impl Provider {
    pub fn new(name: impl Into<String>, profile: ProviderProfile, backend: Arc<dyn Backend>) -> Self {
        let in_flight = InFlight::new(profile.max_in_flight);
        Self {
            name: name.into(),
            profile,
            backend,
            cache: None,
            calls: AtomicU64::new(0),
            in_flight,
        }
    }

    /// Builds the backend named by the profile's endpoint scheme.
    pub fn from_profile(name: impl Into<String>, profile: ProviderProfile) -> Result<Self> {
        let name = name.into();
        let url = profile.endpoint_url.as_str();
        let backend: Arc<dyn Backend> = if let Some(rest) = url.strip_prefix("mock://") {
            Arc::new(MockBackend::from_spec(rest)?)
        } else if url.starts_with("http://") || url.starts_with("https://") {
            let token = match &profile.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Error::Config(format!(
                        "provider `{name}`: environment variable `{var}` is not set"
                    ))
                })?),
                None => None,
            };
            Arc::new(HttpBackend::new(url, token)?)
        } else {
            return Err(Error::Config(format!(
                "provider `{name}`: unsupported endpoint `{url}`"
            )));
        };
        Ok(Self::new(name, profile, backend))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    pub fn has(&self, cap: Capability) -> bool {
        self.profile.capabilities.contains(&cap)
    }

    /// Number of backend attempts made so far (cache hits excluded).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn require(&self, cap: Capability) -> Result<()> {
        if self.has(cap) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing {
                provider: self.name.clone(),
                capability: cap.to_string(),
            })
        }
    }

    /// Capability check, cache lookup, then the retry loop.
    fn invoke<T, F>(&self, cap: Capability, request: serde_json::Value, mut call: F) -> Result<T>
    where
        T: Serialize + for<'de> Deserialize<'de>,
        F: FnMut(&dyn Backend) -> Result<T>,
    {
        self.require(cap)?;
        let key = self.cache.as_ref().map(|_| {
            ResponseCache::key(&json!({
                "capability": cap,
                "model_id": self.profile.model_id,
                "request": request,
            }))
        });
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key)? {
                return Ok(serde_json::from_value(hit)?);
            }
        }

        let policy = &self.profile.retry;
        let max = policy.max_attempts.max(1);
        let mut attempt = 0;
        let value = loop {
            attempt += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            let outcome = {
                let _slot = self.in_flight.acquire();
                call(self.backend.as_ref())
            };
            match outcome {
                Ok(v) => break v,
                Err(e) if e.is_transient() && attempt < max => {
                    tracing::warn!(provider = %self.name, attempt, error = %e, "retrying");
                    std::thread::sleep(policy.delay(attempt));
                }
                Err(e) if e.is_transient() => {
                    return Err(Error::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        };

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &serde_json::to_value(&value)?)?;
        }
        Ok(value)
    }
}

impl ChatModel for Provider {
    fn model_id(&self) -> &str {
        &self.profile.model_id
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        self.require(Capability::Chat)?;
        request.validate()?;
        let model = self.profile.model_id.clone();
        self.invoke(Capability::Chat, serde_json::to_value(request)?, |b| {
            b.chat(&model, request)
        })
    }
}

impl Embedder for Provider {
    fn embedder_id(&self) -> &str {
        &self.profile.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.require(Capability::Embed)?;
        if texts.is_empty() {
            return Err(Error::precondition("embedding batch is empty"));
        }
        let model = self.profile.model_id.clone();
        let raw: Vec<Vec<f64>> =
            self.invoke(Capability::Embed, json!({ "input": texts }), |b| {
                b.embed(&model, texts)
            })?;
        if raw.len() != texts.len() {
            return Err(Error::MalformedResponse(format!(
                "{} embeddings for {} inputs",
                raw.len(),
                texts.len()
            )));
        }
        let dim = raw[0].len();
        raw.into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                vector::normalized(&v)
                    .ok_or_else(|| Error::MalformedResponse("zero-norm embedding".into()))
            })
            .collect()
    }
}

impl Reranker for Provider {
    fn rerank(&self, query: &str, passage: &str) -> Result<f64> {
        self.require(Capability::Rerank)?;
        if query.trim().is_empty() || passage.trim().is_empty() {
            return Err(Error::precondition("rerank query and passage must be non-empty"));
        }
        let model = self.profile.model_id.clone();
        let score: f64 = self.invoke(
            Capability::Rerank,
            json!({ "query": query, "passage": passage }),
            |b| b.rerank(&model, query, passage),
        )?;
        if !score.is_finite() {
            return Err(Error::MalformedResponse("non-finite rerank score".into()));
        }
        Ok(score)
    }
}

impl TokenScorer for Provider {
    fn score_completion(&self, prompt: &str, completion: &str) -> Result<Vec<TokenScore>> {
        self.require(Capability::Score)?;
        if completion.is_empty() {
            return Err(Error::precondition("completion is empty"));
        }
        let model = self.profile.model_id.clone();
        let scores: Vec<TokenScore> = self.invoke(
            Capability::Score,
            json!({ "prompt": prompt, "completion": completion }),
            |b| b.score(&model, prompt, completion),
        )?;
        if scores.is_empty() {
            return Err(Error::MalformedResponse("scorer returned zero tokens".into()));
        }
        for s in &scores {
            s.check()?;
        }
        Ok(scores)
    }
}

/// Named providers built from the run configuration.
#[derive(Debug, Default, Clone)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, Arc<Provider>>,
}

impl ProviderRegistry {
    pub fn build(
        profiles: &BTreeMap<String, ProviderProfile>,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let mut providers = BTreeMap::new();
        for (name, profile) in profiles {
            let mut p = Provider::from_profile(name.clone(), profile.clone())?;
            if let Some(dir) = cache_dir {
                p = p.with_cache(ResponseCache::open(dir)?);
            }
            providers.insert(name.clone(), Arc::new(p));
        }
        Ok(Self { providers })
    }

    pub fn insert(&mut self, provider: Provider) {
        self.providers
            .insert(provider.name().to_string(), Arc::new(provider));
    }

    pub fn get(&self, name: &str) -> Result<Arc<Provider>> {
        self.providers.get(name).cloned().ok_or_else(|| Error::Unknown {
            kind: "provider",
            name: name.to_string(),
        })
    }

    /// Looks up a provider and checks it declares `cap`.
    pub fn require(&self, name: &str, cap: Capability) -> Result<Arc<Provider>> {
        let p = self.get(name)?;
        if !p.has(cap) {
            return Err(Error::Config(format!(
                "provider `{name}` lacks the `{cap}` capability"
            )));
        }
        Ok(p)
    }

    pub fn total_calls(&self) -> u64 {
        self.providers.values().map(|p| p.calls()).sum()
    }

    pub fn cache_dirs(&self) -> Vec<PathBuf> {
        self.providers
            .values()
            .filter_map(|p| p.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .collect()
    }
}

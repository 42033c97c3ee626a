//! Offline backend whose every reply is a pure function of (seed, request).
//!
//! Chat prompts are recognised by their template marker and answered with
//! simple rules: pass-through sentence splitting for decomposition, a
//! gazetteer for detail extraction, an evidence-substring judge, word-order
//! rotation for paraphrases, lexicon substitution for masking and enumerated
//! questions for inverse generation. Embeddings are hashed term counts, the
//! reranker counts shared query words, and the scorer rewards completion
//! words that already appear in the prompt.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use super::{Backend, ChatRequest, Role, TokenScore};
use crate::dataset::{builtin_roster, hazard_lexicon, DatasetCatalog, ANSWER_PROMPT_MARKER};
use crate::error::{Error, Result};
use crate::prompts;
use crate::text;

pub const DEFAULT_MOCK_DIM: usize = 256;

/// FNV-1a over a sequence of byte strings, each terminated by 0xff.
pub fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in p.iter().chain(std::iter::once(&0xffu8)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    replies: Vec<(String, String)>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: DEFAULT_MOCK_DIM,
            replies: Vec::new(),
        }
    }

    /// Parses the part after `mock://`, e.g. `7` or `7?dim=64`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let (seed, query) = spec.split_once('?').unwrap_or((spec, ""));
        let seed = seed
            .trim_end_matches('/')
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("mock endpoint needs a numeric seed, got `{spec}`")))?;
        let mut m = Self::new(seed);
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            match pair.split_once('=') {
                Some(("dim", v)) => {
                    m.dim = v
                        .parse()
                        .ok()
                        .filter(|d| *d > 0)
                        .ok_or_else(|| Error::Config(format!("bad mock dim `{v}`")))?
                }
                _ => return Err(Error::Config(format!("unknown mock option `{pair}`"))),
            }
        }
        Ok(m)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    /// Fixed reply for any prompt containing `pattern`; checked before the rules.
    pub fn with_reply(mut self, pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies.push((pattern.into(), reply.into()));
        self
    }

    fn h(&self, parts: &[&[u8]]) -> u64 {
        let seed = self.seed.to_le_bytes();
        let mut all: Vec<&[u8]> = vec![&seed];
        all.extend_from_slice(parts);
        fnv(&all)
    }
}

impl Backend for MockBackend {
    fn chat(&self, _model: &str, request: &ChatRequest) -> Result<String> {
        let task = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        if let Some((_, reply)) = self.replies.iter().find(|(p, _)| task.contains(p.as_str())) {
            return Ok(reply.clone());
        }
        let user_turns = request.messages.iter().filter(|m| m.role == Role::User).count();
        let sample = request.seed.unwrap_or(0);
        Ok(if task.contains(ANSWER_PROMPT_MARKER) {
            self.answer(task)
        } else if task.starts_with(prompts::DECOMPOSE_MARKER) {
            sentences_json(prompts::section_after(task, "Answer:\n").unwrap_or(""))
        } else if task.starts_with(prompts::DETAILS_MARKER) {
            details(prompts::section_after(task, "Claim: ").unwrap_or("").trim()).to_string()
        } else if task.starts_with(prompts::JUDGE_MARKER) {
            self.judge(task, sample)
        } else if task.starts_with(prompts::PARAPHRASE_MARKER) {
            paraphrase(prompts::section_after(task, "Question: ").unwrap_or(""), user_turns)
        } else if task.starts_with(prompts::MASK_MARKER) {
            mask(prompts::section_after(task, "Answer: ").unwrap_or("").trim())
        } else if task.starts_with(prompts::INVERSE_MARKER) {
            inverse(task)
        } else if task.starts_with(prompts::CONTEXT_CLAIMS_MARKER) {
            sentences_json(prompts::section_after(task, "Document:\n").unwrap_or(""))
        } else {
            "OK".to_string()
        })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn rerank(&self, _model: &str, query: &str, passage: &str) -> Result<f64> {
        Ok(overlap_count(query, passage) as f64)
    }

    fn score(&self, _model: &str, prompt: &str, completion: &str) -> Result<Vec<TokenScore>> {
        let context: BTreeSet<String> = text::tokens(prompt).into_iter().collect();
        let out: Vec<TokenScore> = scorer_pieces(completion)
            .into_iter()
            .map(|piece| {
                let key = text::tokens(piece).join(" ");
                let base = if !key.is_empty() && key.split(' ').all(|t| context.contains(t)) {
                    -0.05
                } else {
                    -1.5
                };
                let jitter = (self.h(&[key.as_bytes()]) % 100) as f64 / 1000.0;
                let lp = base - jitter;
                let rest = 1.0 - lp.exp();
                let mut alts = vec![
                    (piece.to_string(), lp),
                    ("<alt-1>".to_string(), (rest * 0.5).ln()),
                    ("<alt-2>".to_string(), (rest * 0.25).ln()),
                ];
                alts.sort_by(|a, b| b.1.total_cmp(&a.1));
                TokenScore {
                    token_text: piece.to_string(),
                    logprob: lp,
                    top_alternatives: Some(alts),
                }
            })
            .collect();
        Ok(out)
    }
}

/// Whitespace-led pieces whose concatenation is the input.
pub fn scorer_pieces(s: &str) -> Vec<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\S+").unwrap())
        .find_iter(s)
        .map(|m| m.as_str())
        .collect()
}

/// Number of distinct query tokens that also occur in the passage.
pub fn overlap_count(query: &str, passage: &str) -> usize {
    let q: BTreeSet<String> = text::tokens(query).into_iter().collect();
    let p: BTreeSet<String> = text::tokens(passage).into_iter().collect();
    q.intersection(&p).count()
}

impl MockBackend {
    fn embed_one(&self, t: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let toks = text::tokens(t);
        if toks.is_empty() {
            v[(self.h(&[t.as_bytes()]) % self.dim as u64) as usize] = 1.0;
            return v;
        }
        for tok in toks {
            v[(self.h(&[tok.as_bytes()]) % self.dim as u64) as usize] += 1.0;
        }
        v
    }

    fn answer(&self, prompt: &str) -> String {
        let body = prompts::section_after(prompt, ANSWER_PROMPT_MARKER).unwrap_or("");
        let mut abstracts: Vec<String> = Vec::new();
        let mut context = "";
        let mut question = "";
        for line in body.lines() {
            if let Some(c) = line.strip_prefix("Context: ") {
                context = c.trim();
            } else if let Some(q) = line.strip_prefix("Question: ") {
                question = q.trim();
            } else if context.is_empty() {
                let l = line.trim();
                if l.len() > 3 && l.as_bytes()[0].is_ascii_digit() && &l[1..3] == ". " {
                    abstracts.push(l[3..].to_string());
                }
            }
        }
        let fields: BTreeMap<&str, &str> = context
            .split("; ")
            .filter_map(|kv| kv.split_once(": "))
            .collect();
        let profession = fields
            .get("Profession")
            .map(|p| p.split(" (").next().unwrap_or(p))
            .unwrap_or("practitioner");
        let hazard = fields.get("Hazard").copied().unwrap_or("the hazard");
        let location = fields.get("Location").copied().unwrap_or("the region");
        let timeline = fields.get("Timeline").copied().unwrap_or("the coming years");

        let h = self.h(&[question.as_bytes(), context.as_bytes()]);
        let n_points = 3 + (h % 3) as usize;
        let mut lines = vec![format!(
            "For a {profession} concerned with {hazard} in {location}, the retrieved studies point to the following."
        )];
        let offset = (h >> 8) as usize;
        for i in 0..n_points - 1 {
            let src = abstracts
                .get((offset + i) % abstracts.len().max(1))
                .map(|a| text::split_sentences(a).into_iter().next().unwrap_or_default())
                .unwrap_or_default();
            lines.push(format!("{}. {}", i + 1, if src.is_empty() { "Evidence is limited." } else { &src }));
        }
        lines.push(format!(
            "{n_points}. Over the next {timeline}, plans in {location} should budget for {hazard} damage to critical assets."
        ));
        lines.push(format!(
            "Confidence: {}% because the points follow the supplied abstracts.",
            70 + h % 25
        ));
        lines.join("\n")
    }

    fn judge(&self, prompt: &str, sample: u64) -> String {
        let inputs = prompts::section_after(prompt, "\nINPUTS\n").unwrap_or("");
        let claim = between(inputs, "Claim: ", "\nSpecific Details to Check:\n").trim();
        let details_raw = between(inputs, "Specific Details to Check:\n", "\nEvidence Passages: ");
        let evidence = prompts::section_after(inputs, "\nEvidence Passages: ")
            .unwrap_or("")
            .to_lowercase();
        let details: Value = serde_json::from_str(details_raw.trim()).unwrap_or(Value::Null);

        let mut out = serde_json::Map::new();
        out.insert("claim".into(), json!(claim));
        for dim in ["hazard", "location", "timeline", "intensity"] {
            let detail = details.get(dim).and_then(Value::as_str).unwrap_or("").trim();
            let (label, why) = if detail.is_empty() {
                ("N/A", format!("The claim does not mention a {dim}."))
            } else {
                let supported = evidence.contains(&detail.to_lowercase())
                    || (dim == "location" && state_in_evidence(detail, &evidence));
                let flip = self.h(&[claim.as_bytes(), dim.as_bytes(), &sample.to_le_bytes()]).is_multiple_of(5);
                let yes = supported != flip;
                if yes {
                    ("yes", format!("The evidence discusses {detail}."))
                } else {
                    ("no", format!("The evidence does not confirm {detail}."))
                }
            };
            out.insert(dim.into(), json!(label));
            out.insert(format!("{dim}_reasoning"), json!(why));
        }
        Value::Object(out).to_string()
    }
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = s.find(start) else { return "" };
    let rest = &s[i + start.len()..];
    rest.find(end).map_or(rest, |j| &rest[..j])
}

/// State-level agreement: the two-letter code after the comma appears as a
/// token in the (lower-cased) evidence.
fn state_in_evidence(detail: &str, evidence_lower: &str) -> bool {
    let Some((_, state)) = detail.rsplit_once(',') else {
        return false;
    };
    let state = state.trim().to_lowercase();
    state.len() == 2 && text::tokens(evidence_lower).contains(&state)
}

fn sentences_json(block: &str) -> String {
    Value::from(text::split_sentences(block)).to_string()
}

fn paraphrase(question: &str, turns: usize) -> String {
    let q = question.lines().next().unwrap_or("").trim();
    let (core, mark) = match q.strip_suffix('?') {
        Some(c) => (c, "?"),
        None => (q, ""),
    };
    let mut words: Vec<&str> = core.split_whitespace().collect();
    if !words.is_empty() {
        let k = turns % words.len();
        words.rotate_left(k);
    }
    format!("{}{}", words.join(" "), mark)
}

fn gazetteer() -> &'static [(&'static str, Regex)] {
    static G: OnceLock<Vec<(&'static str, Regex)>> = OnceLock::new();
    G.get_or_init(|| {
        let hazards = hazard_lexicon()
            .iter()
            .map(|t| regex::escape(t))
            .collect::<Vec<_>>()
            .join("|");
        vec![
            ("hazard", Regex::new(&format!(r"(?i)\b(?:{hazards})\b")).unwrap()),
            (
                "location",
                Regex::new(r"\b[A-Z][A-Za-z.'-]*(?: [A-Z][A-Za-z.'-]*)*, [A-Z]{2}\b").unwrap(),
            ),
            (
                "timeline",
                Regex::new(r"(?i)\b\d+(?:\s*(?:-|to)\s*\d+)?\s+(?:years?|decades?)\b|\b(?:19|20)\d{2}s?\b").unwrap(),
            ),
            (
                "intensity",
                Regex::new(r"(?i)\bcategory\s+[1-5]\b|\b\d+(?:\.\d+)?\s*(?:%|percent\b|°[FC]|degrees\b|mph\b|inches\b|feet\b|ft\b|mm\b|kv\b|mw\b)").unwrap(),
            ),
        ]
    })
}

/// Rule-based detail extraction; every value is a verbatim slice of `claim`.
pub fn details(claim: &str) -> Value {
    let mut out = serde_json::Map::new();
    for (dim, re) in gazetteer() {
        out.insert(
            dim.to_string(),
            re.find(claim).map_or(Value::Null, |m| json!(m.as_str())),
        );
    }
    Value::Object(out)
}

/// Lexicon entries for the masking rule, longest first.
fn mask_lexicon() -> &'static (Regex, BTreeMap<String, &'static str>) {
    static L: OnceLock<(Regex, BTreeMap<String, &'static str>)> = OnceLock::new();
    L.get_or_init(|| {
        let mut map: BTreeMap<String, &'static str> = BTreeMap::new();
        for t in hazard_lexicon() {
            map.insert(t.to_string(), "[HAZARD]");
        }
        for e in builtin_roster() {
            let p = e.profession.to_lowercase();
            map.insert(format!("{p}s"), "[PROFESSION]");
            map.insert(p, "[PROFESSION]");
        }
        for g in ["engineer", "planner", "manager", "operator", "inspector"] {
            map.insert(format!("{g}s"), "[PROFESSION]");
            map.insert(g.to_string(), "[PROFESSION]");
        }
        for c in prompts::CONCERN_EXAMPLES {
            map.insert(c.to_string(), "[CONCERN]");
        }
        for items in DatasetCatalog::builtin().infrastructure.values() {
            for i in items {
                map.insert(i.to_lowercase(), "[INFRASTRUCTURE]");
            }
        }
        let mut terms: Vec<&String> = map.keys().collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alt = terms.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|");
        (Regex::new(&format!(r"(?i)\b(?:{alt})\b")).unwrap(), map)
    })
}

/// Rule-based masking: replaces lexicon terms with their placeholder.
pub fn mask(answer: &str) -> String {
    let (re, map) = mask_lexicon();
    re.replace_all(answer, |c: &regex::Captures| {
        map.get(&c[0].to_lowercase()).copied().unwrap_or("[CONCERN]").to_string()
    })
    .into_owned()
}

fn inverse(prompt: &str) -> String {
    static N: OnceLock<Regex> = OnceLock::new();
    let n = N
        .get_or_init(|| Regex::new(r"Generate exactly (\d+) distinct").unwrap())
        .captures(prompt)
        .and_then(|c| c[1].parse::<usize>().ok())
        .unwrap_or(5);
    let answer = prompts::section_after(prompt, "Answer:\n").unwrap_or("");
    let sentences = text::split_sentences(answer);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let src = sentences.get(i % sentences.len().max(1)).map_or("", String::as_str);
        let words: Vec<&str> = text::words(src).into_iter().take(10).collect();
        let mut q = format!("What should be known about {}?", words.join(" ").to_lowercase());
        if !seen.insert(q.clone()) {
            q = format!("{} (aspect {})", q.trim_end_matches('?'), i + 1) + "?";
            seen.insert(q.clone());
        }
        out.push(q);
    }
    Value::from(out).to_string()
}

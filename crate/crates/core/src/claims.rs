//! Atomic claims: answer decomposition, detail extraction, and unique
//! context claims with embedding-based de-duplication.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::answer::StructuredAnswer;
use crate::contract;
use crate::error::{Error, Result};
use crate::gateway::{ChatModel, ChatRequest, Embedder};
use crate::prompts;
use crate::vector;

/// Cosine at or above which a context claim counts as a duplicate.
pub const DEDUP_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimOrigin {
    Answer,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicClaim {
    pub claim_id: String,
    pub text: String,
    pub origin: ClaimOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecificDetails {
    pub hazard: Option<String>,
    pub location: Option<String>,
    pub timeline: Option<String>,
    pub intensity: Option<String>,
}

/// Splits an answer into atomic claims via the chat model.
pub fn decompose_answer(
    answer: &StructuredAnswer,
    answer_id: &str,
    chat: &dyn ChatModel,
) -> Result<Vec<AtomicClaim>> {
    if answer.is_empty() {
        return Err(Error::precondition("answer has no intro and no segments"));
    }
    let prompt = prompts::fill(prompts::DECOMPOSE_TEMPLATE, &[("answer", &answer.render())]);
    let texts = contract::ask(chat, ChatRequest::judge(prompt), "decomposition", |r| {
        let v = contract::string_array(r)?;
        if v.is_empty() {
            Err("expected at least one claim".into())
        } else {
            Ok(v)
        }
    })?;
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| AtomicClaim {
            claim_id: format!("{answer_id}-c{}", i + 1),
            text,
            origin: ClaimOrigin::Answer,
            source_doc_id: None,
        })
        .collect())
}

fn parse_details(reply: &str) -> std::result::Result<SpecificDetails, String> {
    let v = contract::parse_json(reply)?;
    let obj = v.as_object().ok_or("expected a JSON object")?;
    let field = |k: &str| -> std::result::Result<Option<String>, String> {
        match obj.get(k) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.trim().to_string())),
            Some(_) => Err(format!("`{k}` must be a string or null")),
        }
    };
    Ok(SpecificDetails {
        hazard: field("hazard")?,
        location: field("location")?,
        timeline: field("timeline")?,
        intensity: field("intensity")?,
    })
}

/// Extracts the hazard, location, timeline and intensity mentions of a claim.
pub fn extract_details(claim: &AtomicClaim, chat: &dyn ChatModel) -> Result<SpecificDetails> {
    if claim.text.trim().is_empty() {
        return Err(Error::precondition("claim text is empty"));
    }
    let prompt = prompts::fill(prompts::DETAILS_TEMPLATE, &[("claim", claim.text.trim())]);
    contract::ask(chat, ChatRequest::judge(prompt), "detail extraction", parse_details)
}

/// Indices of the items kept by first-seen-wins de-duplication.
pub fn dedup_indices(embeddings: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, v) in embeddings.iter().enumerate() {
        if kept
            .iter()
            .all(|&k| vector::cosine(&embeddings[k], v) < threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Unique claims stated by the retrieved documents, in document order.
pub fn extract_context_claims(
    docs: &[(&str, &str)],
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
) -> Result<Vec<AtomicClaim>> {
    if docs.is_empty() {
        return Err(Error::precondition("no documents to extract claims from"));
    }
    let per_doc: Vec<Vec<AtomicClaim>> = docs
        .par_iter()
        .map(|(doc_id, body)| {
            let prompt = prompts::fill(prompts::CONTEXT_CLAIMS_TEMPLATE, &[("document", body.trim())]);
            let texts = contract::ask(chat, ChatRequest::judge(prompt), "context claims", contract::string_array)?;
            Ok(texts
                .into_iter()
                .enumerate()
                .map(|(n, text)| AtomicClaim {
                    claim_id: format!("ctx-{doc_id}-{}", n + 1),
                    text,
                    origin: ClaimOrigin::Context,
                    source_doc_id: Some(doc_id.to_string()),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let candidates: Vec<AtomicClaim> = per_doc.into_iter().flatten().collect();
    if candidates.is_empty() {
        return Ok(candidates);
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let mut embeddings = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(64) {
        embeddings.extend(embedder.embed(chunk)?);
    }
    let keep = dedup_indices(&embeddings, DEDUP_THRESHOLD);
    let mut candidates: Vec<Option<AtomicClaim>> = candidates.into_iter().map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| candidates[i].take()).collect())
}

/// Per-answer claim files (`<answer_id>.jsonl`) reused across runs.
#[derive(Debug, Clone)]
pub struct ClaimCache {
    dir: PathBuf,
}

impl ClaimCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path(&self, answer_id: &str) -> PathBuf {
        self.dir.join(format!("{answer_id}.jsonl"))
    }

    pub fn load(&self, answer_id: &str) -> Result<Option<Vec<AtomicClaim>>> {
        let path = self.path(answer_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn store(&self, answer_id: &str, claims: &[AtomicClaim]) -> Result<()> {
        let mut buf = Vec::new();
        for c in claims {
            serde_json::to_writer(&mut buf, c)?;
            buf.write_all(b"\n").expect("writing to a Vec cannot fail");
        }
        write_atomic(&self.path(answer_id), &buf)
    }

    /// Cached claims for `answer_id`, computing and storing them on a miss.
    pub fn get_or_insert(
        &self,
        answer_id: &str,
        compute: impl FnOnce() -> Result<Vec<AtomicClaim>>,
    ) -> Result<Vec<AtomicClaim>> {
        if let Some(c) = self.load(answer_id)? {
            return Ok(c);
        }
        let claims = compute()?;
        self.store(answer_id, &claims)?;
        Ok(claims)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Capability, Provider, ProviderProfile};
    use proptest::prelude::*;

    fn mock(caps: &[Capability]) -> Provider {
        Provider::from_profile(
            "m",
            ProviderProfile::new("mock://5", "mock").with_capabilities(caps.iter().copied()),
        )
        .unwrap()
    }

    #[test]
    fn single_fact_segment_passes_through() {
        let chat = mock(&[Capability::Chat]);
        let a = crate::answer::parse_answer("1. Wildfires damage transmission lines in Kern County.");
        let c = decompose_answer(&a, "q1", &chat).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "Wildfires damage transmission lines in Kern County.");
        assert_eq!(c[0].claim_id, "q1-c1");
        assert_eq!(c[0].origin, ClaimOrigin::Answer);
    }

    #[test]
    fn two_segments_keep_order() {
        let chat = mock(&[Capability::Chat]);
        let a = StructuredAnswer::new("", vec!["First fact.".into(), "Second fact.".into()]);
        let c = decompose_answer(&a, "q", &chat).unwrap();
        assert_eq!(c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(), ["First fact.", "Second fact."]);
        assert!(decompose_answer(&StructuredAnswer::default(), "q", &chat).is_err());
    }

    #[test]
    fn gazetteer_details() {
        let chat = mock(&[Capability::Chat]);
        let claim = AtomicClaim {
            claim_id: "c".into(),
            text: "Heat waves in San Diego, CA strain substations.".into(),
            origin: ClaimOrigin::Answer,
            source_doc_id: None,
        };
        let d = extract_details(&claim, &chat).unwrap();
        assert_eq!(d.location.as_deref(), Some("San Diego, CA"));
        assert_eq!(d.hazard.as_deref(), Some("Heat waves"));
        assert!(d.timeline.is_none());
        assert!(claim.text.contains(d.location.as_deref().unwrap()));
        let empty = AtomicClaim { text: " ".into(), ..claim };
        assert!(extract_details(&empty, &chat).is_err());
    }

    #[test]
    fn detail_schema_violations() {
        assert!(parse_details("[]").is_err());
        assert!(parse_details(r#"{"hazard": 3}"#).is_err());
        let d = parse_details(r#"{"hazard": "", "location": null}"#).unwrap();
        assert_eq!(d, SpecificDetails::default());
    }

    #[test]
    fn identical_documents_collapse() {
        let p = mock(&[Capability::Chat, Capability::Embed]);
        let docs = [("a", "Grids fail in heat. Ports flood."), ("b", "Grids fail in heat. Ports flood.")];
        let c = extract_context_claims(&docs, &p, &p).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.source_doc_id.as_deref() == Some("a")));
        assert_eq!(c[0].claim_id, "ctx-a-1");
    }

    #[test]
    fn dedup_exact_duplicates() {
        // 10 claims over 7 orthogonal directions: 3 repeats.
        let basis = |i: usize| {
            let mut v = vec![0.0; 7];
            v[i] = 1.0;
            v
        };
        let embs: Vec<Vec<f64>> = [0, 1, 2, 0, 3, 4, 1, 5, 6, 2].iter().map(|&i| basis(i)).collect();
        assert_eq!(dedup_indices(&embs, DEDUP_THRESHOLD), vec![0, 1, 2, 4, 5, 7, 8]);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ClaimCache::open(dir.path()).unwrap();
        let claims = vec![AtomicClaim {
            claim_id: "x-c1".into(),
            text: "t".into(),
            origin: ClaimOrigin::Context,
            source_doc_id: Some("d".into()),
        }];
        assert!(cache.load("x").unwrap().is_none());
        let got = cache.get_or_insert("x", || Ok(claims.clone())).unwrap();
        assert_eq!(got, claims);
        let again = cache.get_or_insert("x", || panic!("should hit cache")).unwrap();
        assert_eq!(again, claims);
    }

    proptest! {
        #[test]
        fn dedup_idempotent(vs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 0..20)) {
            let once = dedup_indices(&vs, DEDUP_THRESHOLD);
            let kept: Vec<Vec<f64>> = once.iter().map(|&i| vs[i].clone()).collect();
            let twice = dedup_indices(&kept, DEDUP_THRESHOLD);
            prop_assert_eq!(twice, (0..kept.len()).collect::<Vec<_>>());
        }
    }
}

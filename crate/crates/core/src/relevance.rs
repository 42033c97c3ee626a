//! Masked answer relevance via inverse questions, and segment-level
//! leave-one-out attribution with answer reordering.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::answer::StructuredAnswer;
use crate::contract;
use crate::error::{Error, Result};
use crate::gateway::{ChatModel, ChatRequest, Embedder, Reranker};
use crate::prompts;
use crate::vector;

pub const MASK_PLACEHOLDERS: [&str; 4] = ["[HAZARD]", "[PROFESSION]", "[CONCERN]", "[INFRASTRUCTURE]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub surface: String,
    pub placeholder: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedAnswer {
    pub text: String,
    pub replacements: Vec<Replacement>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Za-z_ ]+)\]").unwrap())
}

/// Upper-cases placeholders and rejects any outside the allowed set.
fn validate_masked(reply: &str) -> std::result::Result<String, String> {
    let text = reply.trim();
    if text.is_empty() {
        return Err("masked answer is empty".into());
    }
    let mut bad = None;
    let out = placeholder_re().replace_all(text, |c: &regex::Captures| {
        let p = format!("[{}]", c[1].to_ascii_uppercase());
        if !MASK_PLACEHOLDERS.contains(&p.as_str()) {
            bad.get_or_insert_with(|| c[0].to_string());
        }
        p
    });
    match bad {
        Some(b) => Err(format!("placeholder {b} is not one of {}", MASK_PLACEHOLDERS.join(", "))),
        None => Ok(out.into_owned()),
    }
}

/// Longest-common-subsequence alignment of two token lists; returns the
/// unmatched hunks as (original range, masked range).
fn diff_hunks(a: &[&str], b: &[&str]) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut hunks = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut si, mut sj) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            if si < i || sj < j {
                hunks.push((si..i, sj..j));
            }
            i += 1;
            j += 1;
            si = i;
            sj = j;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            j += 1;
        } else {
            i += 1;
        }
    }
    if si < n || sj < m {
        hunks.push((si..n, sj..m));
    }
    hunks
}

/// Recovers (surface, placeholder) pairs by aligning the masked text with
/// the original at word level.
pub fn recover_replacements(original: &str, masked: &str) -> Vec<Replacement> {
    let a: Vec<&str> = original.split_whitespace().collect();
    let b: Vec<&str> = masked.split_whitespace().collect();
    let mut out: Vec<Replacement> = Vec::new();
    for (ra, rb) in diff_hunks(&a, &b) {
        let orig = a[ra].join(" ");
        let mask = b[rb].join(" ");
        let phs: Vec<regex::Match> = placeholder_re().find_iter(&mask).collect();
        if phs.is_empty() || orig.is_empty() {
            continue;
        }
        // literal text around and between placeholders
        let mut seps: Vec<&str> = Vec::with_capacity(phs.len() + 1);
        let mut last = 0;
        for p in &phs {
            seps.push(&mask[last..p.start()]);
            last = p.end();
        }
        seps.push(&mask[last..]);
        let mut rest = orig.as_str();
        rest = rest.strip_prefix(seps[0]).unwrap_or(rest);
        rest = rest.strip_suffix(seps[seps.len() - 1]).unwrap_or(rest);
        for (k, p) in phs.iter().enumerate() {
            let sep = seps[k + 1];
            let surface = if k + 1 == phs.len() || sep.is_empty() {
                std::mem::take(&mut rest)
            } else {
                match rest.find(sep) {
                    Some(pos) => {
                        let s = &rest[..pos];
                        rest = &rest[pos + sep.len()..];
                        s
                    }
                    None => std::mem::take(&mut rest),
                }
            };
            let surface = surface.trim();
            if !surface.is_empty() {
                let r = Replacement {
                    surface: surface.to_string(),
                    placeholder: p.as_str().to_string(),
                };
                if !out.contains(&r) {
                    out.push(r);
                }
            }
        }
    }
    out
}

/// Replaces any leftover whole-word occurrence of a recorded surface form.
fn remask(text: &str, replacements: &[Replacement]) -> String {
    let mut sorted: Vec<&Replacement> = replacements.iter().collect();
    sorted.sort_by_key(|r| std::cmp::Reverse(r.surface.len()));
    let mut out = text.to_string();
    for r in sorted {
        let pat = format!(r"(?i)(^|[^\w\[]){}($|[^\w\]])", regex::escape(&r.surface));
        let re = Regex::new(&pat).expect("escaped pattern");
        while re.is_match(&out) {
            out = re
                .replace_all(&out, |c: &regex::Captures| format!("{}{}{}", &c[1], r.placeholder, &c[2]))
                .into_owned();
        }
    }
    out
}

pub fn mask_answer(answer: &StructuredAnswer, chat: &dyn ChatModel) -> Result<MaskedAnswer> {
    if answer.is_empty() {
        return Err(Error::precondition("answer is empty"));
    }
    let rendered = answer.render();
    let prompt = prompts::fill(prompts::MASK_TEMPLATE, &[("answer", &rendered)]);
    let masked = contract::ask(chat, ChatRequest::judge(prompt), "masking", validate_masked)?;
    let replacements = recover_replacements(&rendered, &masked);
    let text = remask(&masked, &replacements);
    Ok(MaskedAnswer { text, replacements })
}

/// Exactly `n` questions the answer would respond to.
pub fn invert_questions(answer_text: &str, n: usize, chat: &dyn ChatModel) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::precondition("n must be at least 1"));
    }
    if answer_text.trim().is_empty() {
        return Err(Error::precondition("answer text is empty"));
    }
    let n_str = n.to_string();
    let prompt = prompts::fill(prompts::INVERSE_TEMPLATE, &[("n", &n_str), ("answer", answer_text.trim())]);
    contract::ask(chat, ChatRequest::judge(prompt), "inverse questions", |r| {
        let qs = contract::string_array(r)?;
        if qs.len() == n {
            Ok(qs)
        } else {
            Err(format!("expected {n} questions, got {}", qs.len()))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub score: f64,
    pub masked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_answer: Option<MaskedAnswer>,
    pub generated_questions: Vec<String>,
    pub similarities: Vec<f64>,
}

/// Mean cosine between `q` and each question generated from the answer.
/// With `masked`, questions are generated from the masked answer.
pub fn answer_relevance(
    q: &str,
    answer: &StructuredAnswer,
    n: usize,
    masked: bool,
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
) -> Result<RelevanceReport> {
    if q.trim().is_empty() {
        return Err(Error::precondition("question is empty"));
    }
    let masked_answer = if masked { Some(mask_answer(answer, chat)?) } else { None };
    let source = masked_answer
        .as_ref()
        .map_or_else(|| answer.render(), |m| m.text.clone());
    let questions = invert_questions(&source, n, chat)?;
    let mut batch = Vec::with_capacity(n + 1);
    batch.push(q.trim().to_string());
    batch.extend(questions.iter().cloned());
    let vecs = embedder.embed(&batch)?;
    let similarities: Vec<f64> = vecs[1..].iter().map(|v| vector::cosine(&vecs[0], v)).collect();
    let score = similarities.iter().sum::<f64>() / similarities.len() as f64;
    Ok(RelevanceReport {
        score,
        masked,
        masked_answer,
        generated_questions: questions,
        similarities,
    })
}

pub fn masked_relevance(
    q: &str,
    answer: &StructuredAnswer,
    n: usize,
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
) -> Result<f64> {
    answer_relevance(q, answer, n, true, chat, embedder).map(|r| r.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttribution {
    /// 0-based segment position in the original answer.
    pub segment_index: usize,
    pub delta: f64,
    pub full_score: f64,
}

/// Δᵢ = R(q, a) − R(q, a without segment i), one rerank call per render.
///
/// A render left empty by the removal (single segment, no intro) scores 0
/// without a call.
pub fn loo_attribution(q: &str, answer: &StructuredAnswer, reranker: &dyn Reranker) -> Result<Vec<SegmentAttribution>> {
    if answer.segments.is_empty() {
        return Err(Error::precondition("answer has no segments"));
    }
    let full_score = reranker.rerank(q, &answer.render())?;
    (0..answer.segments.len())
        .into_par_iter()
        .map(|i| {
            let reduced = answer.render_without(i);
            let r = if reduced.trim().is_empty() { 0.0 } else { reranker.rerank(q, &reduced)? };
            let delta = full_score - r;
            if !delta.is_finite() {
                return Err(Error::Invariant(format!("non-finite delta for segment {i}")));
            }
            Ok(SegmentAttribution {
                segment_index: i,
                delta,
                full_score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedAnswer {
    /// 0-based original indices in their new order.
    pub order: Vec<usize>,
    pub changed: bool,
    pub full_score: f64,
}

impl RerankedAnswer {
    pub fn apply(&self, answer: &StructuredAnswer) -> StructuredAnswer {
        StructuredAnswer {
            intro: answer.intro.clone(),
            segments: self.order.iter().map(|&i| answer.segments[i].clone()).collect(),
            self_confidence: answer.self_confidence.clone(),
        }
    }
}

/// Sorts segments by descending Δ (ties keep original order); intro stays first.
pub fn rerank_answer(answer: &StructuredAnswer, attributions: &[SegmentAttribution]) -> Result<RerankedAnswer> {
    let m = answer.segments.len();
    let idx: BTreeSet<usize> = attributions.iter().map(|a| a.segment_index).collect();
    if attributions.len() != m || idx.len() != m || idx.iter().any(|&i| i >= m) {
        return Err(Error::precondition(format!(
            "attributions do not cover the {m} segments exactly once"
        )));
    }
    let mut sorted: Vec<&SegmentAttribution> = attributions.iter().collect();
    sorted.sort_by(|x, y| y.delta.total_cmp(&x.delta).then(x.segment_index.cmp(&y.segment_index)));
    let order: Vec<usize> = sorted.iter().map(|a| a.segment_index).collect();
    let changed = order.iter().enumerate().any(|(pos, &i)| pos != i);
    Ok(RerankedAnswer {
        order,
        changed,
        full_score: attributions.first().map_or(0.0, |a| a.full_score),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Capability, Provider, ProviderProfile};
    use proptest::prelude::*;

    fn mock() -> Provider {
        Provider::from_profile(
            "m",
            ProviderProfile::new("mock://6", "mock").with_capabilities([Capability::Chat, Capability::Embed, Capability::Rerank]),
        )
        .unwrap()
    }

    #[test]
    fn mask_records_infrastructure() {
        let p = mock();
        let a = StructuredAnswer::new("", vec!["Harden the electrical grid against wildfires.".into()]);
        let m = mask_answer(&a, &p).unwrap();
        assert_eq!(m.text, "1. Harden the [INFRASTRUCTURE] against [HAZARD].");
        assert!(m.replacements.contains(&Replacement { surface: "electrical grid".into(), placeholder: "[INFRASTRUCTURE]".into() }));
        assert!(m.replacements.contains(&Replacement { surface: "wildfires".into(), placeholder: "[HAZARD]".into() }));
        for form in crate::dataset::hazard_lexicon() {
            assert!(!m.text.to_lowercase().contains(form));
        }
    }

    #[test]
    fn mask_without_sensitive_terms_is_identity() {
        let p = mock();
        let a = StructuredAnswer::new("", vec!["Budget carefully.".into()]);
        let m = mask_answer(&a, &p).unwrap();
        assert_eq!(m.text, a.render());
        assert!(m.replacements.is_empty());
    }

    #[test]
    fn invalid_placeholder_rejected() {
        assert!(validate_masked("a [CITY] b").is_err());
        assert_eq!(validate_masked("a [hazard] b").unwrap(), "a [HAZARD] b");
    }

    #[test]
    fn leftover_surface_forms_are_remasked() {
        let orig = "Wildfires hit lines. More wildfires follow.";
        let masked = "[HAZARD] hit lines. More wildfires follow.";
        let reps = recover_replacements(orig, masked);
        assert_eq!(reps, vec![Replacement { surface: "Wildfires".into(), placeholder: "[HAZARD]".into() }]);
        assert_eq!(remask(masked, &reps), "[HAZARD] hit lines. More [HAZARD] follow.");
    }

    #[test]
    fn multiword_and_punctuation_recovery() {
        let reps = recover_replacements("protect the power transmission lines, now", "protect the [INFRASTRUCTURE], now");
        assert_eq!(reps[0].surface, "power transmission lines");
    }

    #[test]
    fn inverse_question_counts() {
        let p = mock();
        let qs = invert_questions("1. Heat stresses grids.\n2. Ports flood.", 5, &p).unwrap();
        assert_eq!(qs.len(), 5);
        assert_eq!(qs.iter().collect::<BTreeSet<_>>().len(), 5);
        assert_eq!(invert_questions("x.", 1, &p).unwrap().len(), 1);
        assert!(invert_questions("x", 0, &p).is_err());
    }

    #[test]
    fn identity_inverse_questions_score_one() {
        let q = "How will heat affect the grid?";
        let reply = serde_json::to_string(&vec![q; 5]).unwrap();
        let p = Provider::new(
            "s",
            ProviderProfile::new("mock://0", "s").with_capabilities([Capability::Chat, Capability::Embed]),
            std::sync::Arc::new(crate::gateway::MockBackend::new(0).with_reply(prompts::INVERSE_MARKER, reply)),
        );
        let a = StructuredAnswer::new("", vec!["Grids sag in heat.".into()]);
        let r = masked_relevance(q, &a, 5, &p, &p).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        let un = answer_relevance(q, &a, 5, false, &p, &p).unwrap();
        assert!(un.masked_answer.is_none());
    }

    struct Keyword;
    impl Reranker for Keyword {
        fn rerank(&self, _q: &str, passage: &str) -> Result<f64> {
            Ok(passage.lines().filter(|l| l.contains("grid")).count() as f64
                - passage.lines().filter(|l| l.contains("OFFTOPIC")).count() as f64)
        }
    }

    #[test]
    fn keyword_counting_deltas() {
        let a = StructuredAnswer::new("Intro", vec!["grid a".into(), "other".into(), "grid b".into(), "OFFTOPIC".into()]);
        let at = loo_attribution("grid?", &a, &Keyword).unwrap();
        let d: Vec<f64> = at.iter().map(|x| x.delta).collect();
        assert_eq!(d, vec![1.0, 0.0, 1.0, -1.0]);
        let r = rerank_answer(&a, &at).unwrap();
        assert_eq!(r.order, vec![0, 2, 1, 3]);
        assert!(r.changed);
    }

    #[test]
    fn single_segment_without_intro_scores_empty_as_zero() {
        let a = StructuredAnswer::new("", vec!["grid".into()]);
        let at = loo_attribution("q", &a, &Keyword).unwrap();
        assert_eq!(at.len(), 1);
        assert_eq!(at[0].delta, 1.0);
    }

    #[test]
    fn rerank_examples() {
        let a = StructuredAnswer::new("", vec!["a".into(), "b".into(), "c".into()]);
        let mk = |ds: &[f64]| -> Vec<SegmentAttribution> {
            ds.iter().enumerate().map(|(i, &d)| SegmentAttribution { segment_index: i, delta: d, full_score: 1.0 }).collect()
        };
        let r = rerank_answer(&a, &mk(&[0.2, 0.9, -0.1])).unwrap();
        assert_eq!(r.order, vec![1, 0, 2]);
        assert!(r.changed);
        assert!(!rerank_answer(&a, &mk(&[0.9, 0.5, 0.1])).unwrap().changed);
        let flat = rerank_answer(&a, &mk(&[0.3, 0.3, 0.3])).unwrap();
        assert_eq!(flat.order, vec![0, 1, 2]);
        assert!(!flat.changed);
        assert!(rerank_answer(&a, &mk(&[0.1, 0.2])).is_err());
        assert_eq!(r.apply(&a).segments, vec!["b", "a", "c"]);
    }

    proptest! {
        #[test]
        fn rerank_is_permutation(ds in proptest::collection::vec(-3i32..3, 1..10)) {
            let a = StructuredAnswer::new("i", (0..ds.len()).map(|i| format!("s{i}")).collect());
            let at: Vec<SegmentAttribution> = ds.iter().enumerate().map(|(i, &d)| SegmentAttribution { segment_index: i, delta: d as f64, full_score: 0.0 }).collect();
            let r = rerank_answer(&a, &at).unwrap();
            let mut sorted = r.order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..ds.len()).collect::<Vec<_>>());
            prop_assert!(r.order.windows(2).all(|w| ds[w[0]] > ds[w[1]] || (ds[w[0]] == ds[w[1]] && w[0] < w[1])));
        }

        #[test]
        fn recovered_surfaces_never_survive(words in proptest::collection::vec(prop_oneof!["[a-z]{2,6}", Just("wildfires".to_string()), Just("electrical grid".to_string())], 1..12)) {
            let orig = words.join(" ");
            let masked = crate::gateway::mock::mask(&orig);
            let reps = recover_replacements(&orig, &masked);
            let text = remask(&masked, &reps);
            for r in &reps {
                let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(&r.surface))).unwrap();
                prop_assert!(!re.is_match(&text));
            }
        }
    }
}

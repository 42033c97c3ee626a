//! Paraphrase and hazard/location perturbation probes with answer consistency.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answer::StructuredAnswer;
use crate::dataset::{instantiate_question, DatasetCatalog, HazardKind, Location, QuestionRecord};
use crate::error::{Error, Result};
use crate::gateway::{ChatModel, ChatRequest, Embedder};
use crate::prompts;
use crate::text;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Paraphrase,
    PerturbHazard,
    PerturbLocation,
    PerturbBoth,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Paraphrase,
        VariantKind::PerturbHazard,
        VariantKind::PerturbLocation,
        VariantKind::PerturbBoth,
    ];

    pub fn is_perturbation(self) -> bool {
        self != VariantKind::Paraphrase
    }

    fn stream(self) -> u64 {
        match self {
            VariantKind::Paraphrase => 0,
            VariantKind::PerturbHazard => 1,
            VariantKind::PerturbLocation => 2,
            VariantKind::PerturbBoth => 3,
        }
    }
}

/// Answer plus provenance from one pass through retrieval and generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub answer: StructuredAnswer,
    pub retrieved_doc_ids: Vec<String>,
}

/// Retrieval followed by answer generation for one question.
pub trait RagPipeline: Sync {
    fn answer(&self, record: &QuestionRecord) -> Result<RagAnswer>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRecord {
    pub question_id: String,
    pub kind: VariantKind,
    pub variant_question: String,
    pub variant_hazard: HazardKind,
    pub variant_location: Location,
    pub variant_answer: StructuredAnswer,
    pub retrieved_doc_ids: Vec<String>,
    pub consistency: f64,
}

fn same_surface(a: &str, b: &str) -> bool {
    text::squash_whitespace(a).to_lowercase() == text::squash_whitespace(b).to_lowercase()
}

/// Rewords `q`; one regeneration if the model echoes it back.
pub fn paraphrase_question(q: &str, chat: &dyn ChatModel) -> Result<String> {
    if q.trim().is_empty() {
        return Err(Error::precondition("question is empty"));
    }
    let request = ChatRequest::generation(prompts::fill(prompts::PARAPHRASE_TEMPLATE, &[("question", q.trim())]));
    let first = chat.chat(&request)?.trim().to_string();
    if !first.is_empty() && !same_surface(&first, q) {
        return Ok(first);
    }
    let second = chat
        .chat(&request.followed_by(&first, prompts::PARAPHRASE_RETRY))?
        .trim()
        .to_string();
    if second.is_empty() || same_surface(&second, q) {
        return Err(Error::contract("paraphrase", "model returned the original question twice"));
    }
    Ok(second)
}

fn pick_other<T: Clone + PartialEq>(rng: &mut ChaCha8Rng, pool: &[T], avoid: &T) -> Option<T> {
    let others: Vec<&T> = pool.iter().filter(|x| *x != avoid).collect();
    others.choose(rng).map(|x| (*x).clone())
}

/// Changes the hazard, the location, or both, then re-instantiates the
/// record's template.
pub fn perturb_question(
    record: &QuestionRecord,
    catalog: &DatasetCatalog,
    kind: VariantKind,
    rng_seed: u64,
) -> Result<QuestionRecord> {
    if !kind.is_perturbation() {
        return Err(Error::precondition("paraphrase is not a perturbation"));
    }
    let table = &catalog.table;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut profile = record.profile.clone();
    let hazards: Vec<HazardKind> = table.hazards().collect();
    let no_alternative = |what: &str| Error::precondition(format!("no alternative {what} for `{}`", record.id));

    if matches!(kind, VariantKind::PerturbHazard | VariantKind::PerturbBoth) {
        profile.hazard = pick_other(&mut rng, &hazards, &record.profile.hazard)
            .ok_or_else(|| no_alternative("hazard"))?;
    }
    let valid = table.locations(profile.hazard);
    match kind {
        VariantKind::PerturbHazard => {
            if !valid.contains(&profile.location) {
                profile.location = valid
                    .choose(&mut rng)
                    .ok_or_else(|| no_alternative("location"))?
                    .clone();
            }
        }
        _ => {
            profile.location = pick_other(&mut rng, valid, &record.profile.location)
                .ok_or_else(|| no_alternative("location"))?;
        }
    }
    let template = catalog.template(&record.template_id).ok_or_else(|| Error::Unknown {
        kind: "template",
        name: record.template_id.clone(),
    })?;
    let mut out = instantiate_question(&profile, template, &record.infrastructure)?;
    out.id = record.id.clone();
    Ok(out)
}

/// Cosine of the two rendered answers' embeddings.
pub fn consistency_score(a: &StructuredAnswer, b: &StructuredAnswer, embedder: &dyn Embedder) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::precondition("consistency needs two non-empty answers"));
    }
    let v = embedder.embed(&[a.render(), b.render()])?;
    Ok(vector::cosine(&v[0], &v[1]))
}

/// Everything a robustness run needs besides the question itself.
pub struct ProbeContext<'a> {
    pub pipeline: &'a dyn RagPipeline,
    pub paraphraser: &'a dyn ChatModel,
    pub embedder: &'a dyn Embedder,
    pub catalog: &'a DatasetCatalog,
    pub seed: u64,
}

/// Builds each requested variant, answers it afresh, and scores it against
/// the original answer.
pub fn run_robustness(
    record: &QuestionRecord,
    original: &StructuredAnswer,
    kinds: &[VariantKind],
    ctx: &ProbeContext<'_>,
) -> Result<Vec<RobustnessRecord>> {
    kinds
        .par_iter()
        .map(|&kind| {
            let variant = if kind == VariantKind::Paraphrase {
                let mut v = record.clone();
                v.question_text = paraphrase_question(&record.question_text, ctx.paraphraser)?;
                v
            } else {
                let seed = ctx
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(kind.stream());
                perturb_question(record, ctx.catalog, kind, seed)?
            };
            let rag = ctx.pipeline.answer(&variant)?;
            let consistency = consistency_score(original, &rag.answer, ctx.embedder)?;
            Ok(RobustnessRecord {
                question_id: record.id.clone(),
                kind,
                variant_question: variant.question_text,
                variant_hazard: variant.profile.hazard,
                variant_location: variant.profile.location,
                variant_answer: rag.answer,
                retrieved_doc_ids: rag.retrieved_doc_ids,
                consistency,
            })
        })
        .collect()
}

/// Paraphrase consistency and the mean over the perturbation kinds run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub paraphrase: Option<f64>,
    pub perturbation: Option<f64>,
}

pub fn summarize(records: &[RobustnessRecord]) -> RobustnessSummary {
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    RobustnessSummary {
        paraphrase: mean(
            records
                .iter()
                .filter(|r| r.kind == VariantKind::Paraphrase)
                .map(|r| r.consistency)
                .collect(),
        ),
        perturbation: mean(
            records
                .iter()
                .filter(|r| r.kind.is_perturbation())
                .map(|r| r.consistency)
                .collect(),
        ),
    }
}

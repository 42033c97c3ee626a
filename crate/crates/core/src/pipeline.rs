//! End-to-end runs: configuration, answer generation, metric evaluation and
//! aggregation into per-(generator, evaluator) summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answer::{parse_answer, StructuredAnswer};
use crate::claims::{self, write_atomic};
use crate::context::{self, ConfidenceMethod, CuReport};
use crate::corpus::{self, CorpusIndex};
use crate::dataset::{self, DatasetCatalog, DatasetRow, QuestionRecord};
use crate::error::{Error, Result};
use crate::gateway::{Capability, ChatModel, ChatRequest, Embedder, Provider, ProviderProfile, ProviderRegistry};
use crate::relevance::{self, RelevanceReport, RerankedAnswer, SegmentAttribution};
use crate::robustness::{self, ProbeContext, RagAnswer, RagPipeline, RobustnessRecord, VariantKind};
use crate::specificity::{self, JudgeSlot, SpecificityReport, SpecificityWeights};
use crate::stats::{self, ReadabilityReport, ReadabilitySummary};

/// Answer generation always sees exactly this many abstracts.
pub const ANSWER_DOCS: usize = 5;

pub const ROWS_FILE: &str = "rows.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const CSV_FILE: &str = "metrics.csv";

// ------------------------------------------------------------------ config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub count: usize,
    pub seed: u64,
    /// Optional versioned template file replacing the built-in pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub specificity: bool,
    pub robustness: bool,
    pub relevance: bool,
    pub cu: bool,
    pub readability: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            specificity: true,
            robustness: true,
            relevance: true,
            cu: true,
            readability: true,
        }
    }
}

impl MetricToggles {
    pub fn none() -> Self {
        Self {
            specificity: false,
            robustness: false,
            relevance: false,
            cu: false,
            readability: false,
        }
    }

    pub fn any(&self) -> bool {
        self.specificity || self.robustness || self.relevance || self.cu || self.readability
    }

    fn needs_evaluator(&self) -> bool {
        self.specificity || self.robustness || self.relevance || self.cu
    }
}

/// Which registry entry plays which part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub generators: Vec<String>,
    #[serde(default)]
    pub evaluators: Vec<String>,
    pub embedder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
}

fn default_judges() -> usize {
    3
}
fn default_inverse() -> usize {
    5
}
fn default_k() -> usize {
    ANSWER_DOCS
}
fn default_parallelism() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_kinds() -> Vec<VariantKind> {
    VariantKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetParams,
    /// JSONL corpus of `{doc_id, body}` abstracts.
    pub corpus: PathBuf,
    pub providers: BTreeMap<String, ProviderProfile>,
    pub roles: Roles,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default = "default_judges")]
    pub k_judges: usize,
    #[serde(default = "default_inverse")]
    pub n_inverse_questions: usize,
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub relevance_masked: bool,
    #[serde(default)]
    pub confidence_method: ConfidenceMethod,
    #[serde(default)]
    pub specificity_weights: SpecificityWeights,
    #[serde(default = "default_kinds")]
    pub robustness_kinds: Vec<VariantKind>,
    #[serde(default)]
    pub csv: bool,
}

impl RunConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        if let Some(t) = self.dataset.templates.as_mut() {
            fix(t);
        }
    }

    /// Static checks, including role capabilities; makes no network calls.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dataset.count == 0 {
            return bad("dataset.count must be at least 1".into());
        }
        if self.retrieval_k != ANSWER_DOCS {
            return bad(format!("retrieval_k must be {ANSWER_DOCS}; the answer prompt takes exactly {ANSWER_DOCS} abstracts"));
        }
        if self.k_judges == 0 {
            return bad("k_judges must be at least 1".into());
        }
        if self.n_inverse_questions == 0 {
            return bad("n_inverse_questions must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        self.specificity_weights.validate()?;
        let r = &self.roles;
        if r.generators.is_empty() {
            return bad("roles.generators is empty".into());
        }
        if self.metrics.needs_evaluator() && r.evaluators.is_empty() {
            return bad("roles.evaluators is empty but model-based metrics are enabled".into());
        }
        for (list, what) in [(&r.generators, "generators"), (&r.evaluators, "evaluators")] {
            if list.iter().collect::<BTreeSet<_>>().len() != list.len() {
                return bad(format!("roles.{what} lists a provider twice"));
            }
        }
        if self.metrics.robustness && self.robustness_kinds.is_empty() {
            return bad("robustness is enabled but robustness_kinds is empty".into());
        }
        let need = |name: &str, cap: Capability, role: &str| -> Result<()> {
            let p = self
                .providers
                .get(name)
                .ok_or_else(|| Error::Config(format!("role {role} names unknown provider `{name}`")))?;
            if !p.capabilities.contains(&cap) {
                return Err(Error::Config(format!("provider `{name}` ({role}) lacks the `{cap}` capability")));
            }
            Ok(())
        };
        for g in &r.generators {
            need(g, Capability::Chat, "generator")?;
        }
        for e in &r.evaluators {
            need(e, Capability::Chat, "evaluator")?;
        }
        need(&r.embedder, Capability::Embed, "embedder")?;
        if self.metrics.relevance {
            match &r.reranker {
                Some(name) => need(name, Capability::Rerank, "reranker")?,
                None => return bad("relevance is enabled but roles.reranker is not set".into()),
            }
        }
        if self.metrics.cu {
            match &r.scorer {
                Some(name) => need(name, Capability::Score, "scorer")?,
                None => return bad("cu is enabled but roles.scorer is not set".into()),
            }
        }
        Ok(())
    }
}

// ----------------------------------------------------------------- runtime

/// Retrieval of the top abstracts followed by grounded answer generation.
pub struct RetrievalGenerator<'a> {
    pub chat: &'a dyn ChatModel,
    pub embedder: &'a dyn Embedder,
    pub index: &'a CorpusIndex,
}

impl RagPipeline for RetrievalGenerator<'_> {
    fn answer(&self, record: &QuestionRecord) -> Result<RagAnswer> {
        let hits = self.index.retrieve(&record.question_text, ANSWER_DOCS, self.embedder)?;
        if hits.len() < ANSWER_DOCS {
            return Err(Error::precondition(format!("corpus holds fewer than {ANSWER_DOCS} documents")));
        }
        let bodies: Vec<&str> = hits
            .iter()
            .map(|h| self.index.get(&h.doc_id).map(|d| d.body.as_str()).expect("retrieved id is indexed"))
            .collect();
        let prompt = dataset::build_answer_prompt(record, &bodies, &record.profile)?;
        let raw = self.chat.chat(&ChatRequest::generation(prompt))?;
        let answer = parse_answer(&raw);
        if answer.segments.is_empty() {
            return Err(Error::MalformedResponse("generated answer has no numbered points".into()));
        }
        Ok(RagAnswer {
            answer,
            retrieved_doc_ids: hits.into_iter().map(|h| h.doc_id).collect(),
        })
    }
}

/// Validated config plus the live objects a run needs.
pub struct Runtime {
    pub config: RunConfig,
    pub registry: ProviderRegistry,
    pub catalog: DatasetCatalog,
    pub index: CorpusIndex,
    pool: rayon::ThreadPool,
}

impl Runtime {
    pub fn prepare(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let registry = ProviderRegistry::build(&config.providers, config.cache_dir.as_deref())?;
        Self::with_registry(config, registry)
    }

    /// Uses a caller-supplied registry (which must cover every role).
    pub fn with_registry(config: RunConfig, registry: ProviderRegistry) -> Result<Self> {
        config.validate()?;
        let mut catalog = DatasetCatalog::builtin();
        if let Some(path) = &config.dataset.templates {
            let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            catalog = catalog.with_templates_json(&json)?;
        }
        let docs = corpus::load_corpus(&config.corpus)?;
        if docs.len() < config.retrieval_k {
            return Err(Error::Config(format!(
                "corpus has {} documents; at least {} are needed",
                docs.len(),
                config.retrieval_k
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let embedder = registry.require(&config.roles.embedder, Capability::Embed)?;
        let index = pool.install(|| CorpusIndex::build(&docs, embedder.as_ref()))?;
        Ok(Self {
            config,
            registry,
            catalog,
            index,
            pool,
        })
    }

    fn provider(&self, name: &str, cap: Capability) -> Arc<Provider> {
        self.registry.require(name, cap).expect("roles validated against the registry")
    }

    pub fn questions(&self) -> Result<Vec<QuestionRecord>> {
        self.catalog.generate(self.config.dataset.seed, self.config.dataset.count)
    }

    pub fn total_calls(&self) -> u64 {
        self.registry.total_calls()
    }
}

// -------------------------------------------------------------------- rows

/// One generated answer (or the reason there is none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub generator: String,
    pub data: DatasetRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub question_id: String,
    pub generator: String,
    pub evaluator: String,
    /// Headline value per metric; `null` when undefined or failed.
    pub scores: BTreeMap<String, Option<f64>>,
    /// Failure message per metric that errored.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<SpecificityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<RelevanceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<Vec<SegmentAttribution>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranked: Option<RerankedAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_utilization: Option<CuReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readability: Option<ReadabilityReport>,
}

impl MetricRow {
    fn record<T>(&mut self, keys: &[&str], outcome: Result<T>, values: impl FnOnce(&T) -> Vec<Option<f64>>) -> Option<T> {
        match outcome {
            Ok(v) => {
                for (k, x) in keys.iter().zip(values(&v)) {
                    self.scores.insert((*k).to_string(), x);
                }
                Some(v)
            }
            Err(e) => {
                for k in keys {
                    self.scores.insert((*k).to_string(), None);
                    self.errors.insert((*k).to_string(), e.to_string());
                }
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub generator: String,
    pub evaluator: String,
    #[serde(flatten)]
    pub record: RobustnessRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ReportRow {
    Answer(AnswerRow),
    Metrics(MetricRow),
    Robustness(RobustnessRow),
}

// ---------------------------------------------------------------- stages

/// Answers every question with every generator.
pub fn generate_answers(rt: &Runtime, questions: &[QuestionRecord]) -> Vec<AnswerRow> {
    let embedder = rt.provider(&rt.config.roles.embedder, Capability::Embed);
    let mut out = Vec::new();
    for name in &rt.config.roles.generators {
        let chat = rt.provider(name, Capability::Chat);
        let pipe = RetrievalGenerator {
            chat: chat.as_ref(),
            embedder: embedder.as_ref(),
            index: &rt.index,
        };
        let model = chat.profile().model_id.clone();
        let rows: Vec<AnswerRow> = rt.pool.install(|| {
            questions
                .par_iter()
                .map(|q| match pipe.answer(q) {
                    Ok(a) => AnswerRow {
                        generator: name.clone(),
                        data: DatasetRow::new(q, &a.answer, a.retrieved_doc_ids, &model),
                        error: None,
                    },
                    Err(e) => {
                        tracing::warn!(question = %q.id, generator = %name, error = %e, "generation failed");
                        AnswerRow {
                            generator: name.clone(),
                            data: DatasetRow::new(q, &StructuredAnswer::default(), Vec::new(), &model),
                            error: Some(e.to_string()),
                        }
                    }
                })
                .collect()
        });
        out.extend(rows);
    }
    out
}

fn mix_seed(seed: u64, id: &str) -> u64 {
    crate::gateway::mock::fnv(&[&seed.to_le_bytes(), id.as_bytes()])
}

fn evaluate_one(rt: &Runtime, row: &AnswerRow, evaluator: &str) -> (MetricRow, Vec<RobustnessRow>) {
    let cfg = &rt.config;
    let on = cfg.metrics;
    let mut m = MetricRow {
        question_id: row.data.id.clone(),
        generator: row.generator.clone(),
        evaluator: evaluator.to_string(),
        ..MetricRow::default()
    };
    let answer = row.data.answer();
    let question = row.data.question.clone();
    let answer_id = format!("{}-{}", row.data.id, row.generator);

    if on.readability {
        m.readability = m.record(&["fre", "fkgl"], stats::readability(&answer.render()), |r| {
            vec![Some(r.fre), Some(r.fkgl)]
        });
    }
    if !on.needs_evaluator() {
        return (m, Vec::new());
    }

    let eval = rt.provider(evaluator, Capability::Chat);
    let embedder = rt.provider(&cfg.roles.embedder, Capability::Embed);
    let docs: Result<Vec<(&str, &str)>> = row
        .data
        .retrieved_doc_ids
        .iter()
        .map(|id| {
            rt.index
                .get(id)
                .map(|d| (id.as_str(), d.body.as_str()))
                .ok_or_else(|| Error::Unknown { kind: "document", name: id.clone() })
        })
        .collect();

    if on.specificity {
        let out = docs.as_ref().map_err(clone_err).and_then(|docs| {
            let evidence: Vec<&str> = docs.iter().map(|d| d.1).collect();
            let slots: Vec<JudgeSlot<'_>> = (0..cfg.k_judges)
                .map(|i| JudgeSlot {
                    judge_id: format!("{evaluator}#{}", i + 1),
                    model: eval.as_ref(),
                })
                .collect();
            specificity::score_answer(&answer, &answer_id, None, &evidence, eval.as_ref(), &slots, &cfg.specificity_weights)
        });
        m.specificity = m.record(&["specificity"], out, |r| vec![r.score]);
    }

    if on.relevance {
        let rel = relevance::answer_relevance(
            &question,
            &answer,
            cfg.n_inverse_questions,
            cfg.relevance_masked,
            eval.as_ref(),
            embedder.as_ref(),
        );
        m.relevance = m.record(&["relevance"], rel, |r| vec![Some(r.score)]);
        let reranker = rt.provider(cfg.roles.reranker.as_deref().expect("validated"), Capability::Rerank);
        let att = relevance::loo_attribution(&question, &answer, reranker.as_ref())
            .and_then(|a| relevance::rerank_answer(&answer, &a).map(|r| (a, r)));
        if let Some((a, r)) = m.record(&["rerank_full_score", "rerank_changed"], att, |(_, r)| {
            vec![Some(r.full_score), Some(if r.changed { 1.0 } else { 0.0 })]
        }) {
            m.attribution = Some(a);
            m.reranked = Some(r);
        }
    }

    if on.cu {
        let scorer = rt.provider(cfg.roles.scorer.as_deref().expect("validated"), Capability::Score);
        let out = docs.as_ref().map_err(clone_err).and_then(|docs| {
            let claims = claims::extract_context_claims(docs, eval.as_ref(), embedder.as_ref())?;
            context::cu_scores(&answer.render(), &question, &claims, scorer.as_ref(), cfg.confidence_method)
        });
        m.context_utilization = m.record(&["cu", "cu_rel"], out, |r| vec![Some(r.cu), r.cu_rel]);
    }

    let mut rob_rows = Vec::new();
    if on.robustness {
        let generator = rt.provider(&row.generator, Capability::Chat);
        let pipe = RetrievalGenerator {
            chat: generator.as_ref(),
            embedder: embedder.as_ref(),
            index: &rt.index,
        };
        let out = row.data.record().and_then(|record| {
            let ctx = ProbeContext {
                pipeline: &pipe,
                paraphraser: eval.as_ref(),
                embedder: embedder.as_ref(),
                catalog: &rt.catalog,
                seed: mix_seed(cfg.dataset.seed, &answer_id),
            };
            robustness::run_robustness(&record, &answer, &cfg.robustness_kinds, &ctx)
        });
        if let Some(records) = m.record(&["paraphrase", "perturbation"], out, |recs| {
            let s = robustness::summarize(recs);
            vec![s.paraphrase, s.perturbation]
        }) {
            rob_rows = records
                .into_iter()
                .map(|record| RobustnessRow {
                    generator: row.generator.clone(),
                    evaluator: evaluator.to_string(),
                    record,
                })
                .collect();
        }
    }
    (m, rob_rows)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Unknown { kind, name } => Error::Unknown { kind, name: name.clone() },
        other => Error::Invariant(other.to_string()),
    }
}

/// Scores every successful answer with every evaluator.
pub fn evaluate(rt: &Runtime, answers: &[AnswerRow]) -> Vec<ReportRow> {
    if !rt.config.metrics.any() {
        return Vec::new();
    }
    let evaluators: Vec<String> = if rt.config.metrics.needs_evaluator() {
        rt.config.roles.evaluators.clone()
    } else {
        vec![String::new()]
    };
    let ok: Vec<&AnswerRow> = answers.iter().filter(|a| a.error.is_none()).collect();
    let mut rows = Vec::new();
    for ev in &evaluators {
        let results: Vec<(MetricRow, Vec<RobustnessRow>)> =
            rt.pool.install(|| ok.par_iter().map(|a| evaluate_one(rt, a, ev)).collect());
        for (m, rob) in results {
            rows.push(ReportRow::Metrics(m));
            rows.extend(rob.into_iter().map(ReportRow::Robustness));
        }
    }
    rows
}

// ------------------------------------------------------------- aggregate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 when n = 1.
    pub std: Option<f64>,
    pub n: usize,
    pub nulls: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorAggregate {
    pub generator: String,
    pub answers: usize,
    pub answer_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAggregate {
    pub generator: String,
    pub evaluator: String,
    pub rows: usize,
    pub metrics: BTreeMap<String, MetricAggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readability: Option<ReadabilitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub generators: Vec<GeneratorAggregate>,
    pub pairs: Vec<PairAggregate>,
}

impl Aggregate {
    pub fn has_failures(&self) -> bool {
        self.generators.iter().any(|g| g.answer_errors > 0)
            || self.pairs.iter().any(|p| p.metrics.values().any(|m| m.errors > 0))
    }
}

/// Recomputes the aggregate block from rows (order of first appearance).
pub fn aggregate_report(rows: &[ReportRow]) -> Aggregate {
    let mut generators: Vec<GeneratorAggregate> = Vec::new();
    let mut pairs: Vec<(String, String, Vec<&MetricRow>)> = Vec::new();
    for row in rows {
        match row {
            ReportRow::Answer(a) => {
                let g = match generators.iter_mut().find(|g| g.generator == a.generator) {
                    Some(g) => g,
                    None => {
                        generators.push(GeneratorAggregate {
                            generator: a.generator.clone(),
                            answers: 0,
                            answer_errors: 0,
                        });
                        generators.last_mut().unwrap()
                    }
                };
                g.answers += 1;
                g.answer_errors += usize::from(a.error.is_some());
            }
            ReportRow::Metrics(m) => match pairs.iter_mut().find(|p| p.0 == m.generator && p.1 == m.evaluator) {
                Some(p) => p.2.push(m),
                None => pairs.push((m.generator.clone(), m.evaluator.clone(), vec![m])),
            },
            ReportRow::Robustness(_) => {}
        }
    }
    let pairs = pairs
        .into_iter()
        .map(|(generator, evaluator, ms)| {
            let keys: BTreeSet<&String> = ms.iter().flat_map(|m| m.scores.keys()).collect();
            let metrics = keys
                .into_iter()
                .map(|k| {
                    let values: Vec<f64> = ms.iter().filter_map(|m| m.scores.get(k).copied().flatten()).collect();
                    let errors = ms.iter().filter(|m| m.errors.contains_key(k)).count();
                    let nulls = ms
                        .iter()
                        .filter(|m| matches!(m.scores.get(k), Some(None)) && !m.errors.contains_key(k))
                        .count();
                    let s = stats::mean_std(&values);
                    (
                        k.clone(),
                        MetricAggregate {
                            mean: s.map(|s| s.mean),
                            std: s.map(|s| s.std),
                            n: values.len(),
                            nulls,
                            errors,
                        },
                    )
                })
                .collect();
            let reports: Vec<ReadabilityReport> = ms.iter().filter_map(|m| m.readability.clone()).collect();
            PairAggregate {
                generator,
                evaluator,
                rows: ms.len(),
                metrics,
                readability: stats::readability_summary(&reports),
            }
        })
        .collect();
    Aggregate { generators, pairs }
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let aggregate = aggregate_report(&rows);
        Self { rows, aggregate }
    }

    /// 0 on success, 2 when any answer or metric failed.
    pub fn exit_code(&self) -> i32 {
        if self.aggregate.has_failures() {
            2
        } else {
            0
        }
    }
}

/// Generates, evaluates and aggregates in one go.
pub fn run_with(rt: &Runtime) -> Result<MetricReport> {
    let questions = rt.questions()?;
    let answers = generate_answers(rt, &questions);
    let metric_rows = evaluate(rt, &answers);
    let mut rows: Vec<ReportRow> = answers.into_iter().map(ReportRow::Answer).collect();
    rows.extend(metric_rows);
    Ok(MetricReport::from_rows(rows))
}

pub fn run(config: RunConfig) -> Result<MetricReport> {
    let rt = Runtime::prepare(config)?;
    run_with(&rt)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn aggregate_json(agg: &Aggregate) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(agg)?;
    v.push(b'\n');
    Ok(v)
}

/// One line per metric row; columns are the union of metric names.
pub fn metrics_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let ms: Vec<&MetricRow> = rows
        .iter()
        .filter_map(|r| match r {
            ReportRow::Metrics(m) => Some(m),
            _ => None,
        })
        .collect();
    let keys: BTreeSet<&String> = ms.iter().flat_map(|m| m.scores.keys()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["question_id".to_string(), "generator".into(), "evaluator".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.push("errors".into());
    let csv_err = |e: csv::Error| Error::Invariant(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for m in ms {
        let mut rec = vec![m.question_id.clone(), m.generator.clone(), m.evaluator.clone()];
        for k in &keys {
            rec.push(m.scores.get(*k).copied().flatten().map_or_else(String::new, |v| v.to_string()));
        }
        rec.push(m.errors.iter().map(|(k, e)| format!("{k}: {e}")).collect::<Vec<_>>().join("; "));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))
}

/// Writes rows, aggregate and (optionally) CSV into `dir`, each atomically.
pub fn write_report(report: &MetricReport, dir: &Path, csv: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(ROWS_FILE), &to_jsonl(&report.rows)?)?;
    write_atomic(&dir.join(AGGREGATE_FILE), &aggregate_json(&report.aggregate)?)?;
    if csv {
        write_atomic(&dir.join(CSV_FILE), &metrics_csv(&report.rows)?)?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<MetricReport> {
    Ok(MetricReport::from_rows(read_jsonl(&dir.join(ROWS_FILE))?))
}

/// Appends a line to a writer; shared by the CLI's streaming output.
pub fn write_line<T: Serialize>(mut w: impl Write, item: &T) -> Result<()> {
    serde_json::to_writer(&mut w, item)?;
    w.write_all(b"\n").map_err(|e| Error::io("<stream>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(g: &str, e: &str, scores: &[(&str, Option<f64>)], errors: &[&str]) -> ReportRow {
        ReportRow::Metrics(MetricRow {
            question_id: "q".into(),
            generator: g.into(),
            evaluator: e.into(),
            scores: scores.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            errors: errors.iter().map(|k| (k.to_string(), "boom".into())).collect(),
            ..MetricRow::default()
        })
    }

    #[test]
    fn aggregate_examples() {
        let rows = vec![
            metric("g", "e", &[("a", Some(0.5)), ("b", None), ("c", Some(0.3))], &[]),
            metric("g", "e", &[("a", Some(0.7)), ("b", None), ("c", None)], &["c"]),
        ];
        let agg = aggregate_report(&rows);
        let p = &agg.pairs[0];
        let a = &p.metrics["a"];
        assert!((a.mean.unwrap() - 0.6).abs() < 1e-12);
        assert!((a.std.unwrap() - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(a.n, 2);
        let b = &p.metrics["b"];
        assert_eq!((b.mean, b.n, b.nulls), (None, 0, 2));
        let c = &p.metrics["c"];
        assert_eq!((c.std, c.n, c.errors, c.nulls), (Some(0.0), 1, 1, 0));
        assert!(agg.has_failures());
    }

    #[test]
    fn pairs_are_kept_apart() {
        let rows = vec![
            metric("g1", "e", &[("a", Some(1.0))], &[]),
            metric("g2", "e", &[("a", Some(0.0))], &[]),
            metric("g1", "e", &[("a", Some(0.0))], &[]),
        ];
        let agg = aggregate_report(&rows);
        assert_eq!(agg.pairs.len(), 2);
        assert_eq!(agg.pairs[0].rows, 2);
        assert!(!agg.has_failures());
    }

    #[test]
    fn rows_round_trip_through_jsonl() {
        let rows = vec![metric("g", "e", &[("a", Some(0.25)), ("b", None)], &["b"])];
        let bytes = to_jsonl(&rows).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"row\":\"metrics\""));
        let back: Vec<ReportRow> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, rows);
        let csv = String::from_utf8(metrics_csv(&rows).unwrap()).unwrap();
        assert_eq!(csv, "question_id,generator,evaluator,a,b,errors\nq,g,e,0.25,,b: boom\n");
    }

    fn base_config() -> RunConfig {
        serde_json::from_value(serde_json::json!({
            "dataset": {"count": 2, "seed": 1},
            "corpus": "corpus.jsonl",
            "providers": {
                "gen": {"endpoint_url": "mock://1", "model_id": "gen", "capabilities": ["chat"]},
                "all": {"endpoint_url": "mock://2", "model_id": "all", "capabilities": ["chat", "embed", "rerank", "score"]}
            },
            "roles": {"generators": ["gen"], "evaluators": ["all"], "embedder": "all", "reranker": "all", "scorer": "all"},
            "output_dir": "out"
        }))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = base_config();
        assert_eq!((c.k_judges, c.n_inverse_questions, c.retrieval_k), (3, 5, 5));
        assert!(c.metrics.any() && c.relevance_masked);
        c.validate().unwrap();

        let mut bad = c.clone();
        bad.retrieval_k = 3;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));

        let mut bad = c.clone();
        bad.roles.embedder = "gen".into();
        assert!(bad.validate().unwrap_err().to_string().contains("embed"));

        let mut bad = c.clone();
        bad.roles.scorer = None;
        assert!(bad.validate().is_err());
        bad.metrics.cu = false;
        bad.validate().unwrap();

        let mut bad = c.clone();
        bad.roles.generators.push("nobody".into());
        assert!(bad.validate().unwrap_err().to_string().contains("nobody"));

        let mut off = c;
        off.metrics = MetricToggles::none();
        off.roles.evaluators.clear();
        off.validate().unwrap();
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let mut v = serde_json::to_value(base_config()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = base_config();
        c.resolve_paths(Path::new("/etc/run"));
        assert_eq!(c.corpus, PathBuf::from("/etc/run/corpus.jsonl"));
        assert_eq!(c.output_dir, PathBuf::from("/etc/run/out"));
    }
}

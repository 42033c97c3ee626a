//! Human annotation studies: task assignment, a durable append-only label
//! store, and human/human and human/automated agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{DatasetRow, UserProfile};
use crate::error::{Error, FieldError, Result};
use crate::pipeline::{MetricRow, ReportRow};
use crate::specificity::{Dimension, Dims, JudgeLabel};
use crate::stats::{self, Correlation, RatingMatrix};

pub const SOURCES_PER_TASK: usize = 5;
pub const SCALE_MIN: u8 = 1;
pub const SCALE_MAX: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub doc_id: String,
    pub body: String,
}

/// Everything an annotator sees for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub profile: UserProfile,
    pub question: String,
    pub answer_intro: String,
    pub answer_segments: Vec<String>,
    pub sources: Vec<Source>,
}

impl TaskPayload {
    /// Builds a payload from a dataset row, looking sources up by id.
    pub fn from_row(row: &DatasetRow, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let record = row.record()?;
        let sources = row
            .retrieved_doc_ids
            .iter()
            .map(|id| {
                lookup(id)
                    .map(|body| Source { doc_id: id.clone(), body })
                    .ok_or_else(|| Error::Unknown { kind: "document", name: id.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        if sources.len() != SOURCES_PER_TASK {
            return Err(Error::precondition(format!(
                "question {} has {} sources, expected {SOURCES_PER_TASK}",
                row.id,
                sources.len()
            )));
        }
        Ok(Self {
            profile: record.profile,
            question: row.question.clone(),
            answer_intro: row.answer_intro.clone(),
            answer_segments: row.answer_segments.clone(),
            sources,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub question_id: String,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<TaskPayload>,
    pub status: TaskStatus,
}

/// Balanced round-robin assignment.
///
/// Questions and annotators are shuffled by `seed`, then the
/// `questions × redundancy` slots are dealt cyclically, so consecutive slots
/// of one question always go to distinct annotators and loads differ by at
/// most one.
pub fn assign_tasks(
    question_ids: &[String],
    annotator_ids: &[String],
    redundancy: usize,
    seed: u64,
) -> Result<Vec<AnnotationTask>> {
    if question_ids.is_empty() || annotator_ids.is_empty() {
        return Err(Error::precondition("need at least one question and one annotator"));
    }
    if redundancy == 0 || redundancy > annotator_ids.len() {
        return Err(Error::precondition(format!(
            "redundancy {redundancy} is infeasible with {} annotators",
            annotator_ids.len()
        )));
    }
    for (ids, what) in [(question_ids, "question"), (annotator_ids, "annotator")] {
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return Err(Error::precondition(format!("duplicate {what} id")));
        }
        if ids.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::precondition(format!("empty {what} id")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs: Vec<&String> = question_ids.iter().collect();
    let mut ann: Vec<&String> = annotator_ids.iter().collect();
    qs.shuffle(&mut rng);
    ann.shuffle(&mut rng);
    let mut tasks = Vec::with_capacity(qs.len() * redundancy);
    let mut slot = 0;
    for q in qs {
        for _ in 0..redundancy {
            let a = ann[slot % ann.len()];
            slot += 1;
            tasks.push(AnnotationTask {
                task_id: format!("{q}--{a}"),
                question_id: q.clone(),
                annotator_id: a.clone(),
                payload: None,
                status: TaskStatus::Pending,
            });
        }
    }
    tasks.sort_by(|x, y| x.task_id.cmp(&y.task_id));
    Ok(tasks)
}

// ------------------------------------------------------------ annotations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAnnotation {
    pub task_id: String,
    pub specificity: Dims<JudgeLabel>,
    pub relevance: u8,
    /// One flag per retrieved source.
    pub context_used: Vec<bool>,
    pub context_overall: u8,
    pub confidence: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// Unix seconds, set by the server.
    pub submitted_at: u64,
}

impl HumanAnnotation {
    /// Validates a submitted body, reporting every bad field at once.
    pub fn from_json(task_id: &str, body: &Value, submitted_at: u64) -> std::result::Result<Self, Vec<FieldError>> {
        let mut errs = Vec::new();
        let Some(obj) = body.as_object() else {
            return Err(vec![FieldError::new("body", "expected a JSON object")]);
        };
        let known = ["specificity", "relevance", "context_used", "context_overall", "confidence", "comment", "task_id"];
        for k in obj.keys() {
            if !known.contains(&k.as_str()) {
                errs.push(FieldError::new(k.clone(), "unknown field"));
            }
        }
        if let Some(t) = obj.get("task_id") {
            if t.as_str() != Some(task_id) {
                errs.push(FieldError::new("task_id", "does not match the task in the path"));
            }
        }

        let mut labels: BTreeMap<Dimension, JudgeLabel> = BTreeMap::new();
        match obj.get("specificity").and_then(Value::as_object) {
            None => errs.push(FieldError::new("specificity", "required object with hazard, location, timeline, intensity")),
            Some(spec) => {
                for d in Dimension::ALL {
                    let field = format!("specificity.{}", d.as_str());
                    match spec.get(d.as_str()).and_then(Value::as_str).map(JudgeLabel::parse) {
                        Some(Some(l)) => {
                            labels.insert(d, l);
                        }
                        Some(None) => errs.push(FieldError::new(field, "must be one of yes, no, na")),
                        None => errs.push(FieldError::new(field, "required")),
                    }
                }
                for k in spec.keys() {
                    if !Dimension::ALL.iter().any(|d| d.as_str() == k) {
                        errs.push(FieldError::new(format!("specificity.{k}"), "unknown dimension"));
                    }
                }
            }
        }

        let mut scale = |name: &str| -> u8 {
            match obj.get(name).map(Value::as_i64) {
                None => {
                    errs.push(FieldError::new(name, "required"));
                    0
                }
                Some(Some(v)) if (SCALE_MIN as i64..=SCALE_MAX as i64).contains(&v) => v as u8,
                Some(_) => {
                    errs.push(FieldError::new(name, format!("must be an integer from {SCALE_MIN} to {SCALE_MAX}")));
                    0
                }
            }
        };
        let relevance = scale("relevance");
        let context_overall = scale("context_overall");
        let confidence = scale("confidence");

        let context_used = match obj.get("context_used").and_then(Value::as_array) {
            Some(a) if a.len() == SOURCES_PER_TASK && a.iter().all(Value::is_boolean) => {
                a.iter().map(|v| v.as_bool().unwrap()).collect()
            }
            _ => {
                errs.push(FieldError::new("context_used", format!("must be {SOURCES_PER_TASK} booleans")));
                Vec::new()
            }
        };
        let comment = match obj.get("comment") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) if s.len() <= 4000 => Some(s.clone()),
            Some(_) => {
                errs.push(FieldError::new("comment", "must be a string of at most 4000 bytes"));
                None
            }
        };
        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(Self {
            task_id: task_id.to_string(),
            specificity: Dims::from_fn(|d| labels[&d]),
            relevance,
            context_used,
            context_overall,
            confidence,
            comment,
            submitted_at,
        })
    }

    /// Equal apart from the submission time.
    pub fn same_content(&self, other: &Self) -> bool {
        Self { submitted_at: 0, ..self.clone() } == Self { submitted_at: 0, ..other.clone() }
    }
}

// ------------------------------------------------------------------- store

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEntry {
    Task(AnnotationTask),
    Annotation(HumanAnnotation),
}

#[derive(Debug, Default)]
struct View {
    tasks: BTreeMap<String, AnnotationTask>,
    annotations: BTreeMap<String, HumanAnnotation>,
    entries: usize,
}

impl View {
    fn apply(&mut self, e: LogEntry) -> Result<()> {
        self.entries += 1;
        match e {
            LogEntry::Task(t) => {
                self.tasks.insert(t.task_id.clone(), t);
            }
            LogEntry::Annotation(a) => {
                let t = self.tasks.get_mut(&a.task_id).ok_or_else(|| Error::Unknown {
                    kind: "task",
                    name: a.task_id.clone(),
                })?;
                t.status = TaskStatus::Done;
                self.annotations.insert(a.task_id.clone(), a);
            }
        }
        Ok(())
    }
}

/// Outcome of a submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub task_id: String,
    pub status: TaskStatus,
    /// False when an identical annotation was already stored.
    pub recorded: bool,
    pub submitted_at: u64,
}

/// Append-only JSONL log with an in-memory view rebuilt by replay.
#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    writer: Mutex<File>,
    view: RwLock<View>,
}

impl AnnotationStore {
    /// Starts a new study log; fails if one already exists.
    pub fn create(path: &Path, tasks: &[AnnotationTask]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::precondition("a study needs at least one task"));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut buf = Vec::new();
        for t in tasks {
            serde_json::to_writer(&mut buf, &LogEntry::Task(t.clone()))?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).and_then(|_| f.sync_all()).map_err(|e| Error::io(path, e))?;
        drop(f);
        Self::open(path)
    }

    /// Replays the log. A torn final line (no trailing newline) was never
    /// acknowledged and is cut off.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            tracing::warn!(path = %path.display(), bytes = text.len() - complete, "dropping torn log tail");
            file.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        }
        let mut view = View::default();
        for (n, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), n + 1)))?;
            view.apply(entry)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer: Mutex::new(file),
            view: RwLock::new(view),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every task, in task-id order.
    pub fn tasks(&self) -> Vec<AnnotationTask> {
        self.view.read().unwrap().tasks.values().cloned().collect()
    }

    pub fn tasks_for(&self, annotator_id: &str) -> Vec<AnnotationTask> {
        let v = self.view.read().unwrap();
        v.tasks.values().filter(|t| t.annotator_id == annotator_id).cloned().collect()
    }

    pub fn task(&self, task_id: &str) -> Option<AnnotationTask> {
        self.view.read().unwrap().tasks.get(task_id).cloned()
    }

    pub fn annotation(&self, task_id: &str) -> Option<HumanAnnotation> {
        self.view.read().unwrap().annotations.get(task_id).cloned()
    }

    pub fn annotators(&self) -> BTreeSet<String> {
        self.view.read().unwrap().tasks.values().map(|t| t.annotator_id.clone()).collect()
    }

    /// Current annotation per task, in task-id order.
    pub fn annotations(&self) -> Vec<HumanAnnotation> {
        self.view.read().unwrap().annotations.values().cloned().collect()
    }

    /// Number of log entries replayed or appended, including superseded ones.
    pub fn log_len(&self) -> usize {
        self.view.read().unwrap().entries
    }

    /// Validates, appends and applies a submission by `annotator_id`.
    pub fn submit(&self, annotator_id: &str, task_id: &str, body: &Value, now: u64) -> Result<Acknowledgement> {
        let task = self.task(task_id).ok_or_else(|| Error::Unknown {
            kind: "task",
            name: task_id.to_string(),
        })?;
        if task.annotator_id != annotator_id {
            return Err(Error::Precondition(format!("task {task_id} is not assigned to {annotator_id}")));
        }
        let ann = HumanAnnotation::from_json(task_id, body, now).map_err(Error::Validation)?;

        let mut w = self.writer.lock().unwrap();
        if let Some(prev) = self.annotation(task_id) {
            if prev.same_content(&ann) {
                return Ok(Acknowledgement {
                    task_id: task_id.to_string(),
                    status: TaskStatus::Done,
                    recorded: false,
                    submitted_at: prev.submitted_at,
                });
            }
        }
        let mut line = serde_json::to_vec(&LogEntry::Annotation(ann.clone()))?;
        line.push(b'\n');
        w.write_all(&line)
            .and_then(|_| w.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.view.write().unwrap().apply(LogEntry::Annotation(ann))?;
        Ok(Acknowledgement {
            task_id: task_id.to_string(),
            status: TaskStatus::Done,
            recorded: true,
            submitted_at: now,
        })
    }

    /// All current annotations as JSONL.
    pub fn export(&self) -> Result<Vec<u8>> {
        crate::pipeline::to_jsonl(&self.annotations())
    }
}

// --------------------------------------------------------------- agreement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAgreement {
    pub dimension: String,
    pub agree: usize,
    pub disagree: usize,
    pub percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleiss_kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAgreement {
    pub scale: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<Correlation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub doubly_annotated: usize,
    pub human_human: Vec<LabelAgreement>,
    pub human_human_scales: Vec<ScaleAgreement>,
    pub human_automated: Vec<LabelAgreement>,
    pub human_automated_scales: Vec<ScaleAgreement>,
}

/// Automated outputs for one question, on the scales annotators use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomatedScores {
    pub specificity: Option<Dims<JudgeLabel>>,
    pub relevance: Option<f64>,
    pub cu: Option<f64>,
}

/// Question-level label per dimension from the claim-level consensus
/// average: yes at ≥ 0.5, no below, na when every claim was na.
pub fn question_label(average: Option<f64>) -> JudgeLabel {
    match average {
        None => JudgeLabel::Na,
        Some(a) if a >= 0.5 => JudgeLabel::Yes,
        Some(_) => JudgeLabel::No,
    }
}

pub fn automated_from_row(m: &MetricRow) -> AutomatedScores {
    AutomatedScores {
        specificity: m
            .specificity
            .as_ref()
            .map(|s| Dims::from_fn(|d| question_label(*s.dimension_averages.get(d)))),
        relevance: m.scores.get("relevance").copied().flatten(),
        cu: m.scores.get("cu").copied().flatten(),
    }
}

/// Automated scores keyed by question for one (generator, evaluator) pair.
pub fn automated_from_rows(rows: &[ReportRow], generator: &str, evaluator: &str) -> BTreeMap<String, AutomatedScores> {
    rows.iter()
        .filter_map(|r| match r {
            ReportRow::Metrics(m) if m.generator == generator && m.evaluator == evaluator => {
                Some((m.question_id.clone(), automated_from_row(m)))
            }
            _ => None,
        })
        .collect()
}

fn label_agreement(dimension: &str, pairs: &[(JudgeLabel, JudgeLabel)]) -> Option<LabelAgreement> {
    if pairs.is_empty() {
        return None;
    }
    let (a, b): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    let (agree, disagree) = stats::agreement_counts(&a, &b).ok()?;
    let items: Vec<Vec<JudgeLabel>> = pairs.iter().map(|(x, y)| vec![*x, *y]).collect();
    let fleiss_kappa = RatingMatrix::from_labels(&items).ok().and_then(|m| stats::fleiss_kappa(&m));
    Some(LabelAgreement {
        dimension: dimension.to_string(),
        agree,
        disagree,
        percent: agree as f64 / pairs.len() as f64 * 100.0,
        fleiss_kappa,
    })
}

fn scale_agreement(scale: &str, pairs: &[(f64, f64)], exact: bool) -> Option<ScaleAgreement> {
    if pairs.is_empty() {
        return None;
    }
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let exact_percent = exact.then(|| a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64 * 100.0);
    let spearman = if a.len() >= 3 { stats::spearman(&a, &b).ok().flatten() } else { None };
    Some(ScaleAgreement {
        scale: scale.to_string(),
        n: pairs.len(),
        exact_percent,
        spearman,
    })
}

/// Human/human agreement over questions with at least two annotations (the
/// two lowest annotator ids are paired), and human/automated agreement over
/// every annotation whose question has automated scores.
pub fn agreement_report(
    tasks: &[AnnotationTask],
    annotations: &[HumanAnnotation],
    automated: &BTreeMap<String, AutomatedScores>,
) -> AgreementReport {
    let by_task: BTreeMap<&str, &AnnotationTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut by_question: BTreeMap<&str, Vec<(&str, &HumanAnnotation)>> = BTreeMap::new();
    for a in annotations {
        if let Some(t) = by_task.get(a.task_id.as_str()) {
            by_question.entry(&t.question_id).or_default().push((&t.annotator_id, a));
        }
    }
    for v in by_question.values_mut() {
        v.sort_by(|x, y| x.0.cmp(y.0));
    }
    let doubles: Vec<(&HumanAnnotation, &HumanAnnotation)> =
        by_question.values().filter(|v| v.len() >= 2).map(|v| (v[0].1, v[1].1)).collect();

    let mut report = AgreementReport {
        doubly_annotated: doubles.len(),
        ..AgreementReport::default()
    };
    for d in Dimension::ALL {
        let pairs: Vec<_> = doubles.iter().map(|(x, y)| (*x.specificity.get(d), *y.specificity.get(d))).collect();
        report.human_human.extend(label_agreement(d.as_str(), &pairs));
    }
    type Scale = fn(&HumanAnnotation) -> u8;
    let scales: [(&str, Scale); 3] = [
        ("relevance", |a| a.relevance),
        ("context_overall", |a| a.context_overall),
        ("confidence", |a| a.confidence),
    ];
    for (name, f) in scales {
        let pairs: Vec<(f64, f64)> = doubles.iter().map(|(x, y)| (f(x) as f64, f(y) as f64)).collect();
        report.human_human_scales.extend(scale_agreement(name, &pairs, true));
    }

    let scored: Vec<(&HumanAnnotation, &AutomatedScores)> = by_question
        .iter()
        .filter_map(|(q, v)| automated.get(*q).map(|s| (v, s)))
        .flat_map(|(v, s)| v.iter().map(move |(_, a)| (*a, s)))
        .collect();
    for d in Dimension::ALL {
        let pairs: Vec<_> = scored
            .iter()
            .filter_map(|(a, s)| s.specificity.as_ref().map(|l| (*a.specificity.get(d), *l.get(d))))
            .collect();
        report.human_automated.extend(label_agreement(d.as_str(), &pairs));
    }
    let rel: Vec<(f64, f64)> = scored.iter().filter_map(|(a, s)| s.relevance.map(|r| (a.relevance as f64, r))).collect();
    report.human_automated_scales.extend(scale_agreement("relevance", &rel, false));
    let cu: Vec<(f64, f64)> = scored.iter().filter_map(|(a, s)| s.cu.map(|c| (a.context_overall as f64, c))).collect();
    report.human_automated_scales.extend(scale_agreement("context_overall", &cu, false));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:02}")).collect()
    }

    fn check_assignment(tasks: &[AnnotationTask], q: usize, a: usize, r: usize) {
        let mut cover: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut load: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tasks {
            assert!(cover.entry(&t.question_id).or_default().insert(&t.annotator_id), "annotator repeated");
            *load.entry(&t.annotator_id).or_default() += 1;
        }
        assert_eq!(cover.len(), q);
        assert!(cover.values().all(|s| s.len() == r));
        let loads: Vec<usize> = load.values().copied().collect();
        assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1);
        assert!(load.len() <= a);
        assert_eq!(tasks.iter().map(|t| &t.task_id).collect::<BTreeSet<_>>().len(), tasks.len());
    }

    #[test]
    fn fifty_questions_ten_annotators() {
        let t = assign_tasks(&ids("q", 50), &ids("a", 10), 2, 9).unwrap();
        check_assignment(&t, 50, 10, 2);
        for a in ids("a", 10) {
            assert_eq!(t.iter().filter(|x| x.annotator_id == a).count(), 10);
        }
        assert_eq!(t, assign_tasks(&ids("q", 50), &ids("a", 10), 2, 9).unwrap());
        assert!(assign_tasks(&ids("q", 5), &ids("a", 2), 3, 0).is_err());
        assert!(assign_tasks(&ids("q", 5), &["x".into(), "x".into()], 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn assignment_invariants(q in 1usize..40, a in 1usize..12, r in 1usize..5, seed in any::<u64>()) {
            prop_assume!(r <= a);
            let t = assign_tasks(&ids("q", q), &ids("a", a), r, seed).unwrap();
            check_assignment(&t, q, a, r);
        }
    }

    pub(crate) fn body(rel: i64) -> Value {
        json!({
            "specificity": {"hazard": "yes", "location": "no", "timeline": "na", "intensity": "yes"},
            "relevance": rel,
            "context_used": [true, false, true, true, false],
            "context_overall": 7,
            "confidence": 8,
            "comment": "fine"
        })
    }

    #[test]
    fn validation_names_fields() {
        let a = HumanAnnotation::from_json("t", &body(5), 1).unwrap();
        assert_eq!(a.specificity.timeline, JudgeLabel::Na);
        let errs = HumanAnnotation::from_json("t", &body(11), 1).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "relevance");
        let mut b = body(5);
        b["specificity"].as_object_mut().unwrap().remove("intensity");
        b["context_used"] = json!([true]);
        b["extra"] = json!(1);
        let fields: Vec<String> = HumanAnnotation::from_json("t", &b, 1).unwrap_err().into_iter().map(|e| e.field).collect();
        assert_eq!(fields, vec!["extra", "specificity.intensity", "context_used"]);
    }

    fn study(dir: &Path) -> (PathBuf, AnnotationStore) {
        let path = dir.join("study.jsonl");
        let tasks = assign_tasks(&ids("q", 4), &ids("a", 2), 2, 1).unwrap();
        let store = AnnotationStore::create(&path, &tasks).unwrap();
        (path, store)
    }

    #[test]
    fn submit_round_trip_and_idempotence() {
        let tmp = tempfile::tempdir().unwrap();
        let (path, store) = study(tmp.path());
        let t = &store.tasks_for("a00")[0];
        assert_eq!(t.status, TaskStatus::Pending);
        let ack = store.submit("a00", &t.task_id, &body(6), 100).unwrap();
        assert!(ack.recorded);
        assert_eq!(store.task(&t.task_id).unwrap().status, TaskStatus::Done);
        assert_eq!(store.annotation(&t.task_id).unwrap().relevance, 6);
        let n = store.log_len();
        let again = store.submit("a00", &t.task_id, &body(6), 200).unwrap();
        assert!(!again.recorded);
        assert_eq!(again.submitted_at, 100);
        assert_eq!(store.log_len(), n);
        store.submit("a00", &t.task_id, &body(9), 300).unwrap();
        assert_eq!(store.log_len(), n + 1);
        assert!(matches!(store.submit("a01", &t.task_id, &body(6), 1), Err(Error::Precondition(_))));
        assert!(matches!(store.submit("a00", "nope", &body(6), 1), Err(Error::Unknown { .. })));
        assert!(matches!(store.submit("a00", &t.task_id, &body(0), 1), Err(Error::Validation(_))));
        drop(store);
        let reopened = AnnotationStore::open(&path).unwrap();
        assert_eq!(reopened.annotation(&t.task_id).unwrap().relevance, 9);
        assert_eq!(reopened.log_len(), n + 1);
        assert!(AnnotationStore::create(&path, &[]).is_err());
    }

    #[test]
    fn crash_after_append_is_replayed() {
        let tmp = tempfile::tempdir().unwrap();
        let (path, store) = study(tmp.path());
        let t = store.tasks_for("a01")[0].clone();
        drop(store);
        // append happened, view update did not
        let ann = HumanAnnotation::from_json(&t.task_id, &body(4), 5).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{}", serde_json::to_string(&LogEntry::Annotation(ann.clone())).unwrap()).unwrap();
        // torn write of a second, unacknowledged entry
        write!(f, "{{\"event\":\"annotation\",\"task_id\":").unwrap();
        drop(f);
        let store = AnnotationStore::open(&path).unwrap();
        assert_eq!(store.annotation(&t.task_id), Some(ann));
        assert_eq!(store.annotations().len(), 1);
        assert!(fs::read_to_string(&path).unwrap().ends_with('\n'));
        let other = store.tasks_for("a01")[1].clone();
        store.submit("a01", &other.task_id, &body(3), 6).unwrap();
        drop(store);
        assert_eq!(AnnotationStore::open(&path).unwrap().annotations().len(), 2);
    }

    fn ann(task: &str, hazard: JudgeLabel, rel: u8) -> HumanAnnotation {
        HumanAnnotation {
            task_id: task.into(),
            specificity: Dims {
                hazard,
                location: JudgeLabel::Yes,
                timeline: JudgeLabel::No,
                intensity: JudgeLabel::Na,
            },
            relevance: rel,
            context_used: vec![true; 5],
            context_overall: rel,
            confidence: 5,
            comment: None,
            submitted_at: 0,
        }
    }

    fn task(id: &str, q: &str, a: &str) -> AnnotationTask {
        AnnotationTask {
            task_id: id.into(),
            question_id: q.into(),
            annotator_id: a.into(),
            payload: None,
            status: TaskStatus::Done,
        }
    }

    #[test]
    fn table_hazard_row() {
        let mut tasks = Vec::new();
        let mut anns = Vec::new();
        for i in 0..50 {
            let q = format!("q{i}");
            tasks.push(task(&format!("{q}-x"), &q, "x"));
            tasks.push(task(&format!("{q}-y"), &q, "y"));
            let a = if i % 2 == 0 { JudgeLabel::Yes } else { JudgeLabel::No };
            let b = if i < 4 { JudgeLabel::Na } else { a };
            anns.push(ann(&format!("{q}-x"), a, (i % 10 + 1) as u8));
            anns.push(ann(&format!("{q}-y"), b, (i % 10 + 1) as u8));
        }
        let r = agreement_report(&tasks, &anns, &BTreeMap::new());
        assert_eq!(r.doubly_annotated, 50);
        let h = &r.human_human[0];
        assert_eq!((h.dimension.as_str(), h.agree, h.disagree), ("hazard", 46, 4));
        assert!((h.percent - 92.0).abs() < 1e-12);
        // location is unanimous yes everywhere: kappa undefined
        assert_eq!(r.human_human[1].percent, 100.0);
        assert_eq!(r.human_human[1].fleiss_kappa, None);
        let rel = &r.human_human_scales[0];
        assert_eq!(rel.exact_percent, Some(100.0));
        assert!((rel.spearman.unwrap().rho - 1.0).abs() < 1e-12);
        assert!(r.human_automated.is_empty());
    }

    #[test]
    fn perfect_agreement_gives_unit_kappa() {
        let mut tasks = Vec::new();
        let mut anns = Vec::new();
        for i in 0..6 {
            let q = format!("q{i}");
            tasks.push(task(&format!("{q}-x"), &q, "x"));
            tasks.push(task(&format!("{q}-y"), &q, "y"));
            let l = JudgeLabel::ALL[i % 3];
            anns.push(ann(&format!("{q}-x"), l, 3));
            anns.push(ann(&format!("{q}-y"), l, 3));
        }
        let r = agreement_report(&tasks, &anns, &BTreeMap::new());
        assert_eq!(r.human_human[0].percent, 100.0);
        assert!((r.human_human[0].fleiss_kappa.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn human_vs_automated() {
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), &format!("q{i}"), "x")).collect();
        let anns: Vec<_> = (0..4).map(|i| ann(&format!("t{i}"), JudgeLabel::Yes, (i + 1) as u8)).collect();
        let auto: BTreeMap<String, AutomatedScores> = (0..4)
            .map(|i| {
                (
                    format!("q{i}"),
                    AutomatedScores {
                        specificity: Some(Dims::from_fn(|d| if d == Dimension::Hazard && i == 0 { JudgeLabel::No } else { question_label(Some(1.0)) })),
                        relevance: Some(i as f64 * 0.1),
                        cu: Some(0.5 - i as f64 * 0.1),
                    },
                )
            })
            .collect();
        let r = agreement_report(&tasks, &anns, &auto);
        assert_eq!(r.doubly_annotated, 0);
        assert!(r.human_human.is_empty());
        assert_eq!(r.human_automated[0].agree, 3);
        assert!((r.human_automated_scales[0].spearman.unwrap().rho - 1.0).abs() < 1e-12);
        assert!((r.human_automated_scales[1].spearman.unwrap().rho + 1.0).abs() < 1e-12);
        assert_eq!(question_label(None), JudgeLabel::Na);
        assert_eq!(question_label(Some(0.49)), JudgeLabel::No);
    }
}

//! Multi-judge specificity labels, voting, and the weighted aggregate score.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::answer::StructuredAnswer;
use crate::claims::{self, AtomicClaim, SpecificDetails};
use crate::contract;
use crate::error::{Error, Result};
use crate::gateway::{ChatModel, ChatRequest};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Hazard,
    Location,
    Timeline,
    Intensity,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Hazard,
        Dimension::Location,
        Dimension::Timeline,
        Dimension::Intensity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Hazard => "hazard",
            Dimension::Location => "location",
            Dimension::Timeline => "timeline",
            Dimension::Intensity => "intensity",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per dimension, serialized in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dims<T> {
    pub hazard: T,
    pub location: T,
    pub timeline: T,
    pub intensity: T,
}

impl<T> Dims<T> {
    pub fn from_fn(mut f: impl FnMut(Dimension) -> T) -> Self {
        Self {
            hazard: f(Dimension::Hazard),
            location: f(Dimension::Location),
            timeline: f(Dimension::Timeline),
            intensity: f(Dimension::Intensity),
        }
    }

    pub fn get(&self, d: Dimension) -> &T {
        match d {
            Dimension::Hazard => &self.hazard,
            Dimension::Location => &self.location,
            Dimension::Timeline => &self.timeline,
            Dimension::Intensity => &self.intensity,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Dimension, &T)> {
        Dimension::ALL.into_iter().map(move |d| (d, self.get(d)))
    }
}

impl SpecificDetails {
    pub fn get(&self, d: Dimension) -> Option<&str> {
        match d {
            Dimension::Hazard => self.hazard.as_deref(),
            Dimension::Location => self.location.as_deref(),
            Dimension::Timeline => self.timeline.as_deref(),
            Dimension::Intensity => self.intensity.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JudgeLabel {
    #[serde(rename = "yes")]
    Yes,
    #[serde(rename = "no")]
    No,
    #[serde(rename = "N/A")]
    Na,
}

impl JudgeLabel {
    pub const ALL: [JudgeLabel; 3] = [JudgeLabel::Yes, JudgeLabel::No, JudgeLabel::Na];

    /// Case-insensitive; accepts "N/A", "NA" and "n/a".
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(JudgeLabel::Yes),
            "no" => Some(JudgeLabel::No),
            "n/a" | "na" => Some(JudgeLabel::Na),
            _ => None,
        }
    }

    /// yes → 1, no → 0, na → undefined.
    pub fn value(self) -> Option<u8> {
        match self {
            JudgeLabel::Yes => Some(1),
            JudgeLabel::No => Some(0),
            JudgeLabel::Na => None,
        }
    }

    /// Tie-break rank: lower wins (no, then na, then yes).
    fn precedence(self) -> u8 {
        match self {
            JudgeLabel::No => 0,
            JudgeLabel::Na => 1,
            JudgeLabel::Yes => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimJudgment {
    pub claim_id: String,
    pub judge_id: String,
    pub labels: Dims<JudgeLabel>,
    pub reasoning: Dims<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusVector {
    pub claim_id: String,
    /// 1, 0, or null for na.
    pub values: Dims<Option<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecificityWeights {
    pub alpha: Dims<f64>,
}

impl Default for SpecificityWeights {
    fn default() -> Self {
        Self {
            alpha: Dims {
                hazard: 0.6,
                location: 0.2,
                timeline: 0.1,
                intensity: 0.1,
            },
        }
    }
}

impl SpecificityWeights {
    pub fn validate(&self) -> Result<()> {
        match self.alpha.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            Some((d, w)) => Err(Error::Config(format!("weight for {d} must be positive, got {w}"))),
            None => Ok(()),
        }
    }
}

fn render_evidence(evidence: &[&str]) -> String {
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{}] {}", i + 1, crate::text::squash_whitespace(e)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_judgment(reply: &str, claim_id: &str, judge_id: &str) -> std::result::Result<ClaimJudgment, String> {
    let v = contract::parse_json(reply)?;
    let obj = v.as_object().ok_or("expected a JSON object")?;
    let mut bad = None;
    let labels = Dims::from_fn(|d| {
        let raw = obj.get(d.as_str()).and_then(Value::as_str);
        match raw.and_then(JudgeLabel::parse) {
            Some(l) => l,
            None => {
                bad.get_or_insert_with(|| {
                    format!("`{d}` must be \"yes\", \"no\" or \"N/A\", got {:?}", obj.get(d.as_str()))
                });
                JudgeLabel::Na
            }
        }
    });
    if let Some(b) = bad {
        return Err(b);
    }
    let reasoning = Dims::from_fn(|d| {
        obj.get(&format!("{d}_reasoning"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    });
    Ok(ClaimJudgment {
        claim_id: claim_id.to_string(),
        judge_id: judge_id.to_string(),
        labels,
        reasoning,
    })
}

/// Labels one claim's four details against the evidence.
///
/// `sample` becomes the request seed so repeated slots of one provider are
/// distinct samples.
pub fn judge_claim(
    claim: &AtomicClaim,
    details: &SpecificDetails,
    evidence: &[&str],
    judge: &dyn ChatModel,
    judge_id: &str,
    sample: u64,
) -> Result<ClaimJudgment> {
    if evidence.is_empty() {
        return Err(Error::precondition("judging needs at least one evidence passage"));
    }
    let details_json = serde_json::to_string(details)?;
    let prompt = prompts::fill(
        prompts::JUDGE_TEMPLATE,
        &[
            ("claim", claim.text.trim()),
            ("specific_info", &details_json),
            ("knowledge", &render_evidence(evidence)),
        ],
    );
    let request = ChatRequest::judge(prompt).with_seed(sample);
    contract::ask(judge, request, "specificity judgment", |r| {
        parse_judgment(r, &claim.claim_id, judge_id)
    })
}

/// Winning label among `labels`: highest count, ties by no > na > yes.
pub fn vote(labels: impl IntoIterator<Item = JudgeLabel>) -> Option<JudgeLabel> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.precedence() as usize] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    [JudgeLabel::No, JudgeLabel::Na, JudgeLabel::Yes]
        .into_iter()
        .find(|l| counts[l.precedence() as usize] == best)
}

pub fn majority_vote(judgments: &[ClaimJudgment]) -> Result<ConsensusVector> {
    let first = judgments
        .first()
        .ok_or_else(|| Error::precondition("majority vote needs at least one judgment"))?;
    if judgments.iter().any(|j| j.claim_id != first.claim_id) {
        return Err(Error::precondition("judgments refer to different claims"));
    }
    let values = Dims::from_fn(|d| {
        vote(judgments.iter().map(|j| *j.labels.get(d)))
            .and_then(JudgeLabel::value)
    });
    Ok(ConsensusVector {
        claim_id: first.claim_id.clone(),
        values,
    })
}

/// Per-dimension mean over claims, skipping na; `None` when all are na.
pub fn dimension_average(consensus: &[ConsensusVector]) -> Dims<Option<f64>> {
    Dims::from_fn(|d| {
        let vals: Vec<f64> = consensus
            .iter()
            .filter_map(|c| c.values.get(d).map(f64::from))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    })
}

/// Weighted mean of the defined dimension averages.
pub fn aggregate(averages: &Dims<Option<f64>>, weights: &SpecificityWeights) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, avg) in averages.iter() {
        if let Some(s) = avg {
            let a = *weights.alpha.get(d);
            num += a * s;
            den += a;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// A judge slot: identifier plus the model behind it.
pub struct JudgeSlot<'a> {
    pub judge_id: String,
    pub model: &'a dyn ChatModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub claim: AtomicClaim,
    pub details: SpecificDetails,
    pub judgments: Vec<ClaimJudgment>,
    pub consensus: ConsensusVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub claims: Vec<ClaimReport>,
    pub dimension_averages: Dims<Option<f64>>,
    /// `None` when every dimension is na across all claims.
    pub score: Option<f64>,
}

/// Decompose, extract, judge with every slot, vote, average and aggregate.
///
/// `claims` may carry a precomputed decomposition; otherwise `extractor`
/// decomposes the answer.
pub fn score_answer(
    answer: &StructuredAnswer,
    answer_id: &str,
    claims: Option<Vec<AtomicClaim>>,
    evidence: &[&str],
    extractor: &dyn ChatModel,
    judges: &[JudgeSlot<'_>],
    weights: &SpecificityWeights,
) -> Result<SpecificityReport> {
    if judges.is_empty() {
        return Err(Error::precondition("at least one judge is required"));
    }
    weights.validate()?;
    let claims = match claims {
        Some(c) => c,
        None => claims::decompose_answer(answer, answer_id, extractor)?,
    };
    if claims.is_empty() {
        return Err(Error::precondition("decomposition produced no claims"));
    }
    let reports: Vec<ClaimReport> = claims
        .into_par_iter()
        .map(|claim| {
            let details = claims::extract_details(&claim, extractor)?;
            let judgments = judges
                .iter()
                .enumerate()
                .map(|(slot, j)| judge_claim(&claim, &details, evidence, j.model, &j.judge_id, slot as u64))
                .collect::<Result<Vec<_>>>()?;
            let consensus = majority_vote(&judgments)?;
            Ok(ClaimReport {
                claim,
                details,
                judgments,
                consensus,
            })
        })
        .collect::<Result<_>>()?;
    let consensus: Vec<ConsensusVector> = reports.iter().map(|r| r.consensus.clone()).collect();
    let dimension_averages = dimension_average(&consensus);
    let score = aggregate(&dimension_averages, weights);
    Ok(SpecificityReport {
        claims: reports,
        dimension_averages,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimOrigin;
    use crate::gateway::{Capability, Provider, ProviderProfile};
    use proptest::prelude::*;
    use JudgeLabel::{Na, No, Yes};

    fn judgment(claim: &str, labels: [JudgeLabel; 4]) -> ClaimJudgment {
        ClaimJudgment {
            claim_id: claim.into(),
            judge_id: "j".into(),
            labels: Dims {
                hazard: labels[0],
                location: labels[1],
                timeline: labels[2],
                intensity: labels[3],
            },
            reasoning: Dims::default(),
        }
    }

    #[test]
    fn label_parsing_and_serialization() {
        assert_eq!(JudgeLabel::parse("YES"), Some(Yes));
        assert_eq!(JudgeLabel::parse(" n/a "), Some(Na));
        assert_eq!(JudgeLabel::parse("maybe"), None);
        assert_eq!(serde_json::to_string(&Na).unwrap(), "\"N/A\"");
    }

    #[test]
    fn vote_examples() {
        assert_eq!(vote([Yes, Yes, No]), Some(Yes));
        assert_eq!(vote([Yes, No, Na]), Some(No));
        assert_eq!(vote([Yes, Na, Na]), Some(Na));
        assert_eq!(vote([Yes, Na]), Some(Na));
        assert_eq!(vote([]), None);
    }

    #[test]
    fn vote_rejects_mixed_claims() {
        let js = [judgment("a", [Yes; 4]), judgment("b", [Yes; 4])];
        assert!(majority_vote(&js).is_err());
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn averages_and_aggregate() {
        let cv = |h: Option<u8>| ConsensusVector {
            claim_id: "c".into(),
            values: Dims { hazard: h, location: None, timeline: None, intensity: None },
        };
        let avg = dimension_average(&[cv(Some(1)), cv(Some(0)), cv(None)]);
        assert_eq!(avg.hazard, Some(0.5));
        assert_eq!(avg.intensity, None);
        let w = SpecificityWeights::default();
        let s = aggregate(&Dims { hazard: Some(1.0), location: Some(0.0), timeline: None, intensity: None }, &w).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
        assert_eq!(aggregate(&Dims { hazard: Some(1.0), location: Some(1.0), timeline: Some(1.0), intensity: Some(1.0) }, &w), Some(1.0));
        assert_eq!(aggregate(&Dims { hazard: Some(0.5), ..Dims::default() }, &w), Some(0.5));
        assert_eq!(aggregate(&Dims::default(), &w), None);
    }

    #[test]
    fn weights_must_be_positive() {
        let mut w = SpecificityWeights::default();
        w.alpha.timeline = 0.0;
        assert!(w.validate().is_err());
    }

    #[test]
    fn judgment_schema() {
        let ok = r#"{"claim":"c","hazard":"YES","location":"no","timeline":"N/A","intensity":"na","hazard_reasoning":"r"}"#;
        let j = parse_judgment(ok, "c1", "j").unwrap();
        assert_eq!(j.labels, Dims { hazard: Yes, location: No, timeline: Na, intensity: Na });
        assert_eq!(j.reasoning.hazard, "r");
        assert!(parse_judgment(r#"{"hazard":"maybe","location":"no","timeline":"no","intensity":"no"}"#, "c", "j").is_err());
        assert!(parse_judgment(r#"{"hazard":"yes"}"#, "c", "j").is_err());
    }

    fn claim(text: &str) -> AtomicClaim {
        AtomicClaim { claim_id: "c1".into(), text: text.into(), origin: ClaimOrigin::Answer, source_doc_id: None }
    }

    fn mock(seed: u64) -> Provider {
        Provider::from_profile("m", ProviderProfile::new(format!("mock://{seed}"), "mock").with_capabilities([Capability::Chat])).unwrap()
    }

    #[test]
    fn absent_detail_is_na_under_rule_judge() {
        let p = mock(2);
        let c = claim("Wildfires threaten substations.");
        let details = SpecificDetails { hazard: Some("Wildfires".into()), ..Default::default() };
        let j = judge_claim(&c, &details, &["Wildfires raise outage risk."], &p, "m", 0).unwrap();
        assert_eq!(j.labels.location, Na);
        assert_eq!(j.labels.timeline, Na);
        assert_eq!(j.labels.intensity, Na);
        assert!(judge_claim(&c, &details, &[], &p, "m", 0).is_err());
    }

    #[test]
    fn scripted_judges_all_yes_score_one() {
        let reply = r#"{"hazard":"yes","location":"yes","timeline":"yes","intensity":"yes"}"#;
        let judge = Provider::new(
            "s",
            ProviderProfile::new("mock://0", "s").with_capabilities([Capability::Chat]),
            std::sync::Arc::new(crate::gateway::MockBackend::new(0).with_reply(prompts::JUDGE_MARKER, reply)),
        );
        let extractor = mock(0);
        let a = StructuredAnswer::new("", vec!["Heat waves hit Kern County, CA by 2050.".into()]);
        let slots: Vec<JudgeSlot> = (0..3).map(|i| JudgeSlot { judge_id: format!("s#{i}"), model: &judge }).collect();
        let r = score_answer(&a, "q", None, &["e"], &extractor, &slots, &SpecificityWeights::default()).unwrap();
        assert_eq!(r.score, Some(1.0));
        assert_eq!(r.claims[0].judgments.len(), 3);
    }

    #[test]
    fn empty_decomposition_is_an_error() {
        let extractor = Provider::new(
            "s",
            ProviderProfile::new("mock://0", "s").with_capabilities([Capability::Chat]),
            std::sync::Arc::new(crate::gateway::MockBackend::new(0).with_reply(prompts::DECOMPOSE_MARKER, "[]")),
        );
        let a = StructuredAnswer::new("", vec!["x".into()]);
        let slots = [JudgeSlot { judge_id: "s".into(), model: &extractor }];
        assert!(score_answer(&a, "q", None, &["e"], &extractor, &slots, &SpecificityWeights::default()).is_err());
    }

    fn label() -> impl Strategy<Value = JudgeLabel> {
        prop_oneof![Just(Yes), Just(No), Just(Na)]
    }

    proptest! {
        #[test]
        fn vote_permutation_invariant(mut ls in proptest::collection::vec(label(), 1..8), seed in any::<u64>()) {
            let a = vote(ls.clone());
            let n = ls.len();
            ls.rotate_left((seed % n as u64) as usize);
            ls.reverse();
            prop_assert_eq!(a, vote(ls));
        }

        #[test]
        fn single_judge_consensus_is_identity(ls in proptest::array::uniform4(label())) {
            let c = majority_vote(&[judgment("c", ls)]).unwrap();
            for (i, d) in Dimension::ALL.iter().enumerate() {
                prop_assert_eq!(*c.values.get(*d), ls[i].value());
            }
        }

        #[test]
        fn aggregate_bounded_and_monotone(avgs in proptest::array::uniform4(proptest::option::of(0.0f64..=1.0)), bump in 0.0f64..0.5, which in 0usize..4) {
            let w = SpecificityWeights::default();
            let dims = Dims { hazard: avgs[0], location: avgs[1], timeline: avgs[2], intensity: avgs[3] };
            if let Some(s) = aggregate(&dims, &w) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
                let mut up = avgs;
                if let Some(v) = up[which] { up[which] = Some((v + bump).min(1.0)); }
                let dims2 = Dims { hazard: up[0], location: up[1], timeline: up[2], intensity: up[3] };
                prop_assert!(aggregate(&dims2, &w).unwrap() >= s - 1e-12);
            } else {
                prop_assert!(avgs.iter().all(Option::is_none));
            }
        }
    }
}

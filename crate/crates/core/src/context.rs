//! Teacher-forced answer confidence and leave-one-out context utilization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::AtomicClaim;
use crate::error::{Error, Result};
use crate::gateway::{TokenScore, TokenScorer};
use crate::prompts;
use crate::stats::{self, Correlation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMethod {
    #[default]
    GeometricMean,
    EntropyProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub value: f64,
    pub token_count: usize,
    pub method: ConfidenceMethod,
}

/// Entropy (nats) of the returned alternatives plus one bucket for the
/// remaining probability mass.
fn token_entropy(t: &TokenScore) -> Result<f64> {
    let alts = t
        .top_alternatives
        .as_ref()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| Error::precondition(format!("token {:?} has no alternatives", t.token_text)))?;
    let mut h = 0.0;
    let mut mass = 0.0;
    for (_, lp) in alts {
        let p = lp.exp();
        mass += p;
        if p > 0.0 {
            h -= p * lp;
        }
    }
    let rest = 1.0 - mass;
    if rest > 0.0 {
        h -= rest * rest.ln();
    }
    Ok(h.max(0.0))
}

pub fn confidence_from_scores(tokens: &[TokenScore], method: ConfidenceMethod) -> Result<ConfidenceReport> {
    if tokens.is_empty() {
        return Err(Error::precondition("scorer returned zero tokens"));
    }
    let t = tokens.len() as f64;
    let value = match method {
        ConfidenceMethod::GeometricMean => {
            let mean = tokens.iter().map(|x| x.logprob).sum::<f64>() / t;
            mean.exp()
        }
        ConfidenceMethod::EntropyProxy => {
            let mut sum = 0.0;
            for x in tokens {
                sum += token_entropy(x)?;
            }
            (-sum / t).exp()
        }
    };
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Invariant(format!("confidence {value} outside [0, 1]")));
    }
    Ok(ConfidenceReport {
        value,
        token_count: tokens.len(),
        method,
    })
}

/// Confidence of `answer` forced after `conditioning`.
pub fn confidence(
    answer: &str,
    conditioning: &str,
    scorer: &dyn TokenScorer,
    method: ConfidenceMethod,
) -> Result<ConfidenceReport> {
    if answer.trim().is_empty() {
        return Err(Error::precondition("answer is empty"));
    }
    let tokens = scorer.score_completion(conditioning, &prompts::conditioning_completion(answer))?;
    confidence_from_scores(&tokens, method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimContribution {
    pub claim_id: String,
    pub delta: f64,
    /// Null when the baseline confidence is zero.
    pub relative: Option<f64>,
    pub loo_confidence: f64,
}

fn contribution(claim_id: &str, baseline: f64, loo: f64) -> Result<ClaimContribution> {
    let delta = baseline - loo;
    let relative = (baseline > 0.0).then(|| delta / baseline);
    if !(delta > -1.0 && delta < 1.0) {
        return Err(Error::Invariant(format!("delta {delta} for {claim_id} outside (-1, 1)")));
    }
    if relative.is_some_and(|r| r > 1.0 || r.is_nan()) {
        return Err(Error::Invariant(format!("relative delta for {claim_id} exceeds 1")));
    }
    Ok(ClaimContribution {
        claim_id: claim_id.to_string(),
        delta,
        relative,
        loo_confidence: loo,
    })
}

fn conditioning(q: &str, claims: &[AtomicClaim], skip: Option<usize>) -> String {
    let kept: Vec<&str> = claims
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, c)| c.text.as_str())
        .collect();
    prompts::conditioning_prompt(q, &kept)
}

fn check_inputs(claims: &[AtomicClaim]) -> Result<()> {
    if claims.is_empty() {
        return Err(Error::precondition("context utilization needs at least one claim"));
    }
    Ok(())
}

/// Δᵢ and δᵢ for claim `i` (two scorer calls).
pub fn claim_contribution(
    answer: &str,
    q: &str,
    claims: &[AtomicClaim],
    i: usize,
    scorer: &dyn TokenScorer,
    method: ConfidenceMethod,
) -> Result<ClaimContribution> {
    check_inputs(claims)?;
    if i >= claims.len() {
        return Err(Error::precondition(format!("claim index {i} out of range ({} claims)", claims.len())));
    }
    let base = confidence(answer, &conditioning(q, claims, None), scorer, method)?.value;
    let loo = confidence(answer, &conditioning(q, claims, Some(i)), scorer, method)?.value;
    contribution(&claims[i].claim_id, base, loo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuReport {
    pub cu: f64,
    pub cu_rel: Option<f64>,
    pub cu_rel_pct: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub per_claim: Vec<ClaimContribution>,
    pub baseline_confidence: f64,
    pub method: ConfidenceMethod,
}

/// Builds the report from a baseline and leave-one-out confidences.
pub fn cu_from_confidences(
    claim_ids: &[&str],
    baseline: f64,
    loo: &[f64],
    method: ConfidenceMethod,
) -> Result<CuReport> {
    if claim_ids.is_empty() || claim_ids.len() != loo.len() {
        return Err(Error::precondition("need one leave-one-out confidence per claim"));
    }
    let per_claim = claim_ids
        .iter()
        .zip(loo)
        .map(|(id, &l)| contribution(id, baseline, l))
        .collect::<Result<Vec<_>>>()?;
    let n = per_claim.len() as f64;
    let deltas = per_claim.iter().map(|c| c.delta);
    let cu = deltas.clone().sum::<f64>() / n;
    let min = deltas.clone().fold(f64::INFINITY, f64::min);
    let max = deltas.fold(f64::NEG_INFINITY, f64::max);
    let cu_rel = if baseline > 0.0 {
        Some(per_claim.iter().filter_map(|c| c.relative).sum::<f64>() / n)
    } else {
        None
    };
    Ok(CuReport {
        cu,
        cu_rel,
        cu_rel_pct: cu_rel.map(|r| r * 100.0),
        min,
        max,
        per_claim,
        baseline_confidence: baseline,
        method,
    })
}

/// Baseline plus one leave-one-out scoring per claim, |C| + 1 calls.
pub fn cu_scores(
    answer: &str,
    q: &str,
    claims: &[AtomicClaim],
    scorer: &dyn TokenScorer,
    method: ConfidenceMethod,
) -> Result<CuReport> {
    check_inputs(claims)?;
    let prompts: Vec<String> = std::iter::once(conditioning(q, claims, None))
        .chain((0..claims.len()).map(|i| conditioning(q, claims, Some(i))))
        .collect();
    let values = prompts
        .par_iter()
        .map(|p| confidence(answer, p, scorer, method).map(|r| r.value))
        .collect::<Result<Vec<f64>>>()?;
    let ids: Vec<&str> = claims.iter().map(|c| c.claim_id.as_str()).collect();
    cu_from_confidences(&ids, values[0], &values[1..], method)
}

/// Spearman correlation between claim-conditioned and document-conditioned
/// confidences.
pub fn sensitivity_correlation(f_claims: &[f64], f_docs: &[f64]) -> Result<Option<Correlation>> {
    stats::spearman(f_claims, f_docs)
}

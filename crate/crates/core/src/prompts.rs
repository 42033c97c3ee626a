//! Prompt templates sent to chat models, plus the conditioning layout used
//! for teacher-forced scoring.
//!
//! Every template carries a fixed first line ("marker") that the offline mock
//! backend uses to recognise the task.

/// Version tag of the prompt set; bump when any template changes.
pub const PROMPT_SET_VERSION: u32 = 1;

pub const DECOMPOSE_MARKER: &str = "You decompose answers into atomic claims.";

pub const DECOMPOSE_TEMPLATE: &str = "You decompose answers into atomic claims.
Split the answer below into a list of atomic claims. Each claim must be a single, self-contained factual statement that expresses exactly one fact and can be read without the rest of the answer.
Return ONLY a JSON array of strings, one string per claim, with no markdown and no text outside the array.

Answer:
{answer}";

pub const DETAILS_MARKER: &str = "You extract specific details from a claim.";

pub const DETAILS_TEMPLATE: &str = "You extract specific details from a claim.
Extract every explicit mention of the following dimensions from the claim: hazard type, location, timeline, intensity.
Copy each mention verbatim from the claim. Use null for a dimension the claim does not mention.
Return ONLY a JSON object with exactly the keys \"hazard\", \"location\", \"timeline\", \"intensity\" and string or null values.

Claim: {claim}";

pub const JUDGE_MARKER: &str = "You are a strict evaluator of specificity and factuality.";

/// Judge prompt; slots are `{claim}`, `{specific_info}` and `{knowledge}`.
pub const JUDGE_TEMPLATE: &str = r#"You are a strict evaluator of specificity and factuality.

Given for each claim:
- A factual claim
- A list of evidence passages from a trusted source
- A set of specific details extracted from the claim (hazard type, location, timeline, intensity)
Your task is to evaluate the claim using ONLY the provided evidence.

LABEL DEFINITIONS

For each specific detail (hazard, location, timeline, intensity), use EXACTLY one of the following labels:
- "yes":
The detail is explicitly mentioned in the claim AND it matches the same specific detail discussed in the knowledge source.
- "no":
The detail is explicitly mentioned in the claim BUT the knowledge source does NOT provide sufficient information to verify it. (This includes cases where the evidence contradicts the claim or does not confirm it.)
- "N/A":
The detail is NOT mentioned in the claim at all.
For location matching, agreement at the STATE level is sufficient; an exact county or city match is not required. Do NOT infer or assume any facts beyond the evidence. Lack of verification MUST be labeled as "no" (not "N/A").

EVALUATION STEPS

Your task is to:
1. Determine whether the **claim is factually true, false, or partially correct**, using ONLY the evidence.
2. For each of the 4 specific details (hazard, location, timeline, intensity):
 - Assign "yes", "no", or "N/A" based on the rules above.
 - Provide a brief factual explanation for your decision.
3. Justify your overall factuality decision concisely and objectively.
4. If the claim is "true", cite the exact evidence passage(s) that support it.
5. If the claim is "false" or "partially correct", explain precisely which details are unsupported or incorrect.

OUTPUT FORMAT

Return your answer as a SINGLE JSON object in the following format (with no markdown, no extra text, and no explanations outside the JSON):
{
"claim": "<Claim>",
"hazard": "yes" | "no" | "N/A",
"hazard_reasoning": "<Explain whether hazard mentioned in the claim is explicitly supported>",
"location": "yes" | "no" | "N/A",
"location_reasoning": "<Explain whether location mentioned in the claim is supported>",
"timeline": "yes" | "no" | "N/A",
"timeline_reasoning": "<Explain whether timeline like date and range of years mentioned in the claim is supported>",
"intensity": "yes" | "no" | "N/A",
"intensity_reasoning": "<Explain whether intensity mentioned in the claim is supported>"
}

INPUTS

Claim: {claim}
Specific Details to Check:
{specific_info}
Evidence Passages: {knowledge}
"#;

pub const MASK_MARKER: &str = "You are a semantic masker.";

/// Masking prompt; slot `{answer}`.
pub const MASK_TEMPLATE: &str = r#"You are a semantic masker. Given the following answer, replace:

- hazard types with [HAZARD]
- profession-related terms with [PROFESSION]
- concern with [CONCERN] (e.g., critical vulnerabilities, maintenance strategies, modernization measures, maintenance strategies, projected impact, design standards, cascading impacts etc.)
- infrastructure with [INFRASTRUCTURE] (e.g., "highway network", "bridge system", "public transit system", "railway infrastructure", "airport facilities", "port facilities", "freight terminals", "traffic control systems", "water treatment plant", "wastewater system", "dam infrastructure", "stormwater system", "coastal protection", "water distribution network", "electrical grid", "power distribution network", "EV charging network", "renewable energy infrastructure", "energy storage facilities", "power transmission lines", "substations", "public buildings", "critical facilities", "commercial structures", etc.)

Keep the structure natural and readable.

Answer: {answer}
"#;

/// Concern phrases named in the masking prompt.
pub const CONCERN_EXAMPLES: [&str; 6] = [
    "critical vulnerabilities",
    "maintenance strategies",
    "modernization measures",
    "projected impact",
    "design standards",
    "cascading impacts",
];

pub const INVERSE_MARKER: &str = "You write questions that an answer responds to.";

pub const INVERSE_TEMPLATE: &str = "You write questions that an answer responds to.
Generate exactly {n} distinct questions for which the answer below would be an appropriate answer. Placeholders in square brackets stand for masked terms; keep them as they are.
Return ONLY a JSON array of {n} strings, with no markdown and no text outside the array.

Answer:
{answer}";

pub const PARAPHRASE_MARKER: &str = "You rephrase questions.";

pub const PARAPHRASE_TEMPLATE: &str = "You rephrase questions.
Rephrase the question below so that its wording changes while its meaning, hazard, location, profession and timeline stay exactly the same.
Return only the rephrased question.

Question: {question}";

/// Follow-up turn sent when a paraphrase came back unchanged.
pub const PARAPHRASE_RETRY: &str =
    "That is the same wording as the original. Rephrase it with different wording; return only the question.";

pub const CONTEXT_CLAIMS_MARKER: &str = "You list the unique factual claims of a document.";

pub const CONTEXT_CLAIMS_TEMPLATE: &str = "You list the unique factual claims of a document.
Extract the unique, non-redundant factual propositions stated in the document below. Each must be a single, self-contained statement.
Return ONLY a JSON array of strings, with no markdown and no text outside the array.

Document:
{document}";

/// Follow-up turn used for the single repair retry of a strict JSON reply.
pub fn repair_message(detail: &str) -> String {
    format!(
        "Your previous reply could not be used ({detail}). Reply again with ONLY the required JSON and nothing else."
    )
}

/// Fills `{name}` slots in `template`, each exactly once.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Text after the first line that equals `label` (or starts with it).
pub(crate) fn section_after<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.find(label).map(|i| &prompt[i + label.len()..])
}

/// Conditioning prompt for teacher-forced scoring: the question, then the
/// claims as a bulleted list.
pub fn conditioning_prompt(question: &str, claims: &[&str]) -> String {
    let mut s = format!("Question: {}\nContext claims:\n", question.trim());
    for c in claims {
        s.push_str("- ");
        s.push_str(c.trim());
        s.push('\n');
    }
    s.push_str("Answer:");
    s
}

/// Completion scored under [`conditioning_prompt`].
pub fn conditioning_completion(answer: &str) -> String {
    format!(" {}", answer.trim())
}

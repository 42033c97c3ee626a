//! Synthetic role-grounded question generation.
//!
//! A record is drawn by controlled randomization: hazard first, then a
//! location conditional on that hazard, then profession, timeline and concern
//! kind. The concern kind selects the template pool; the profession's sector
//! selects the infrastructure pool.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub use crate::answer::{parse_answer, StructuredAnswer};
use crate::error::{Error, Result};

const HAZARD_LOCATIONS_JSON: &str = include_str!("../data/hazard_locations.v1.json");
const PROFESSIONS_JSON: &str = include_str!("../data/professions.v1.json");
const INFRASTRUCTURE_JSON: &str = include_str!("../data/infrastructure.v1.json");
const TEMPLATES_JSON: &str = include_str!("../data/templates.v1.json");

/// Planning horizons offered to synthetic users, in years.
pub const TIMELINE_CHOICES: [u32; 5] = [5, 10, 20, 30, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HazardKind {
    #[serde(rename = "cold wave")]
    ColdWave,
    #[serde(rename = "heat wave")]
    HeatWave,
    #[serde(rename = "coastal flooding")]
    CoastalFlooding,
    #[serde(rename = "ice storm")]
    IceStorm,
    #[serde(rename = "hurricane")]
    Hurricane,
    #[serde(rename = "drought")]
    Drought,
    #[serde(rename = "wildfire")]
    Wildfire,
}

impl HazardKind {
    pub const ALL: [HazardKind; 7] = [
        HazardKind::ColdWave,
        HazardKind::HeatWave,
        HazardKind::CoastalFlooding,
        HazardKind::IceStorm,
        HazardKind::Hurricane,
        HazardKind::Drought,
        HazardKind::Wildfire,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HazardKind::ColdWave => "cold wave",
            HazardKind::HeatWave => "heat wave",
            HazardKind::CoastalFlooding => "coastal flooding",
            HazardKind::IceStorm => "ice storm",
            HazardKind::Hurricane => "hurricane",
            HazardKind::Drought => "drought",
            HazardKind::Wildfire => "wildfire",
        }
    }

    /// Lower-case surface forms that name this hazard in running text.
    pub fn surface_forms(self) -> &'static [&'static str] {
        match self {
            HazardKind::ColdWave => &["cold wave", "cold waves", "cold snap", "extreme cold"],
            HazardKind::HeatWave => &["heat wave", "heat waves", "heatwave", "heatwaves", "extreme heat"],
            HazardKind::CoastalFlooding => &[
                "coastal flooding",
                "coastal floods",
                "coastal flood",
                "storm surge",
                "flooding",
            ],
            HazardKind::IceStorm => &["ice storm", "ice storms", "freezing rain"],
            HazardKind::Hurricane => &["hurricane", "hurricanes", "tropical storm", "tropical storms"],
            HazardKind::Drought => &["drought", "droughts"],
            HazardKind::Wildfire => &["wildfire", "wildfires", "wildland fire", "wildland fires"],
        }
    }
}

/// Every hazard surface form, longest first.
pub fn hazard_lexicon() -> &'static [&'static str] {
    static LEX: OnceLock<Vec<&'static str>> = OnceLock::new();
    LEX.get_or_init(|| {
        let mut v: Vec<&'static str> = HazardKind::ALL
            .iter()
            .flat_map(|h| h.surface_forms().iter().copied())
            .collect();
        v.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        v.dedup();
        v
    })
}

impl fmt::Display for HazardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HazardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim().to_ascii_lowercase();
        HazardKind::ALL
            .into_iter()
            .find(|h| h.as_str() == needle)
            .ok_or_else(|| Error::Unknown {
                kind: "hazard",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLocation")]
pub struct Location {
    pub county: String,
    pub state: String,
}

#[derive(Deserialize)]
struct RawLocation {
    county: String,
    state: String,
}

impl TryFrom<RawLocation> for Location {
    type Error = Error;

    fn try_from(raw: RawLocation) -> Result<Self> {
        Location::new(raw.county, raw.state)
    }
}

impl Location {
    pub fn new(county: impl Into<String>, state: impl Into<String>) -> Result<Self> {
        let county = county.into();
        let state = state.into();
        if county.trim().is_empty() {
            return Err(Error::precondition("location county is empty"));
        }
        if state.len() != 2 || !state.chars().all(|c| c.is_ascii_uppercase()) {
            return Err(Error::precondition(format!(
                "state code `{state}` must be two uppercase letters"
            )));
        }
        Ok(Self { county, state })
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.county, self.state)
    }
}

/// Which locations are plausible for each hazard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardLocationTable {
    entries: BTreeMap<HazardKind, Vec<Location>>,
}

#[derive(Deserialize)]
struct HazardLocationFile {
    version: u32,
    hazards: BTreeMap<HazardKind, Vec<Location>>,
}

impl HazardLocationTable {
    pub fn new(entries: BTreeMap<HazardKind, Vec<Location>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("hazard-location table is empty".into()));
        }
        if let Some((h, _)) = entries.iter().find(|(_, locs)| locs.is_empty()) {
            return Err(Error::Config(format!("hazard `{h}` has no locations")));
        }
        Ok(Self { entries })
    }

    /// The shipped table covering all seven hazards.
    pub fn builtin() -> &'static HazardLocationTable {
        static TABLE: OnceLock<HazardLocationTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            Self::from_json(HAZARD_LOCATIONS_JSON).expect("builtin hazard table is valid")
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: HazardLocationFile = serde_json::from_str(json)?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported hazard table version {}",
                file.version
            )));
        }
        Self::new(file.hazards)
    }

    pub fn hazards(&self) -> impl Iterator<Item = HazardKind> + '_ {
        self.entries.keys().copied()
    }

    pub fn locations(&self, hazard: HazardKind) -> &[Location] {
        self.entries.get(&hazard).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, hazard: HazardKind, location: &Location) -> bool {
        self.locations(hazard).contains(location)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Transportation,
    Water,
    Energy,
    Buildings,
    Communications,
}

impl Sector {
    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Transportation => "transportation",
            Sector::Water => "water",
            Sector::Energy => "energy",
            Sector::Buildings => "buildings",
            Sector::Communications => "communications",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcernKind {
    Fact,
    Recommendation,
    Hybrid,
}

impl ConcernKind {
    pub const ALL: [ConcernKind; 3] = [
        ConcernKind::Fact,
        ConcernKind::Recommendation,
        ConcernKind::Hybrid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConcernKind::Fact => "fact-based",
            ConcernKind::Recommendation => "recommendation-seeking",
            ConcernKind::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfessionEntry {
    pub profession: String,
    pub sector: Sector,
}

#[derive(Deserialize)]
struct ProfessionFile {
    version: u32,
    professions: Vec<ProfessionEntry>,
}

/// The profession roster, tagged by sector.
pub fn builtin_roster() -> &'static [ProfessionEntry] {
    static ROSTER: OnceLock<Vec<ProfessionEntry>> = OnceLock::new();
    ROSTER.get_or_init(|| {
        let file: ProfessionFile =
            serde_json::from_str(PROFESSIONS_JSON).expect("builtin roster is valid");
        assert_eq!(file.version, 1);
        file.professions
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub profession: String,
    pub sector: Sector,
    pub concern_kind: ConcernKind,
    pub hazard: HazardKind,
    pub location: Location,
    pub timeline_years: u32,
}

impl UserProfile {
    /// One-line profile summary used as the `Context:` slot of the answer prompt.
    pub fn context_line(&self) -> String {
        format!(
            "Profession: {} ({} sector); Concern: {}; Hazard: {}; Location: {}; Timeline: {} years",
            self.profession,
            self.sector.as_str(),
            self.concern_kind.label(),
            self.hazard,
            self.location,
            self.timeline_years
        )
    }
}

pub const PLACEHOLDERS: [&str; 6] = [
    "INFRASTRUCTURE",
    "HAZARD",
    "LOCATION",
    "CONCERN",
    "PROFESSION",
    "TIMELINE",
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Z_]+)\]").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub id: String,
    pub concern_kind: ConcernKind,
    pub body: String,
}

impl QuestionTemplate {
    /// Checks the pool invariant: at least one placeholder, all from the allowed set.
    pub fn validate(&self) -> Result<()> {
        let mut seen = 0;
        for cap in placeholder_re().captures_iter(&self.body) {
            let name = &cap[1];
            if !PLACEHOLDERS.contains(&name) {
                return Err(Error::Unknown {
                    kind: "placeholder",
                    name: format!("[{name}]"),
                });
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::Config(format!(
                "template `{}` has no placeholder",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub profile: UserProfile,
    pub template_id: String,
    pub infrastructure: String,
    pub question_text: String,
}

/// Everything needed to draw records: tables, roster, infrastructure and templates.
#[derive(Debug, Clone)]
pub struct DatasetCatalog {
    pub table: HazardLocationTable,
    pub roster: Vec<ProfessionEntry>,
    pub infrastructure: BTreeMap<Sector, Vec<String>>,
    pub templates: Vec<QuestionTemplate>,
}

#[derive(Deserialize)]
struct InfrastructureFile {
    version: u32,
    infrastructure: BTreeMap<Sector, Vec<String>>,
}

#[derive(Deserialize)]
struct TemplateFile {
    version: u32,
    templates: Vec<QuestionTemplate>,
}

impl DatasetCatalog {
    pub fn builtin() -> Self {
        let infra: InfrastructureFile =
            serde_json::from_str(INFRASTRUCTURE_JSON).expect("builtin infrastructure is valid");
        let templates: TemplateFile =
            serde_json::from_str(TEMPLATES_JSON).expect("builtin templates are valid");
        assert_eq!(infra.version, 1);
        assert_eq!(templates.version, 1);
        let catalog = Self {
            table: HazardLocationTable::builtin().clone(),
            roster: builtin_roster().to_vec(),
            infrastructure: infra.infrastructure,
            templates: templates.templates,
        };
        catalog.validate().expect("builtin catalog is valid");
        catalog
    }

    /// Replaces the template pool with a versioned template file.
    pub fn with_templates_json(mut self, json: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(json)?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported template file version {}",
                file.version
            )));
        }
        self.templates = file.templates;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Config("profession roster is empty".into()));
        }
        for t in &self.templates {
            t.validate()?;
        }
        for kind in ConcernKind::ALL {
            if !self.templates.iter().any(|t| t.concern_kind == kind) {
                return Err(Error::Config(format!(
                    "no template for concern kind {}",
                    kind.label()
                )));
            }
        }
        for entry in &self.roster {
            if self
                .infrastructure
                .get(&entry.sector)
                .is_none_or(|v| v.is_empty())
            {
                return Err(Error::Config(format!(
                    "no infrastructure listed for sector {}",
                    entry.sector.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<&QuestionTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Draws record `index` of a dataset seeded with `base_seed`.
    pub fn draw_record(&self, base_seed: u64, index: usize) -> Result<QuestionRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index as u64));
        let profile = sample_profile_with(&mut rng, &self.table, &self.roster)?;
        let infra_pool = &self.infrastructure[&profile.sector];
        let infrastructure = infra_pool
            .choose(&mut rng)
            .expect("validated non-empty")
            .clone();
        let pool: Vec<&QuestionTemplate> = self
            .templates
            .iter()
            .filter(|t| t.concern_kind == profile.concern_kind)
            .collect();
        let template = *pool.choose(&mut rng).expect("validated non-empty");
        let mut record = instantiate_question(&profile, template, &infrastructure)?;
        record.id = format!("q{index:05}");
        Ok(record)
    }

    /// Draws `count` records; record `i` derives from seed `base_seed + i`.
    pub fn generate(&self, base_seed: u64, count: usize) -> Result<Vec<QuestionRecord>> {
        self.validate()?;
        (0..count).map(|i| self.draw_record(base_seed, i)).collect()
    }
}

/// Samples a profile: hazard uniformly, a location uniformly from that
/// hazard's list, then profession, timeline and concern uniformly.
pub fn sample_profile(
    rng_seed: u64,
    table: &HazardLocationTable,
    roster: &[ProfessionEntry],
) -> Result<UserProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_profile_with(&mut rng, table, roster)
}

fn sample_profile_with<R: Rng>(
    rng: &mut R,
    table: &HazardLocationTable,
    roster: &[ProfessionEntry],
) -> Result<UserProfile> {
    if roster.is_empty() {
        return Err(Error::Config("profession roster is empty".into()));
    }
    let hazards: Vec<HazardKind> = table.hazards().collect();
    let hazard = *hazards
        .choose(rng)
        .ok_or_else(|| Error::Config("hazard-location table is empty".into()))?;
    let location = table
        .locations(hazard)
        .choose(rng)
        .ok_or_else(|| Error::Config(format!("hazard `{hazard}` has no locations")))?
        .clone();
    let entry = roster.choose(rng).expect("non-empty roster");
    let timeline_years = *TIMELINE_CHOICES.choose(rng).expect("non-empty");
    let concern_kind = *ConcernKind::ALL.choose(rng).expect("non-empty");
    Ok(UserProfile {
        profession: entry.profession.clone(),
        sector: entry.sector,
        concern_kind,
        hazard,
        location,
        timeline_years,
    })
}

/// Fills every placeholder of `template` from the profile.
pub fn instantiate_question(
    profile: &UserProfile,
    template: &QuestionTemplate,
    infrastructure: &str,
) -> Result<QuestionRecord> {
    if template.concern_kind != profile.concern_kind {
        return Err(Error::precondition(format!(
            "template `{}` is for {} questions but the profile concern is {}",
            template.id,
            template.concern_kind.label(),
            profile.concern_kind.label()
        )));
    }
    let body = &template.body;
    let mut out = String::with_capacity(body.len() + 32);
    let mut last = 0;
    for cap in placeholder_re().captures_iter(body) {
        let whole = cap.get(0).unwrap();
        out.push_str(&body[last..whole.start()]);
        let rendered = match &cap[1] {
            "INFRASTRUCTURE" => infrastructure.to_string(),
            "HAZARD" => profile.hazard.to_string(),
            "LOCATION" => profile.location.to_string(),
            "CONCERN" => profile.concern_kind.label().to_string(),
            "PROFESSION" => profile.profession.clone(),
            "TIMELINE" => {
                // templates that already spell out the unit get the bare number
                if body[whole.end()..].starts_with(" years") {
                    profile.timeline_years.to_string()
                } else {
                    format!("{} years", profile.timeline_years)
                }
            }
            other => {
                return Err(Error::Unknown {
                    kind: "placeholder",
                    name: format!("[{other}]"),
                })
            }
        };
        out.push_str(&rendered);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(QuestionRecord {
        id: String::new(),
        profile: profile.clone(),
        template_id: template.id.clone(),
        infrastructure: infrastructure.to_string(),
        question_text: out,
    })
}

/// True when the text still contains a bracketed placeholder word.
pub fn has_residual_placeholder(text: &str) -> bool {
    placeholder_re().is_match(text)
}

/// The answer-generation prompt. Layout is fixed; only the slots vary.
pub const ANSWER_PROMPT_TEMPLATE: &str = "You are tasked with writing a recommendation/fact-based answer that answers the user\u{2019}s question based on a provided list of research abstracts and contextual information. Your response must:

1. Directly address the user's concern, ensuring the answer is supported by the provided literature.

2. Incorporate the user's profile like timeline, professional background, Location, and concerns into the recommendations.

3. Clearly connect insights from the abstracts to the user's specific context and goals.

4. Make sure to output in points (1,2,3..) without inserting any **.

5. End your response with a confidence score (in percentage) and a short explanation for that score.

Here are the 5 research abstracts:

1. {lit1}
2. {lit2}
3. {lit3}
4. {lit4}
5. {lit5}

Context: {context}
Question: {question}

Based on the above abstracts, write the answer in points. Make sure to take into account all the information in the context like profession, timeline, etc. Do not include subpoints.";

pub const ANSWER_PROMPT_MARKER: &str = "Here are the 5 research abstracts:";

/// Fills the answer-generation prompt with five abstracts, profile and question.
pub fn build_answer_prompt(
    question: &QuestionRecord,
    docs: &[&str],
    profile: &UserProfile,
) -> Result<String> {
    if docs.len() != 5 {
        return Err(Error::precondition(format!(
            "answer prompt needs exactly 5 documents, got {}",
            docs.len()
        )));
    }
    if question.question_text.trim().is_empty() {
        return Err(Error::precondition("question text is empty"));
    }
    let flat = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut prompt = ANSWER_PROMPT_TEMPLATE.to_string();
    for (i, doc) in docs.iter().enumerate() {
        prompt = prompt.replacen(&format!("{{lit{}}}", i + 1), &flat(doc), 1);
    }
    Ok(prompt
        .replacen("{context}", &profile.context_line(), 1)
        .replacen("{question}", question.question_text.trim(), 1))
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub id: String,
    pub profession: String,
    pub sector: Sector,
    pub concern_kind: ConcernKind,
    pub hazard: HazardKind,
    pub county: String,
    pub state: String,
    pub timeline_years: u32,
    pub infrastructure: String,
    pub template_id: String,
    pub question: String,
    pub answer_intro: String,
    pub answer_segments: Vec<String>,
    pub retrieved_doc_ids: Vec<String>,
    pub generator_model: String,
}

impl DatasetRow {
    pub fn new(
        record: &QuestionRecord,
        answer: &StructuredAnswer,
        retrieved_doc_ids: Vec<String>,
        generator_model: &str,
    ) -> Self {
        let p = &record.profile;
        Self {
            id: record.id.clone(),
            profession: p.profession.clone(),
            sector: p.sector,
            concern_kind: p.concern_kind,
            hazard: p.hazard,
            county: p.location.county.clone(),
            state: p.location.state.clone(),
            timeline_years: p.timeline_years,
            infrastructure: record.infrastructure.clone(),
            template_id: record.template_id.clone(),
            question: record.question_text.clone(),
            answer_intro: answer.intro.clone(),
            answer_segments: answer.segments.clone(),
            retrieved_doc_ids,
            generator_model: generator_model.to_string(),
        }
    }

    pub fn record(&self) -> Result<QuestionRecord> {
        Ok(QuestionRecord {
            id: self.id.clone(),
            profile: UserProfile {
                profession: self.profession.clone(),
                sector: self.sector,
                concern_kind: self.concern_kind,
                hazard: self.hazard,
                location: Location::new(self.county.clone(), self.state.clone())?,
                timeline_years: self.timeline_years,
            },
            template_id: self.template_id.clone(),
            infrastructure: self.infrastructure.clone(),
            question_text: self.question.clone(),
        })
    }

    pub fn answer(&self) -> StructuredAnswer {
        StructuredAnswer::new(self.answer_intro.clone(), self.answer_segments.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::HashMap;

    fn profile(hazard: HazardKind, county: &str, state: &str, concern: ConcernKind) -> UserProfile {
        UserProfile {
            profession: "Power Systems Engineer".into(),
            sector: Sector::Energy,
            concern_kind: concern,
            hazard,
            location: Location::new(county, state).unwrap(),
            timeline_years: 20,
        }
    }

    #[test]
    fn seven_hazards_parse_and_others_fail() {
        for h in HazardKind::ALL {
            assert_eq!(h.as_str().parse::<HazardKind>().unwrap(), h);
        }
        assert!("tornado".parse::<HazardKind>().is_err());
        let table = HazardLocationTable::builtin();
        assert_eq!(table.hazards().count(), 7);
        assert!(table.contains(
            HazardKind::Hurricane,
            &Location::new("Miami-Dade", "FL").unwrap()
        ));
    }

    #[test]
    fn location_state_code_checked() {
        assert!(Location::new("Kern", "ca").is_err());
        assert!(Location::new("Kern", "CAL").is_err());
        assert!(Location::new("Kern", "CA").is_ok());
    }

    #[test]
    fn single_choice_table_pins_location() {
        let mut entries = BTreeMap::new();
        entries.insert(
            HazardKind::Hurricane,
            vec![Location::new("Miami-Dade", "FL").unwrap()],
        );
        let table = HazardLocationTable::new(entries).unwrap();
        for seed in 0..20 {
            let p = sample_profile(seed, &table, builtin_roster()).unwrap();
            assert_eq!(p.hazard, HazardKind::Hurricane);
            assert_eq!(p.location.to_string(), "Miami-Dade, FL");
        }
    }

    #[test]
    fn empty_roster_is_config_error() {
        let err = sample_profile(1, HazardLocationTable::builtin(), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(HazardLocationTable::new(BTreeMap::new()).is_err());
    }

    #[test]
    fn sampled_profiles_are_table_consistent_and_deterministic() {
        let table = HazardLocationTable::builtin();
        for seed in 0..500 {
            let p = sample_profile(seed, table, builtin_roster()).unwrap();
            assert!(table.contains(p.hazard, &p.location));
            assert!(builtin_roster()
                .iter()
                .any(|e| e.profession == p.profession && e.sector == p.sector));
            assert_eq!(p, sample_profile(seed, table, builtin_roster()).unwrap());
        }
    }

    #[test]
    fn location_frequencies_are_uniform_per_hazard() {
        let table = HazardLocationTable::builtin();
        let mut counts: HashMap<HazardKind, HashMap<Location, u64>> = HashMap::new();
        for seed in 0..10_000u64 {
            let p = sample_profile(seed, table, builtin_roster()).unwrap();
            *counts.entry(p.hazard).or_default().entry(p.location).or_default() += 1;
        }
        for hazard in table.hazards() {
            let locs = table.locations(hazard);
            let per = &counts[&hazard];
            let n: u64 = per.values().sum();
            let expected = n as f64 / locs.len() as f64;
            let chi2: f64 = locs
                .iter()
                .map(|l| {
                    let o = *per.get(l).unwrap_or(&0) as f64;
                    (o - expected).powi(2) / expected
                })
                .sum();
            let critical = ChiSquared::new((locs.len() - 1) as f64)
                .unwrap()
                .inverse_cdf(0.999);
            assert!(chi2 < critical, "{hazard}: chi2 {chi2} >= {critical}");
        }
    }

    #[test]
    fn fills_the_vulnerability_template() {
        let t = QuestionTemplate {
            id: "f".into(),
            concern_kind: ConcernKind::Fact,
            body: "What are the critical vulnerabilities of [INFRASTRUCTURE] to [HAZARD] in [LOCATION]?".into(),
        };
        let p = profile(HazardKind::Wildfire, "San Diego", "CA", ConcernKind::Fact);
        let r = instantiate_question(&p, &t, "electrical grid").unwrap();
        assert_eq!(
            r.question_text,
            "What are the critical vulnerabilities of electrical grid to wildfire in San Diego, CA?"
        );
    }

    #[test]
    fn timeline_rendering() {
        let p = profile(HazardKind::Drought, "Kern", "CA", ConcernKind::Recommendation);
        let spelled = QuestionTemplate {
            id: "r".into(),
            concern_kind: ConcernKind::Recommendation,
            body: "over the next [TIMELINE] years?".into(),
        };
        let bare = QuestionTemplate {
            body: "within [TIMELINE]?".into(),
            ..spelled.clone()
        };
        assert_eq!(
            instantiate_question(&p, &spelled, "x").unwrap().question_text,
            "over the next 20 years?"
        );
        assert_eq!(
            instantiate_question(&p, &bare, "x").unwrap().question_text,
            "within 20 years?"
        );
    }

    #[test]
    fn verbatim_and_error_paths() {
        let p = profile(HazardKind::Drought, "Kern", "CA", ConcernKind::Fact);
        let plain = QuestionTemplate {
            id: "p".into(),
            concern_kind: ConcernKind::Fact,
            body: "Is there anything to know?".into(),
        };
        assert_eq!(
            instantiate_question(&p, &plain, "x").unwrap().question_text,
            "Is there anything to know?"
        );
        let mismatch = QuestionTemplate {
            concern_kind: ConcernKind::Hybrid,
            ..plain.clone()
        };
        assert!(matches!(
            instantiate_question(&p, &mismatch, "x"),
            Err(Error::Precondition(_))
        ));
        let unknown = QuestionTemplate {
            body: "Where is [COUNTY]?".into(),
            ..plain
        };
        assert!(matches!(
            instantiate_question(&p, &unknown, "x"),
            Err(Error::Unknown { .. })
        ));
        assert!(unknown.validate().is_err());
    }

    #[test]
    fn builtin_catalog_has_three_templates_per_concern() {
        let c = DatasetCatalog::builtin();
        for kind in ConcernKind::ALL {
            assert!(c.templates.iter().filter(|t| t.concern_kind == kind).count() >= 3);
        }
    }

    #[test]
    fn generated_records_are_deterministic_and_closed() {
        let c = DatasetCatalog::builtin();
        let a = c.generate(7, 300).unwrap();
        let b = c.generate(7, 300).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(!has_residual_placeholder(&r.question_text), "{}", r.question_text);
            assert!(c.table.contains(r.profile.hazard, &r.profile.location));
            assert!(c.infrastructure[&r.profile.sector].contains(&r.infrastructure));
        }
        assert_ne!(a[0], c.generate(8, 1).unwrap()[0]);
    }

    #[test]
    fn answer_prompt_layout() {
        let c = DatasetCatalog::builtin();
        let r = c.draw_record(1, 0).unwrap();
        let docs = ["A1 text", "A2 text", "A3 text", "A4 text", "A5 text"];
        let prompt = build_answer_prompt(&r, &docs, &r.profile).unwrap();
        assert!(prompt.contains(
            "Here are the 5 research abstracts:\n\n1. A1 text\n2. A2 text\n3. A3 text\n4. A4 text\n5. A5 text\n\nContext: "
        ));
        assert!(prompt.contains(&format!("Question: {}\n\nBased on", r.question_text)));
        assert!(prompt.starts_with("You are tasked with writing"));
        assert!(build_answer_prompt(&r, &docs[..4], &r.profile).is_err());
        let mut empty = r.clone();
        empty.question_text = "  ".into();
        assert!(build_answer_prompt(&empty, &docs, &r.profile).is_err());
    }

    #[test]
    fn dataset_row_field_names() {
        let c = DatasetCatalog::builtin();
        let r = c.draw_record(3, 2).unwrap();
        let row = DatasetRow::new(&r, &StructuredAnswer::new("i", vec!["s".into()]), vec!["d1".into()], "m");
        let v = serde_json::to_value(&row).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = vec![
            "id", "profession", "sector", "concern_kind", "hazard", "county", "state",
            "timeline_years", "infrastructure", "template_id", "question", "answer_intro",
            "answer_segments", "retrieved_doc_ids", "generator_model",
        ];
        expected.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, expected);
        assert_eq!(row.record().unwrap().profile, r.profile);
    }
}

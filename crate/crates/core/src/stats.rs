//! Model-free metrics: readability formulas and agreement statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::text;

// ---------------------------------------------------------------- readability

/// Flesch Reading Ease from average sentence length and syllables per word.
pub fn fre(asl: f64, asw: f64) -> f64 {
    206.835 - 1.015 * asl - 84.6 * asw
}

/// Flesch-Kincaid Grade Level.
pub fn fkgl(asl: f64, asw: f64) -> f64 {
    0.39 * asl + 11.8 * asw - 15.59
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreBand {
    PlainEnglish,
    FairlyDifficult,
    Difficult,
    VeryDifficult,
}

impl FreBand {
    pub const ALL: [FreBand; 4] = [
        FreBand::PlainEnglish,
        FreBand::FairlyDifficult,
        FreBand::Difficult,
        FreBand::VeryDifficult,
    ];

    /// Total over the reals; NaN falls into the hardest band.
    pub fn classify(score: f64) -> Self {
        if score >= 60.0 {
            FreBand::PlainEnglish
        } else if score >= 50.0 {
            FreBand::FairlyDifficult
        } else if score >= 30.0 {
            FreBand::Difficult
        } else {
            FreBand::VeryDifficult
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FreBand::PlainEnglish => "Plain English or easier",
            FreBand::FairlyDifficult => "Fairly difficult (10th\u{2013}12th grade)",
            FreBand::Difficult => "Difficult to read (college level)",
            FreBand::VeryDifficult => "Very difficult (college graduate or higher)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FkglBand {
    Elementary,
    MiddleSchool,
    HighSchool,
    CollegeUndergraduate,
    GraduateProfessional,
}

impl FkglBand {
    pub const ALL: [FkglBand; 5] = [
        FkglBand::Elementary,
        FkglBand::MiddleSchool,
        FkglBand::HighSchool,
        FkglBand::CollegeUndergraduate,
        FkglBand::GraduateProfessional,
    ];

    /// Edges at grades 6, 9, 13 and 16; NaN falls into the hardest band.
    pub fn classify(grade: f64) -> Self {
        if grade < 6.0 {
            FkglBand::Elementary
        } else if grade < 9.0 {
            FkglBand::MiddleSchool
        } else if grade < 13.0 {
            FkglBand::HighSchool
        } else if grade < 16.0 {
            FkglBand::CollegeUndergraduate
        } else {
            FkglBand::GraduateProfessional
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FkglBand::Elementary => "Elementary school level",
            FkglBand::MiddleSchool => "Middle school level",
            FkglBand::HighSchool => "High school level",
            FkglBand::CollegeUndergraduate => "College undergraduate level",
            FkglBand::GraduateProfessional => "Graduate/professional level",
        }
    }
}

/// Heuristic syllable count: vowel groups (`y` counts as a vowel), minus a
/// silent final `e` unless the word ends in consonant + `le`; at least 1.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    if n >= 2 && w[n - 1] == 'e' && groups > 1 {
        let consonant_le = n >= 3 && w[n - 2] == 'l' && !is_vowel(w[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityReport {
    pub fre: f64,
    pub fkgl: f64,
    pub asl: f64,
    pub asw: f64,
    pub fre_band: String,
    pub fkgl_band: String,
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
}

pub fn readability(input: &str) -> Result<ReadabilityReport> {
    let sentences = text::split_sentences(input);
    let words: Vec<&str> = sentences.iter().flat_map(|s| text::words(s)).collect();
    if words.is_empty() {
        return Err(Error::precondition("readability needs at least one word"));
    }
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    let asl = words.len() as f64 / sentences.len() as f64;
    let asw = syllables as f64 / words.len() as f64;
    let (f, g) = (fre(asl, asw), fkgl(asl, asw));
    Ok(ReadabilityReport {
        fre: f,
        fkgl: g,
        asl,
        asw,
        fre_band: FreBand::classify(f).label().to_string(),
        fkgl_band: FkglBand::classify(g).label().to_string(),
        sentences: sentences.len(),
        words: words.len(),
        syllables,
    })
}

/// Averages and band counts over a set of answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadabilitySummary {
    pub count: usize,
    pub average_fre: f64,
    pub average_fkgl: f64,
    pub fre_bands: BTreeMap<String, usize>,
    pub fkgl_bands: BTreeMap<String, usize>,
}

pub fn readability_summary(reports: &[ReadabilityReport]) -> Option<ReadabilitySummary> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mut fre_bands: BTreeMap<String, usize> =
        FreBand::ALL.iter().map(|b| (b.label().to_string(), 0)).collect();
    let mut fkgl_bands: BTreeMap<String, usize> =
        FkglBand::ALL.iter().map(|b| (b.label().to_string(), 0)).collect();
    for r in reports {
        *fre_bands.entry(r.fre_band.clone()).or_default() += 1;
        *fkgl_bands.entry(r.fkgl_band.clone()).or_default() += 1;
    }
    Some(ReadabilitySummary {
        count: reports.len(),
        average_fre: reports.iter().map(|r| r.fre).sum::<f64>() / n,
        average_fkgl: reports.iter().map(|r| r.fkgl).sum::<f64>() / n,
        fre_bands,
        fkgl_bands,
    })
}

// ------------------------------------------------------------------ agreement

/// Fraction of positions where the two label sequences match exactly.
pub fn percent_agreement<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    let (agree, _) = agreement_counts(a, b)?;
    Ok(agree as f64 / a.len() as f64)
}

/// `(agree, disagree)` counts over paired labels.
pub fn agreement_counts<T: PartialEq>(a: &[T], b: &[T]) -> Result<(usize, usize)> {
    if a.len() != b.len() {
        return Err(Error::precondition(format!(
            "label sequences differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::precondition("label sequences are empty"));
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok((agree, a.len() - agree))
}

/// Items × categories matrix of rater counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    rows: Vec<Vec<u32>>,
}

impl RatingMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::precondition("rating matrix needs at least 2 items"));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::precondition("rating matrix rows must share a non-zero width"));
        }
        let n: u32 = rows[0].iter().sum();
        if rows.iter().any(|r| r.iter().sum::<u32>() != n) {
            return Err(Error::precondition("every item must be rated by the same number of raters"));
        }
        if n < 2 {
            return Err(Error::precondition("rating matrix needs at least 2 raters"));
        }
        Ok(Self { rows })
    }

    /// Builds the matrix from per-item rater labels.
    pub fn from_labels<T: Ord + Clone>(items: &[Vec<T>]) -> Result<Self> {
        let cats: Vec<T> = {
            let mut c: Vec<T> = items.iter().flatten().cloned().collect();
            c.sort();
            c.dedup();
            c
        };
        let rows = items
            .iter()
            .map(|labels| {
                cats.iter()
                    .map(|c| labels.iter().filter(|l| *l == c).count() as u32)
                    .collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn raters(&self) -> u32 {
        self.rows[0].iter().sum()
    }
}

/// Fleiss' kappa; `None` when chance agreement is exactly 1.
pub fn fleiss_kappa(m: &RatingMatrix) -> Option<f64> {
    let n = m.raters() as f64;
    let items = m.rows.len() as f64;
    let k = m.rows[0].len();
    let total = items * n;
    let p_bar = m
        .rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (s - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = m.rows.iter().map(|r| r[j] as f64).sum::<f64>() / total;
            pj * pj
        })
        .sum();
    if p_e == 1.0 {
        return None;
    }
    Some((p_bar - p_e) / (1.0 - p_e))
}

// ---------------------------------------------------------------- correlation

/// Fractional ranks (1-based), ties receive the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` if either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's rank correlation with a two-sided t-approximation p-value.
/// `Ok(None)` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<Correlation>> {
    if x.len() != y.len() {
        return Err(Error::precondition(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::precondition("correlation needs at least 3 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::precondition("correlation inputs must be finite"));
    }
    let Some(rho) = pearson(&average_ranks(x), &average_ranks(y)) else {
        return Ok(None);
    };
    let n = x.len();
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Some(Correlation { rho, p_value, n }))
}

// ----------------------------------------------------------------- summaries

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 when n = 1.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(MeanStd { mean, std, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula_hand_values() {
        assert!((fre(10.0, 1.5) - 69.785).abs() < 1e-9);
        assert!((fkgl(10.0, 1.5) - 6.01).abs() < 1e-9);
        assert!((fre(1.0, 1.0) - 121.22).abs() < 1e-9);
    }

    #[test]
    fn syllables() {
        for (w, n) in [
            ("cat", 1),
            ("table", 2),
            ("make", 1),
            ("the", 1),
            ("be", 1),
            ("infrastructure", 4),
            ("resilience", 3),
            ("rhythm", 1),
            ("42", 1),
        ] {
            assert_eq!(count_syllables(w), n, "{w}");
        }
    }

    #[test]
    fn readability_of_controlled_text() {
        let r = readability("cat table cat table cat table cat table cat table.").unwrap();
        assert_eq!((r.sentences, r.words, r.syllables), (1, 10, 15));
        assert!((r.fre - 69.785).abs() < 1e-9);
        assert_eq!(r.fre_band, "Plain English or easier");
        assert_eq!(r.fkgl_band, "Middle school level");
        let one = readability("Go.").unwrap();
        assert!((one.fre - 121.22).abs() < 1e-9);
        assert!(readability("  ... ").is_err());
    }

    #[test]
    fn band_edges() {
        assert_eq!(FreBand::classify(60.0), FreBand::PlainEnglish);
        assert_eq!(FreBand::classify(59.99), FreBand::FairlyDifficult);
        assert_eq!(FreBand::classify(50.0), FreBand::FairlyDifficult);
        assert_eq!(FreBand::classify(30.0), FreBand::Difficult);
        assert_eq!(FreBand::classify(29.9), FreBand::VeryDifficult);
        assert_eq!(FreBand::classify(f64::NAN), FreBand::VeryDifficult);
        assert_eq!(FkglBand::classify(5.99), FkglBand::Elementary);
        assert_eq!(FkglBand::classify(6.0), FkglBand::MiddleSchool);
        assert_eq!(FkglBand::classify(9.0), FkglBand::HighSchool);
        assert_eq!(FkglBand::classify(13.0), FkglBand::CollegeUndergraduate);
        assert_eq!(FkglBand::classify(16.0), FkglBand::GraduateProfessional);
    }

    #[test]
    fn agreement_basics() {
        let a: Vec<u8> = (0..50).map(|i| (i % 3) as u8).collect();
        let mut b = a.clone();
        for x in b.iter_mut().take(4) {
            *x += 7;
        }
        assert_eq!(agreement_counts(&a, &b).unwrap(), (46, 4));
        assert!((percent_agreement(&a, &b).unwrap() - 0.92).abs() < 1e-12);
        assert!(percent_agreement(&a, &b[..3]).is_err());
        assert_eq!(percent_agreement(&[1, 2], &[3, 4]).unwrap(), 0.0);
    }

    #[test]
    fn kappa_cases() {
        let unanimous = RatingMatrix::new(vec![vec![2, 0], vec![0, 2], vec![2, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&unanimous), Some(1.0));
        let single = RatingMatrix::new(vec![vec![3], vec![3]]).unwrap();
        assert_eq!(fleiss_kappa(&single), None);
        // Every item split 1/1 between two categories: P̄ = 0, P̄e = 0.5.
        let split = RatingMatrix::new(vec![vec![1, 1], vec![1, 1]]).unwrap();
        assert!((fleiss_kappa(&split).unwrap() + 1.0).abs() < 1e-12);
        assert!(RatingMatrix::new(vec![vec![1, 1], vec![2, 1]]).is_err());
        assert!(RatingMatrix::new(vec![vec![1, 0], vec![1, 0]]).is_err());
        let m = RatingMatrix::from_labels(&[vec!["yes", "no"], vec!["yes", "yes"]]).unwrap();
        assert_eq!(m.rows(), &[vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = spearman(&x, &x).unwrap().unwrap();
        assert_eq!(r.rho, 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap().unwrap().rho, -1.0);
        assert!(spearman(&x, &[1.0; 5]).unwrap().is_none());
        assert!(spearman(&x[..2], &x[..2]).is_err());
        assert!(spearman(&x, &x[..4]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_p_value_reference() {
        // rho = 0.5, n = 10: t = 0.5*sqrt(8/0.75) = 1.63299, two-sided p ≈ 0.1411
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = [2.0, 0.0, 1.0, 5.0, 3.0, 9.0, 4.0, 6.0, 8.0, 7.0];
        let c = spearman(&x, &y).unwrap().unwrap();
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let classic = 1.0 - 6.0 * d2 / (10.0 * 99.0);
        assert!((c.rho - classic).abs() < 1e-12);
        assert!(c.p_value > 0.0 && c.p_value < 1.0);
    }

    #[test]
    fn mean_std_values() {
        let s = mean_std(&[0.5, 0.7]).unwrap();
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.std - 0.141_421_356_237).abs() < 1e-9);
        assert_eq!(mean_std(&[3.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }

    proptest! {
        #[test]
        fn fre_and_fkgl_monotone(asl in 1.0f64..60.0, asw in 1.0f64..4.0, d in 0.01f64..5.0) {
            prop_assert!(fre(asl + d, asw) < fre(asl, asw));
            prop_assert!(fre(asl, asw + d) < fre(asl, asw));
            prop_assert!(fkgl(asl + d, asw) > fkgl(asl, asw));
            prop_assert!(fkgl(asl, asw + d) > fkgl(asl, asw));
        }

        #[test]
        fn kappa_permutation_invariant(rows in proptest::collection::vec(proptest::collection::vec(0u32..4, 3), 2..12), rot in 0usize..3) {
            let n = 6u32;
            let rows: Vec<Vec<u32>> = rows.into_iter().map(|mut r| {
                let s: u32 = r.iter().sum();
                if s < n { r[0] += n - s } else { r = vec![n, 0, 0] }
                r
            }).collect();
            let m = RatingMatrix::new(rows.clone()).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let cats: Vec<Vec<u32>> = rows.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rot); r }).collect();
            let a = fleiss_kappa(&m);
            let b = fleiss_kappa(&RatingMatrix::new(rev).unwrap());
            let c = fleiss_kappa(&RatingMatrix::new(cats).unwrap());
            match (a, b, c) {
                (Some(a), Some(b), Some(c)) => { prop_assert!((a - b).abs() < 1e-12); prop_assert!((a - c).abs() < 1e-12); }
                (None, None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn syllables_at_least_one(w in "[a-zA-Z]{1,15}") {
            prop_assert!(count_syllables(&w) >= 1);
        }
    }
}

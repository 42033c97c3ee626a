//! Plain-text helpers: sentence segmentation and word tokenization.

use std::sync::OnceLock;

use regex::Regex;

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+[.)]|[-*\u{2022}])\s+").unwrap())
}

/// Abbreviations whose final period never ends a sentence.
const ABBREVIATIONS: [&str; 6] = ["e.g.", "i.e.", "vs.", "u.s.", "dr.", "st."];

/// Removes a leading "1." / "2)" / "-" list marker.
pub fn strip_list_marker(line: &str) -> &str {
    match list_marker().find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    }
}

/// Splits text into sentences.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace or end of text,
/// and at the end of every line. List markers at line start are removed
/// first, so "1." never counts as a sentence. A period between digits
/// ("2.5") is never followed by whitespace and so never splits.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = strip_list_marker(line.trim());
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut start = 0;
        for (k, &(i, c)) in chars.iter().enumerate() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let at_end = k + 1 == chars.len();
            let before_space = chars.get(k + 1).is_some_and(|(_, n)| n.is_whitespace());
            if !(at_end || before_space) {
                continue;
            }
            let end = i + c.len_utf8();
            if c == '.' && ends_with_abbreviation(&line[start..end]) && !at_end {
                continue;
            }
            push_trimmed(&mut out, &line[start..end]);
            start = end;
        }
        push_trimmed(&mut out, &line[start..]);
    }
    out
}

fn ends_with_abbreviation(s: &str) -> bool {
    let last = s.rsplit(char::is_whitespace).next().unwrap_or("");
    let lower = last.to_ascii_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if t.chars().any(char::is_alphanumeric) {
        out.push(t.to_string());
    }
}

/// Words for readability: whitespace-separated tokens containing a letter or
/// digit, with surrounding punctuation removed.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Lower-case alphanumeric tokens, for bag-of-words comparisons.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses runs of whitespace to single spaces.
pub fn squash_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

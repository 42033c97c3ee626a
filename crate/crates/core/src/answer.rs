//! Structured answers: an optional intro followed by numbered points.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A generated answer split into its intro and ordered segments.
///
/// The trailing self-reported confidence line that the generation prompt asks
/// for is kept apart in `self_confidence` and never enters a metric.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredAnswer {
    pub intro: String,
    pub segments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_confidence: Option<String>,
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)[.)]\s*(.*)$").unwrap())
}

fn is_confidence_line(line: &str) -> bool {
    line.trim_start()
        .get(..10)
        .is_some_and(|p| p.eq_ignore_ascii_case("confidence"))
}

/// Splits a raw model reply into intro, numbered segments and the optional
/// confidence block. Total: a reply without numbered points becomes all intro.
pub fn parse_answer(raw: &str) -> StructuredAnswer {
    let mut intro: Vec<&str> = Vec::new();
    let mut segments: Vec<String> = Vec::new();
    let mut confidence: Vec<&str> = Vec::new();

    for line in raw.lines() {
        if !confidence.is_empty() {
            if !line.trim().is_empty() {
                confidence.push(line.trim());
            }
            continue;
        }
        if let Some(caps) = numbered_line().captures(line) {
            let body = caps.get(2).map_or("", |m| m.as_str()).trim();
            if is_confidence_line(body) {
                confidence.push(body);
            } else {
                segments.push(body.to_string());
            }
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if is_confidence_line(trimmed) {
            confidence.push(trimmed);
        } else if let Some(last) = segments.last_mut() {
            // continuation of the previous point
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(trimmed);
        } else {
            intro.push(trimmed);
        }
    }

    StructuredAnswer {
        intro: intro.join("\n"),
        segments,
        self_confidence: (!confidence.is_empty()).then(|| confidence.join("\n")),
    }
}

impl StructuredAnswer {
    pub fn new(intro: impl Into<String>, segments: Vec<String>) -> Self {
        Self {
            intro: intro.into(),
            segments,
            self_confidence: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intro.trim().is_empty() && self.segments.iter().all(|s| s.trim().is_empty())
    }

    /// Intro followed by the segments renumbered from 1, newline-joined.
    pub fn render(&self) -> String {
        render_parts(&self.intro, self.segments.iter().map(String::as_str))
    }

    /// Renders the answer with segment `skip` left out and the rest renumbered.
    pub fn render_without(&self, skip: usize) -> String {
        render_parts(
            &self.intro,
            self.segments
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, s)| s.as_str()),
        )
    }

    /// Renders the answer with segments in the given order.
    pub fn render_ordered(&self, order: &[usize]) -> String {
        render_parts(&self.intro, order.iter().map(|&i| self.segments[i].as_str()))
    }
}

fn render_parts<'a>(intro: &str, segments: impl Iterator<Item = &'a str>) -> String {
    let mut lines = Vec::new();
    if !intro.trim().is_empty() {
        lines.push(intro.trim().to_string());
    }
    for (n, seg) in segments.enumerate() {
        lines.push(format!("{}. {}", n + 1, seg.trim()));
    }
    lines.join("\n")
}

//! Deterministic inputs shared by the benchmarks.

use hazeval_core::StructuredAnswer;

const WORDS: [&str; 12] = [
    "coastal", "flooding", "threatens", "the", "substation", "near", "Hudson", "county", "within", "thirty", "years", "ahead",
];

/// `sentences` sentences of twelve words each.
pub fn prose(sentences: usize) -> String {
    (0..sentences)
        .map(|s| {
            let words: Vec<&str> = (0..WORDS.len()).map(|w| WORDS[(s + w) % WORDS.len()]).collect();
            format!("{}.", words.join(" "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn answer(segments: usize) -> StructuredAnswer {
    StructuredAnswer::new(prose(1), (0..segments).map(|i| prose(2 + i % 3)).collect())
}

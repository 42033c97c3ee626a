//! Exact cosine retrieval over an embedded abstract corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Embedder;
use crate::vector;

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub body: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub score: f64,
}

/// Raw corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub body: String,
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDoc>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("{}:{}: bad corpus line: {e}", path.display(), n + 1))
        })?;
        out.push(doc);
    }
    Ok(out)
}

/// Cached document embeddings keyed by (embedder id, doc id).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSidecar {
    entries: BTreeMap<(String, String), Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SidecarLine {
    embedder: String,
    doc_id: String,
    embedding: Vec<f64>,
}

impl EmbeddingSidecar {
    /// Loads the sidecar; a missing file is an empty sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(Error::io(path, e)),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let l: SidecarLine = serde_json::from_str(line)?;
            entries.insert((l.embedder, l.doc_id), l.embedding);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for ((embedder, doc_id), embedding) in &self.entries {
            serde_json::to_writer(
                &mut buf,
                &SidecarLine {
                    embedder: embedder.clone(),
                    doc_id: doc_id.clone(),
                    embedding: embedding.clone(),
                },
            )?;
            buf.write_all(b"\n").expect("writing to a Vec cannot fail");
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, embedder: &str, doc_id: &str) -> Option<&Vec<f64>> {
        self.entries.get(&(embedder.to_string(), doc_id.to_string()))
    }

    pub fn insert(&mut self, embedder: &str, doc_id: &str, embedding: Vec<f64>) {
        self.entries
            .insert((embedder.to_string(), doc_id.to_string()), embedding);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Immutable index; reads are safe from any number of threads.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<DocumentRecord>,
    by_id: BTreeMap<String, usize>,
    dim: usize,
}

impl CorpusIndex {
    /// Embeds every document and builds the index.
    pub fn build(docs: &[CorpusDoc], embedder: &dyn Embedder) -> Result<Self> {
        Self::build_cached(docs, embedder, &mut EmbeddingSidecar::default())
    }

    /// Like [`build`](Self::build) but reuses and extends a sidecar cache.
    pub fn build_cached(
        docs: &[CorpusDoc],
        embedder: &dyn Embedder,
        sidecar: &mut EmbeddingSidecar,
    ) -> Result<Self> {
        check_ids(docs.iter().map(|d| d.doc_id.as_str()))?;
        let id = embedder.embedder_id().to_string();
        let missing: Vec<&CorpusDoc> = docs
            .iter()
            .filter(|d| sidecar.get(&id, &d.doc_id).is_none())
            .collect();
        for chunk in missing.chunks(EMBED_BATCH) {
            let bodies: Vec<String> = chunk.iter().map(|d| d.body.clone()).collect();
            let vecs = embedder.embed(&bodies)?;
            if vecs.len() != chunk.len() {
                return Err(Error::MalformedResponse(format!(
                    "{} embeddings for {} documents",
                    vecs.len(),
                    chunk.len()
                )));
            }
            for (d, v) in chunk.iter().zip(vecs) {
                sidecar.insert(&id, &d.doc_id, v);
            }
        }
        let records = docs
            .iter()
            .map(|d| DocumentRecord {
                doc_id: d.doc_id.clone(),
                body: d.body.clone(),
                embedding: sidecar.get(&id, &d.doc_id).cloned().unwrap_or_default(),
            })
            .collect();
        Self::from_records(records)
    }

    /// Builds from pre-embedded records, normalizing every vector.
    pub fn from_records(records: Vec<DocumentRecord>) -> Result<Self> {
        check_ids(records.iter().map(|d| d.doc_id.as_str()))?;
        let dim = records.first().map_or(0, |r| r.embedding.len());
        let mut docs = Vec::with_capacity(records.len());
        let mut by_id = BTreeMap::new();
        for (i, mut r) in records.into_iter().enumerate() {
            if r.body.trim().is_empty() {
                return Err(Error::precondition(format!("document `{}` has an empty body", r.doc_id)));
            }
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.embedding.len(),
                });
            }
            r.embedding = vector::normalized(&r.embedding).ok_or_else(|| {
                Error::MalformedResponse(format!("document `{}` has a zero embedding", r.doc_id))
            })?;
            by_id.insert(r.doc_id.clone(), i);
            docs.push(r);
        }
        Ok(Self { docs, by_id, dim })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn docs(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    /// Embeds `query` and returns the top `k` documents.
    pub fn retrieve(&self, query: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<RetrievalResult>> {
        if self.docs.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let q = embedder.embed_one(query)?;
        self.retrieve_vector(&q, k)
    }

    /// Exact top-`k` by cosine; ties go to the lexicographically smaller id.
    pub fn retrieve_vector(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalResult>> {
        if self.docs.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::precondition("k must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let q = vector::normalized(query)
            .ok_or_else(|| Error::precondition("query embedding is zero"))?;
        let mut scored: Vec<(f64, &str)> = self
            .docs
            .iter()
            .map(|d| (vector::dot(&q, &d.embedding).clamp(-1.0, 1.0), d.doc_id.as_str()))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, id)| RetrievalResult {
                doc_id: id.to_string(),
                score,
            })
            .collect())
    }
}

fn check_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateDocument(id.to_string()));
        }
    }
    Ok(())
}

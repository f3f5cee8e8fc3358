//! Semantic type recommendation for as-you-type queries.
//!
//! Retrieval over a bundled Schema.org type list. Types whose label starts
//! with the query rank first; remaining slots are filled by cosine
//! similarity between hashed character-n-gram embeddings, which are
//! self-contained and deterministic (no pretrained weights). [`server`]
//! exposes the index over HTTP.

pub mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding dimensionality.
pub const DEFAULT_DIM: usize = 256;
const NGRAM_MIN: usize = 3;
const NGRAM_MAX: usize = 6;

/// Bundled Schema.org type list (label + URI per line).
const BUNDLED_TYPES: &str = include_str!("../../data/schema_types.jsonl");

/// One entry of the type list with its precomputed, L2-normalized embedding.
#[derive(Debug, Clone)]
pub struct SemanticType {
    pub label: String,
    pub uri: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reason {
    Prefix,
    Embedding,
}

/// One ranked suggestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recommendation {
    pub label: String,
    pub uri: String,
    pub score: f64,
    pub reason: Reason,
}

fn normalize_query(text: &str) -> String {
    text.chars()
        .flat_map(char::to_lowercase)
        .filter(char::is_ascii_alphanumeric)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Character n-grams (n = 3..6) of the normalized text with `<`/`>` boundary
/// markers.
fn ngrams(normalized: &str) -> Vec<String> {
    let marked: Vec<char> = format!("<{normalized}>").chars().collect();
    let mut grams = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        if marked.len() < n {
            break;
        }
        for window in marked.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

/// Embeds text as a bag of hashed character n-grams: bucket counts averaged
/// over the n-gram total, then L2-normalized. Returns None for text that
/// normalizes to empty (the empty-query signal).
pub fn embed(text: &str, dim: usize) -> Option<Vec<f64>> {
    let normalized = normalize_query(text);
    if normalized.is_empty() || dim == 0 {
        return None;
    }
    let grams = ngrams(&normalized);
    let mut buckets = vec![0.0f64; dim];
    for gram in &grams {
        buckets[(fnv1a(gram.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let total = grams.len() as f64;
    for b in buckets.iter_mut() {
        *b /= total;
    }
    let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    for b in buckets.iter_mut() {
        *b /= norm;
    }
    Some(buckets)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Immutable type index; built once at startup, shared by all requests.
#[derive(Debug)]
pub struct TypeIndex {
    types: Vec<SemanticType>,
    dim: usize,
}

impl TypeIndex {
    /// Parses a newline-delimited JSON type list (`{"label": ..., "uri": ...}`)
    /// and embeds every label. Labels must be unique.
    pub fn from_jsonl(text: &str, dim: usize) -> Result<TypeIndex> {
        #[derive(Deserialize)]
        struct Record {
            label: String,
            uri: String,
        }
        let mut types = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::Input(format!("type list line {}: {e}", lineno + 1)))?;
            if !seen.insert(rec.label.clone()) {
                return Err(Error::Input(format!(
                    "type list line {}: duplicate label {:?}",
                    lineno + 1,
                    rec.label
                )));
            }
            let embedding = embed(&rec.label, dim).ok_or_else(|| {
                Error::Input(format!(
                    "type list line {}: label {:?} normalizes to empty",
                    lineno + 1,
                    rec.label
                ))
            })?;
            types.push(SemanticType {
                label: rec.label,
                uri: rec.uri,
                embedding,
            });
        }
        Ok(TypeIndex { types, dim })
    }

    pub fn load(path: &std::path::Path, dim: usize) -> Result<TypeIndex> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TypeIndex::from_jsonl(&text, dim)
    }

    /// The Schema.org list compiled into the binary.
    pub fn bundled(dim: usize) -> TypeIndex {
        TypeIndex::from_jsonl(BUNDLED_TYPES, dim).expect("bundled type list is well-formed")
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.label.as_str())
    }

    /// Ranked suggestions for a partial query. Prefix matches come first
    /// (score 1.0, alphabetical); the rest are ordered by cosine similarity
    /// descending with label as the tiebreak. Exactly `min(k, len)` results;
    /// empty (or unembeddable) queries return nothing.
    pub fn recommend(&self, query: &str, k: usize) -> Vec<Recommendation> {
        let Some(query_vec) = embed(query, self.dim) else {
            return Vec::new();
        };
        let query_lower = query.to_lowercase();
        let k = k.min(self.types.len());

        let mut prefix: Vec<&SemanticType> = self
            .types
            .iter()
            .filter(|t| t.label.to_lowercase().starts_with(&query_lower))
            .collect();
        prefix.sort_by(|a, b| a.label.cmp(&b.label));

        let mut out: Vec<Recommendation> = prefix
            .iter()
            .take(k)
            .map(|t| Recommendation {
                label: t.label.clone(),
                uri: t.uri.clone(),
                score: 1.0,
                reason: Reason::Prefix,
            })
            .collect();

        if out.len() < k {
            let mut rest: Vec<(f64, &SemanticType)> = self
                .types
                .iter()
                .filter(|t| !t.label.to_lowercase().starts_with(&query_lower))
                .map(|t| (cosine(&query_vec, &t.embedding), t))
                .collect();
            rest.sort_by(|(sa, ta), (sb, tb)| {
                sb.total_cmp(sa).then_with(|| ta.label.cmp(&tb.label))
            });
            for (similarity, t) in rest.into_iter().take(k - out.len()) {
                out.push(Recommendation {
                    label: t.label.clone(),
                    uri: t.uri.clone(),
                    score: similarity.clamp(0.0, 1.0),
                    reason: Reason::Embedding,
                });
            }
        }
        out
    }
}

//! Lexical post-OCR correction.
//!
//! Recognized strings are compared against a vocabulary derived from
//! gazetteer entity names using minimum edit distance; ties break on entity
//! popularity, then lexicographically. Whole labels are corrected as whole
//! strings — map labels rarely tokenize cleanly. The acceptance threshold is
//! length-scaled (`min(max_distance, len/3)`) so short labels are not
//! rewritten wholesale.

use std::collections::BTreeMap;

use crate::linker::GeoEntity;

/// Canonical label form shared by the corrector and the entity linker:
/// uppercase, trimmed, internal whitespace collapsed, characters outside
/// [A–Z, 0–9, space, hyphen, apostrophe] stripped.
pub fn normalize_label(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars().flat_map(char::to_uppercase) {
        let keep = matches!(ch, 'A'..='Z' | '0'..='9' | '-' | '\'');
        if keep {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else if ch.is_whitespace() {
            pending_space = true;
        }
        // Everything else is dropped without acting as a separator.
    }
    out
}

/// Minimum number of single-character insertions, deletions and
/// substitutions transforming `a` into `b` (two-row Wagner-Fischer).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub_cost = if ca == cb { 0 } else { 1 };
            curr[j + 1] = (prev[j] + sub_cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// One normalized surface with its aggregated popularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyEntry {
    pub surface: String,
    pub frequency: u64,
}

/// Immutable vocabulary over normalized entity names, bucketed by surface
/// length so the candidate scan only touches surfaces within edit-distance
/// reach.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: Vec<VocabularyEntry>,
    /// Surface length (in chars) -> indices into `entries`.
    by_len: BTreeMap<usize, Vec<usize>>,
    /// Entities skipped for having an empty normalized name.
    pub skipped_empty: usize,
}

impl Vocabulary {
    /// Builds the vocabulary from (name, popularity) pairs. One entry per
    /// distinct normalized surface, frequencies summed; deterministic for
    /// any input order. Empty names are skipped and counted.
    pub fn build<S: AsRef<str>>(names: impl IntoIterator<Item = (S, u64)>) -> Vocabulary {
        let mut freq: BTreeMap<String, u64> = BTreeMap::new();
        let mut skipped_empty = 0usize;
        for (name, popularity) in names {
            let surface = normalize_label(name.as_ref());
            if surface.is_empty() {
                skipped_empty += 1;
                continue;
            }
            *freq.entry(surface).or_insert(0) += popularity;
        }
        let entries: Vec<VocabularyEntry> = freq
            .into_iter()
            .map(|(surface, frequency)| VocabularyEntry { surface, frequency })
            .collect();
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            by_len
                .entry(entry.surface.chars().count())
                .or_default()
                .push(i);
        }
        Vocabulary {
            entries,
            by_len,
            skipped_empty,
        }
    }

    /// Builds from gazetteer entities (name + popularity).
    pub fn from_entities<'a>(entities: impl IntoIterator<Item = &'a GeoEntity>) -> Vocabulary {
        Vocabulary::build(
            entities
                .into_iter()
                .map(|e| (e.name.as_str(), e.popularity)),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    /// Iterates entries whose surface length differs from `len` by at most
    /// `slack` characters.
    fn candidates(&self, len: usize, slack: usize) -> impl Iterator<Item = &VocabularyEntry> {
        let lo = len.saturating_sub(slack);
        let hi = len + slack;
        self.by_len
            .range(lo..=hi)
            .flat_map(move |(_, idxs)| idxs.iter().map(move |&i| &self.entries[i]))
    }
}

/// Outcome of correcting one label. When nothing in the vocabulary is close
/// enough, the normalized input passes through unchanged (`matched` false).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionResult {
    pub postocr_label: String,
    pub matched: bool,
    /// Edit distance to the chosen surface; meaningful only when matched.
    pub distance: usize,
}

/// Corrects a recognized string against the vocabulary. Candidates within
/// the effective threshold `min(max_distance, len/3)` compete on
/// (distance asc, frequency desc, surface asc).
pub fn correct(text: &str, vocab: &Vocabulary, max_distance: usize) -> CorrectionResult {
    let normalized = normalize_label(text);
    let len = normalized.chars().count();
    let threshold = max_distance.min(len / 3);
    let mut best: Option<(usize, u64, &str)> = None;
    for entry in vocab.candidates(len, threshold) {
        let d = levenshtein(&normalized, &entry.surface);
        if d > threshold {
            continue;
        }
        let candidate = (d, entry.frequency, entry.surface.as_str());
        best = Some(match best {
            None => candidate,
            Some(current) => {
                let (cd, cf, cs) = current;
                let (nd, nf, ns) = candidate;
                if nd < cd || (nd == cd && (nf > cf || (nf == cf && ns < cs))) {
                    candidate
                } else {
                    (cd, cf, cs)
                }
            }
        });
    }
    match best {
        Some((distance, _, surface)) => CorrectionResult {
            postocr_label: surface.to_string(),
            matched: true,
            distance,
        },
        None => CorrectionResult {
            postocr_label: normalized,
            matched: false,
            distance: 0,
        },
    }
}

//! The L1 scorer: a fixed-weight fielded saturation scorer used both as the
//! relevance estimate inside the agent reward and as the rank-and-prune stage
//! after matching.

use serde::{Deserialize, Serialize};

use crate::data::{Document, NUM_FIELDS};
use crate::index::FieldedIndex;

/// Field weights, static-rank mix, and saturation constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct L1Weights {
    /// Indexed by `FieldId as usize` (A, U, B, T).
    pub field_weights: [f64; NUM_FIELDS],
    /// Mix between term evidence (1 - lambda) and normalized static rank.
    pub lambda: f64,
    /// Saturation constant K in sat(x) = x / (x + K).
    pub saturation_k: f64,
}

impl Default for L1Weights {
    fn default() -> Self {
        L1Weights {
            // A, U, B, T
            field_weights: [1.5, 2.0, 0.5, 2.0],
            lambda: 0.2,
            saturation_k: 1.0,
        }
    }
}

impl L1Weights {
    pub fn validate(&self) -> crate::Result<()> {
        if !self.field_weights.iter().any(|&w| w > 0.0) {
            return Err(crate::Error::Config(
                "at least one L1 field weight must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(crate::Error::Config("L1 lambda must be in [0, 1]".into()));
        }
        if self.saturation_k <= 0.0 {
            return Err(crate::Error::Config("L1 saturation K must be > 0".into()));
        }
        Ok(())
    }
}

fn sat(x: f64, k: f64) -> f64 {
    x / (x + k)
}

fn score_from_parts(
    per_term_weighted_tf: impl Iterator<Item = f64>,
    static_rank: f64,
    max_static_rank: f64,
    w: &L1Weights,
) -> f64 {
    let evidence: f64 = per_term_weighted_tf
        .map(|x| sat(x, w.saturation_k))
        .sum();
    let norm_rank = if max_static_rank > 0.0 {
        static_rank / max_static_rank
    } else {
        0.0
    };
    (1.0 - w.lambda) * evidence + w.lambda * norm_rank
}

/// Score a document through the index posting lists. Duplicate query terms
/// contribute once per distinct term.
pub fn l1_score(index: &FieldedIndex, terms: &[String], doc_ordinal: u32, w: &L1Weights) -> f64 {
    let mut seen: Vec<&str> = Vec::with_capacity(terms.len());
    let per_term = terms.iter().filter_map(|t| {
        if seen.contains(&t.as_str()) {
            return None;
        }
        seen.push(t.as_str());
        let posting = index.posting_list(t)?.tf_for(doc_ordinal)?;
        let x: f64 = (0..NUM_FIELDS)
            .map(|f| w.field_weights[f] * posting.tf[f] as f64)
            .sum();
        Some(x)
    });
    // Collect to release the closure borrow ordering; lists are tiny.
    let parts: Vec<f64> = per_term.collect();
    score_from_parts(
        parts.into_iter(),
        index.doc(doc_ordinal).static_rank,
        index.max_static_rank(),
        w,
    )
}

/// Score a raw document without an index; agrees with [`l1_score`] when the
/// document is indexed and `max_static_rank` matches.
pub fn l1_score_doc(doc: &Document, terms: &[String], max_static_rank: f64, w: &L1Weights) -> f64 {
    let mut seen: Vec<&str> = Vec::with_capacity(terms.len());
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        if seen.contains(&t.as_str()) {
            continue;
        }
        seen.push(t.as_str());
        let x: f64 = (0..NUM_FIELDS)
            .map(|f| {
                let tf = doc.fields[f].iter().filter(|tok| *tok == t).count();
                w.field_weights[f] * tf as f64
            })
            .sum();
        if x > 0.0 {
            parts.push(x);
        }
    }
    score_from_parts(parts.into_iter(), doc.static_rank, max_static_rank, w)
}

/// Sort candidates by L1 score descending, ties by static rank descending,
/// then doc_id ascending; truncate to `depth`.
pub fn rank_candidates(
    index: &FieldedIndex,
    terms: &[String],
    candidates: &[u32],
    w: &L1Weights,
    depth: usize,
) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = candidates
        .iter()
        .map(|&c| (c, l1_score(index, terms, c, w)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| {
                index
                    .doc(b.0)
                    .static_rank
                    .partial_cmp(&index.doc(a.0).static_rank)
                    .unwrap()
            })
            .then_with(|| index.doc(a.0).doc_id.cmp(&index.doc(b.0).doc_id))
    });
    scored.truncate(depth);
    scored
}

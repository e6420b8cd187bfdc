//! Exact top-k retrieval and the mean percentile rank of labelled winners.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{CatalogStore, EmbeddingError, PersonaSet, ScoreVector};
use crate::tournament::LabelRecord;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("winner `{0}` is not in the catalog")]
    UnknownWinner(String),
    #[error("persona `{0}` is not in the persona set")]
    UnknownPersona(String),
    #[error("percentile rank needs at least 2 catalog items, got {0}")]
    CatalogTooSmall(usize),
    #[error("score vector has {scores} entries for {ids} ids")]
    LengthMismatch { scores: usize, ids: usize },
    #[error("no labels to evaluate")]
    NoLabels,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub persona_id: String,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// Descending score, then ascending id.
fn rank_order(scores: &[f64], ids: &[String], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b]))
}

/// The `k` best catalog items by brute-force scan.
pub fn top_k(scores: &ScoreVector, ids: &[String], k: usize) -> Result<RetrievalResult, MetricError> {
    let n = scores.len();
    if ids.len() != n {
        return Err(MetricError::LengthMismatch {
            scores: n,
            ids: ids.len(),
        });
    }
    if k == 0 || k > n {
        return Err(MetricError::KOutOfRange { k, n });
    }
    let s = &scores.scores;
    let mut order: Vec<usize> = (0..n).collect();
    if k < n {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(s, ids, a, b));
        order.truncate(k);
    }
    order.sort_unstable_by(|&a, &b| rank_order(s, ids, a, b));
    Ok(RetrievalResult {
        persona_id: scores.persona_id.clone(),
        ids: order.iter().map(|&i| ids[i].clone()).collect(),
        scores: order.iter().map(|&i| s[i]).collect(),
    })
}

/// Share of the other items scored strictly below the winner, ties counted
/// half, on a 0–100 scale.
pub fn percentile_rank(scores: &[f64], winner_row: usize) -> Result<f64, MetricError> {
    let n = scores.len();
    if n < 2 {
        return Err(MetricError::CatalogTooSmall(n));
    }
    let w = scores[winner_row];
    let mut below = 0usize;
    let mut ties = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == winner_row {
            continue;
        }
        if s < w {
            below += 1;
        } else if s == w {
            ties += 1;
        }
    }
    Ok(100.0 * (below as f64 + 0.5 * ties as f64) / (n - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean: f64,
    pub n_personas: usize,
    pub catalog_size: usize,
    pub per_persona: BTreeMap<String, f64>,
}

/// Mean percentile rank of each label's winner under the current student.
pub fn mean_percentile(
    labels: &[LabelRecord],
    store: &CatalogStore,
    personas: &PersonaSet,
) -> Result<MetricReport, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::NoLabels);
    }
    let values: Vec<(String, f64)> = labels
        .par_iter()
        .map(|label| {
            let persona = personas
                .get(&label.persona_id)
                .ok_or_else(|| MetricError::UnknownPersona(label.persona_id.clone()))?;
            let row = store
                .index_of(&label.winner_id)
                .ok_or_else(|| MetricError::UnknownWinner(label.winner_id.clone()))?;
            let scores = store.score_all(persona)?;
            Ok((label.persona_id.clone(), percentile_rank(&scores.scores, row)?))
        })
        .collect::<Result<_, MetricError>>()?;
    let mean = values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64;
    Ok(MetricReport {
        mean,
        n_personas: values.len(),
        catalog_size: store.len(),
        per_persona: values.into_iter().collect(),
    })
}

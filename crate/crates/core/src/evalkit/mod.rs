//! Pair-classification evaluation of embedding models.
//!
//! A model is scored by embedding both sides of every labeled pair and
//! treating their cosine similarity as a duplicate score. The report carries
//! five metrics:
//!
//! * precision, recall and F1 at the threshold that maximizes F1,
//! * accuracy at the threshold that maximizes accuracy,
//! * non-interpolated average precision, which needs no threshold.
//!
//! Precision and recall are therefore *not* reported at the accuracy
//! threshold. Keep that in mind when comparing against numbers produced
//! under a single fixed threshold.

mod dataset;
mod forgetting;
mod metrics;
mod report;

use std::collections::HashMap;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedding, SimilarityScore, Threshold, VectorError};
use crate::pair::LabeledPair;
use crate::provider::{EmbeddingProvider, ProviderError};

pub use dataset::{load_pairs_csv, read_pairs_csv, write_pairs_csv, RowError};
pub use forgetting::{forgetting_eval, ForgettingDeltas, ForgettingReport, MetricDeltas};
pub use metrics::{AccuracyCalibration, F1Calibration};
pub use report::{read_report, write_report, write_table_csv, TableRow, TABLE_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("{} bad row(s); first: {}", .0.len(), .0.first().map(|r| r.to_string()).unwrap_or_default())]
    Rows(Vec<RowError>),
    #[error("no positive pairs")]
    NoPositives,
    #[error("labels are all one class")]
    DegenerateLabels,
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error("provider failed on batch {batch}: {source}")]
    Provider {
        batch: usize,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    /// True when the failure came from the embedding provider rather than the data.
    pub fn is_provider(&self) -> bool {
        matches!(self, EvalError::Provider { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: LabeledPair,
    pub score: SimilarityScore,
}

fn observations(scored: &[ScoredPair]) -> Vec<(f64, bool)> {
    scored
        .iter()
        .map(|s| (s.score.value(), s.pair.is_duplicate()))
        .collect()
}

/// Metric summary for one model on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub average_precision: f64,
    pub f1_threshold: Threshold,
    pub accuracy_threshold: Threshold,
    pub n_pairs: usize,
    pub positives: usize,
}

pub fn average_precision(scored: &[ScoredPair]) -> Result<f64, EvalError> {
    metrics::average_precision(&observations(scored))
}

pub fn best_threshold_f1(scored: &[ScoredPair]) -> Result<F1Calibration, EvalError> {
    metrics::best_threshold_f1(&observations(scored))
}

pub fn best_threshold_accuracy(scored: &[ScoredPair]) -> Result<AccuracyCalibration, EvalError> {
    metrics::best_threshold_accuracy(&observations(scored))
}

/// Builds a report from already-scored pairs.
pub fn evaluate_scored(scored: &[ScoredPair]) -> Result<EvalReport, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let obs = observations(scored);
    let f1 = metrics::best_threshold_f1(&obs)?;
    let acc = metrics::best_threshold_accuracy(&obs)?;
    let ap = metrics::average_precision(&obs)?;
    let threshold = |v: f64| Threshold::new(v).expect("calibrated thresholds lie in [-1, 1]");
    Ok(EvalReport {
        precision: f1.precision,
        recall: f1.recall,
        f1: f1.f1,
        accuracy: acc.accuracy,
        average_precision: ap,
        f1_threshold: threshold(f1.threshold),
        accuracy_threshold: threshold(acc.threshold),
        n_pairs: scored.len(),
        positives: obs.iter().filter(|o| o.1).count(),
    })
}

/// Embeds every distinct text once and scores each pair by cosine similarity.
///
/// Texts are sent in batches of at most `provider.max_batch()`, with up to
/// `parallelism` batches in flight. Output order matches `pairs`.
pub async fn score_pairs(
    pairs: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<Vec<ScoredPair>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut distinct: Vec<String> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for q in [p.question1(), p.question2()] {
            position.entry(q).or_insert_with(|| {
                distinct.push(q.to_string());
                distinct.len() - 1
            });
        }
    }

    let batches: Vec<(usize, &[String])> = distinct
        .chunks(provider.max_batch().max(1))
        .enumerate()
        .collect();
    let results: Vec<Vec<Embedding>> = stream::iter(batches)
        .map(|(batch, texts)| async move {
            provider
                .embed_batch(texts)
                .await
                .map(|r| r.embeddings)
                .map_err(|source| EvalError::Provider { batch, source })
        })
        .buffered(parallelism.max(1))
        .try_collect()
        .await?;
    let embeddings: Vec<Embedding> = results.into_iter().flatten().collect();
    if embeddings.len() != distinct.len() {
        return Err(EvalError::Provider {
            batch: 0,
            source: ProviderError::InvalidResponse(format!(
                "{} embeddings for {} texts",
                embeddings.len(),
                distinct.len()
            )),
        });
    }

    pairs
        .iter()
        .map(|p| {
            let a = &embeddings[position[p.question1()]];
            let b = &embeddings[position[p.question2()]];
            Ok(ScoredPair {
                pair: p.clone(),
                score: cosine_similarity(a, b)?,
            })
        })
        .collect()
}

/// Scores `pairs` with `provider` and summarizes the result.
pub async fn evaluate(
    pairs: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<EvalReport, EvalError> {
    let scored = score_pairs(pairs, provider, parallelism).await?;
    evaluate_scored(&scored)
}

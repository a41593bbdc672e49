//! Embedding latency measurement and latency/precision scatter data.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no queries to measure")]
    NoQueries,
    #[error("repeats must be >= 1")]
    ZeroRepeats,
    #[error("no samples")]
    NoSamples,
    #[error("sample {0} is negative or not finite")]
    BadSample(usize),
    #[error("provider failed on call {call}: {source}")]
    Provider {
        call: usize,
        #[source]
        source: ProviderError,
    },
    #[error("no scatter entries")]
    NoEntries,
    #[error("scatter entry {model}: {message}")]
    BadEntry { model: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub model: String,
    pub n_calls: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Percentile of sorted data with linear interpolation between closest ranks.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencyStats {
    pub fn from_samples(model: impl Into<String>, samples: &[f64]) -> Result<Self, BenchError> {
        if samples.is_empty() {
            return Err(BenchError::NoSamples);
        }
        if let Some(i) = samples.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(BenchError::BadSample(i));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean_s = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Ok(Self {
            model: model.into(),
            n_calls: sorted.len(),
            // Summation order can put the mean an ulp outside the range.
            mean_s: mean_s.clamp(sorted[0], sorted[sorted.len() - 1]),
            p50_s: percentile(&sorted, 0.5),
            p95_s: percentile(&sorted, 0.95),
            min_s: sorted[0],
            max_s: sorted[sorted.len() - 1],
        })
    }
}

/// Times single-text embedding calls, one at a time.
///
/// `warmup` unmeasured calls cycle through `queries`, then every query is
/// embedded `repeats` times. Each sample is the wall time of one call.
pub async fn measure_latency(
    provider: &dyn EmbeddingProvider,
    queries: &[String],
    warmup: usize,
    repeats: usize,
) -> Result<LatencyStats, BenchError> {
    if queries.is_empty() {
        return Err(BenchError::NoQueries);
    }
    if repeats == 0 {
        return Err(BenchError::ZeroRepeats);
    }
    let mut call = 0;
    for q in queries.iter().cycle().take(warmup) {
        provider
            .embed_batch(std::slice::from_ref(q))
            .await
            .map_err(|source| BenchError::Provider { call, source })?;
        call += 1;
    }
    let mut samples = Vec::with_capacity(queries.len() * repeats);
    for _ in 0..repeats {
        for q in queries {
            let start = Instant::now();
            provider
                .embed_batch(std::slice::from_ref(q))
                .await
                .map_err(|source| BenchError::Provider { call, source })?;
            samples.push(start.elapsed().as_secs_f64());
            call += 1;
        }
    }
    LatencyStats::from_samples(provider.model_id(), &samples)
}

/// One point: mean embedding time against average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterEntry {
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "x")]
    pub mean_s: f64,
    #[serde(rename = "y")]
    pub average_precision: f64,
}

impl ScatterEntry {
    pub fn new(model: impl Into<String>, mean_s: f64, average_precision: f64) -> Self {
        Self {
            model: model.into(),
            mean_s,
            average_precision,
        }
    }

    fn check(&self) -> Result<(), BenchError> {
        let bad = |message: &str| BenchError::BadEntry {
            model: self.model.clone(),
            message: message.into(),
        };
        if !(self.mean_s.is_finite() && self.mean_s >= 0.0) {
            return Err(bad("x must be a nonnegative number of seconds"));
        }
        if !(0.0..=1.0).contains(&self.average_precision) {
            return Err(bad("y must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ScatterRow {
    x: f64,
    y: f64,
    #[serde(rename = "Model")]
    model: String,
}

/// Writes `x,y,Model` rows in input order.
pub fn emit_scatter_csv(entries: &[ScatterEntry], path: &Path) -> Result<(), BenchError> {
    if entries.is_empty() {
        return Err(BenchError::NoEntries);
    }
    for e in entries {
        e.check()?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(ScatterRow {
            x: e.mean_s,
            y: e.average_precision,
            model: e.model.clone(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterEntry>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ScatterRow = row?;
        let e = ScatterEntry::new(row.model, row.x, row.y);
        e.check()?;
        out.push(e);
    }
    Ok(out)
}

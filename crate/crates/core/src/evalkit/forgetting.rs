//! Cross-domain comparison of a tuned model against its base model.
//!
//! Both models are evaluated on the domain they were tuned for and on an
//! unrelated domain. A healthy fine-tune improves the first without giving
//! back much on the second.

use serde::{Deserialize, Serialize};

use crate::pair::LabeledPair;
use crate::provider::EmbeddingProvider;

use super::{evaluate, EvalError, EvalReport};

/// Signed `tuned - base` differences for each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub average_precision: f64,
}

impl MetricDeltas {
    pub fn between(tuned: &EvalReport, base: &EvalReport) -> Self {
        Self {
            precision: tuned.precision - base.precision,
            recall: tuned.recall - base.recall,
            f1: tuned.f1 - base.f1,
            accuracy: tuned.accuracy - base.accuracy,
            average_precision: tuned.average_precision - base.average_precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingDeltas {
    pub in_domain: MetricDeltas,
    pub out_domain: MetricDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub in_domain: EvalReport,
    pub out_domain: EvalReport,
    pub baseline_in_domain: EvalReport,
    pub baseline_out_domain: EvalReport,
    pub deltas: ForgettingDeltas,
}

impl ForgettingReport {
    pub fn from_reports(
        in_domain: EvalReport,
        out_domain: EvalReport,
        baseline_in_domain: EvalReport,
        baseline_out_domain: EvalReport,
    ) -> Self {
        let deltas = ForgettingDeltas {
            in_domain: MetricDeltas::between(&in_domain, &baseline_in_domain),
            out_domain: MetricDeltas::between(&out_domain, &baseline_out_domain),
        };
        Self {
            in_domain,
            out_domain,
            baseline_in_domain,
            baseline_out_domain,
            deltas,
        }
    }
}

pub async fn forgetting_eval(
    in_domain_pairs: &[LabeledPair],
    out_domain_pairs: &[LabeledPair],
    tuned: &dyn EmbeddingProvider,
    base: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<ForgettingReport, EvalError> {
    let in_domain = evaluate(in_domain_pairs, tuned, parallelism).await?;
    let out_domain = evaluate(out_domain_pairs, tuned, parallelism).await?;
    let baseline_in_domain = evaluate(in_domain_pairs, base, parallelism).await?;
    let baseline_out_domain = evaluate(out_domain_pairs, base, parallelism).await?;
    Ok(ForgettingReport::from_reports(
        in_domain,
        out_domain,
        baseline_in_domain,
        baseline_out_domain,
    ))
}

//! Ranking and threshold metrics over `(score, is_duplicate)` observations.
//!
//! Prediction rule everywhere: duplicate iff `score >= threshold`.

use std::cmp::Ordering;

use super::EvalError;

/// Non-interpolated average precision.
///
/// Observations are ranked by score descending; equal scores keep their
/// input order so the ranking never depends on labels.
pub fn average_precision(obs: &[(f64, bool)]) -> Result<f64, EvalError> {
    let positives = obs.iter().filter(|o| o.1).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    // Stable sort: ties stay in index order.
    order.sort_by(|&a, &b| obs[b].0.partial_cmp(&obs[a].0).unwrap_or(Ordering::Equal));

    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if obs[i].1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

impl Counts {
    fn f1_ratio(self) -> (u64, u64) {
        (2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn precision(self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    fn recall(self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    fn accuracy(self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `a > b` for non-negative fractions, exactly. A zero denominator counts as 0.
fn frac_gt(a: (u64, u64), b: (u64, u64)) -> bool {
    let (an, ad) = (u128::from(a.0), u128::from(a.1));
    let (bn, bd) = (u128::from(b.0), u128::from(b.1));
    match (ad, bd) {
        (0, _) => false,
        (_, 0) => an > 0,
        _ => an * bd > bn * ad,
    }
}

/// One candidate cut: predict duplicate for every score `>= threshold`.
#[derive(Debug, Clone, Copy)]
struct Cut {
    threshold: f64,
    counts: Counts,
}

/// Candidate thresholds from largest to smallest, with their confusion counts.
///
/// Candidates are the midpoints between adjacent distinct scores, a sentinel
/// above the maximum (predict nothing) and a sentinel below the minimum
/// (predict everything). Thresholds stay inside `[-1, 1]`; when the maximum
/// score is already 1.0 the predict-nothing cut is not representable and is
/// skipped.
fn cuts(obs: &[(f64, bool)]) -> Vec<Cut> {
    let positives = obs.iter().filter(|o| o.1).count() as u64;
    let negatives = obs.len() as u64 - positives;
    let mut sorted: Vec<(f64, bool)> = obs.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let mut out = Vec::with_capacity(sorted.len() + 2);
    let Some(&(max, _)) = sorted.first() else {
        return out;
    };
    let min = sorted[sorted.len() - 1].0;

    let mut counts = Counts {
        tp: 0,
        fp: 0,
        fn_: positives,
        tn: negatives,
    };
    let above = (max + 1.0) / 2.0;
    if above > max && above <= 1.0 {
        out.push(Cut {
            threshold: above,
            counts,
        });
    }
    let mut i = 0;
    while i < sorted.len() {
        let group_score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == group_score {
            if sorted[i].1 {
                counts.tp += 1;
                counts.fn_ -= 1;
            } else {
                counts.fp += 1;
                counts.tn -= 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(&(next, _)) => {
                let mid = next + (group_score - next) / 2.0;
                if mid > next {
                    mid
                } else {
                    group_score
                }
            }
            None => ((min - 1.0) / 2.0).min(min),
        };
        out.push(Cut { threshold, counts });
    }
    out
}

fn check_labels(obs: &[(f64, bool)]) -> Result<(), EvalError> {
    let positives = obs.iter().filter(|o| o.1).count();
    if positives == 0 || positives == obs.len() {
        return Err(EvalError::DegenerateLabels);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Calibration {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyCalibration {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Threshold maximizing F1; ties go to the larger threshold.
pub fn best_threshold_f1(obs: &[(f64, bool)]) -> Result<F1Calibration, EvalError> {
    check_labels(obs)?;
    let mut best: Option<Cut> = None;
    for cut in cuts(obs) {
        if best.is_none_or(|b| frac_gt(cut.counts.f1_ratio(), b.counts.f1_ratio())) {
            best = Some(cut);
        }
    }
    let best = best.expect("non-empty input has cuts");
    let precision = best.counts.precision();
    let recall = best.counts.recall();
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Calibration {
        threshold: best.threshold,
        precision,
        recall,
        f1,
    })
}

/// Threshold maximizing accuracy; ties go to the larger threshold.
pub fn best_threshold_accuracy(obs: &[(f64, bool)]) -> Result<AccuracyCalibration, EvalError> {
    check_labels(obs)?;
    let mut best: Option<Cut> = None;
    for cut in cuts(obs) {
        let correct = cut.counts.tp + cut.counts.tn;
        if best.is_none_or(|b| correct > b.counts.tp + b.counts.tn) {
            best = Some(cut);
        }
    }
    let best = best.expect("non-empty input has cuts");
    Ok(AccuracyCalibration {
        threshold: best.threshold,
        accuracy: best.counts.accuracy(),
    })
}

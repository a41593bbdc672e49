//! Brute-force reference implementations of the evaluation metrics.

use semcache::evalkit::ScoredPair;
use semcache::{LabeledPair, SimilarityScore};

pub fn scored(obs: &[(f64, bool)]) -> Vec<ScoredPair> {
    obs.iter()
        .enumerate()
        .map(|(i, &(s, d))| ScoredPair {
            pair: LabeledPair::new(format!("a{i}"), format!("b{i}"), d).unwrap(),
            score: SimilarityScore::new(s),
        })
        .collect()
}

/// Ranks by (score desc, index asc) and averages precision over every prefix
/// that ends on a positive.
pub fn ap(obs: &[(f64, bool)]) -> f64 {
    let mut ranked: Vec<(usize, f64, bool)> = obs.iter().enumerate().map(|(i, &(s, d))| (i, s, d)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let positives = obs.iter().filter(|o| o.1).count();
    let mut sum = 0.0;
    for i in 1..=ranked.len() {
        if ranked[i - 1].2 {
            let hits = ranked[..i].iter().filter(|r| r.2).count();
            sum += hits as f64 / i as f64;
        }
    }
    sum / positives as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn confusion(obs: &[(f64, bool)], threshold: f64) -> Confusion {
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for &(s, d) in obs {
        match (s >= threshold, d) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Every distinguishable prediction set, from fewest predicted positives to
/// most: predict nothing (when representable), then `score >= s` for each
/// distinct score in descending order.
fn scan(obs: &[(f64, bool)]) -> Vec<Confusion> {
    let mut distinct: Vec<f64> = obs.iter().map(|o| o.0).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let mut out = Vec::new();
    if distinct[0] < 1.0 {
        out.push(confusion(obs, f64::INFINITY));
    }
    out.extend(distinct.iter().map(|&s| confusion(obs, s)));
    out
}

fn precision(c: Confusion) -> f64 {
    if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 }
}

fn recall(c: Confusion) -> f64 {
    if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 }
}

/// Best-F1 confusion; earlier (stricter) prediction sets win ties.
pub fn best_f1(obs: &[(f64, bool)]) -> (Confusion, f64, f64, f64) {
    let mut best: Option<Confusion> = None;
    for c in scan(obs) {
        // F1 = 2tp / (2tp + fp + fn), compared by cross-multiplication.
        let better = match best {
            None => true,
            Some(b) => {
                let (n1, d1) = (2 * c.tp as u128, (2 * c.tp + c.fp + c.fn_) as u128);
                let (n2, d2) = (2 * b.tp as u128, (2 * b.tp + b.fp + b.fn_) as u128);
                n1 * d2 > n2 * d1
            }
        };
        if better {
            best = Some(c);
        }
    }
    let c = best.unwrap();
    let (p, r) = (precision(c), recall(c));
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (c, p, r, f1)
}

pub fn best_accuracy(obs: &[(f64, bool)]) -> (Confusion, f64) {
    let mut best: Option<Confusion> = None;
    for c in scan(obs) {
        if best.is_none_or(|b| c.tp + c.tn > b.tp + b.tn) {
            best = Some(c);
        }
    }
    let c = best.unwrap();
    (c, (c.tp + c.tn) as f64 / obs.len() as f64)
}

/// Compares the library against the oracles on one instance; `Err` describes
/// the first mismatch.
pub fn check_instance(obs: &[(f64, bool)]) -> Result<(), String> {
    let s = scored(obs);
    let got_ap = semcache::evalkit::average_precision(&s).map_err(|e| e.to_string())?;
    if got_ap != ap(obs) {
        return Err(format!("AP {got_ap} != oracle {} on {obs:?}", ap(obs)));
    }

    let f = semcache::evalkit::best_threshold_f1(&s).map_err(|e| e.to_string())?;
    let (c, p, r, f1) = best_f1(obs);
    if !(-1.0..=1.0).contains(&f.threshold) {
        return Err(format!("F1 threshold {} out of range", f.threshold));
    }
    if confusion(obs, f.threshold) != c || (f.precision, f.recall, f.f1) != (p, r, f1) {
        return Err(format!("F1 calibration {f:?} != oracle {c:?} f1={f1} on {obs:?}"));
    }

    let a = semcache::evalkit::best_threshold_accuracy(&s).map_err(|e| e.to_string())?;
    let (c, acc) = best_accuracy(obs);
    if !(-1.0..=1.0).contains(&a.threshold) {
        return Err(format!("accuracy threshold {} out of range", a.threshold));
    }
    if confusion(obs, a.threshold) != c || a.accuracy != acc {
        return Err(format!("accuracy calibration {a:?} != oracle {c:?} acc={acc} on {obs:?}"));
    }
    Ok(())
}

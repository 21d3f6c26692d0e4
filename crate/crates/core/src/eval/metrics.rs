//! Ranking and threshold metrics: ROC, AUC, balanced accuracy, F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability threshold for hard predictions.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn new(preds: &[u8], labels: &[u8]) -> Result<Self, MetricError> {
        if preds.len() != labels.len() {
            return Err(MetricError::LengthMismatch(preds.len(), labels.len()));
        }
        let mut c = Self::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((pos, neg))
}

fn sorted_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// ROC points from sweeping the threshold down through every distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    let order = sorted_desc(scores);
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: s });
    }
    Ok(pts)
}

/// Mann-Whitney concordance with ties counted one half, which equals the trapezoidal ROC area.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the concordance count, kept integral
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut q) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        twice += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

pub fn threshold_probs(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= THRESHOLD)).collect()
}

/// `(TPR + TNR) / 2`; needs both classes among the labels.
pub fn balanced_accuracy(preds: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    let c = Confusion::new(preds, labels)?;
    let (p, n) = (c.tp + c.fn_, c.tn + c.fp);
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok(0.5 * (c.tp as f64 / p as f64 + c.tn as f64 / n as f64))
}

/// `2·TP / (2·TP + FP + FN)`, 0 when the denominator vanishes.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    let c = Confusion::new(preds, labels)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 0.0 } else { (2 * c.tp) as f64 / den as f64 })
}

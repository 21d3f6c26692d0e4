//! Class-weighted cross-entropy, hinge and multitask losses.

use super::ModelError;

/// Probability clamp used by every cross-entropy.
pub const EPS: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `w_c = n / (2 n_c)`, so each class carries the same total weight.
pub fn class_weights(labels: &[u8]) -> Result<(f64, f64), ModelError> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(ModelError::DegenerateLabels(format!("{n0} negatives and {n1} positives")));
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)))
}

fn check_len(a: usize, b: usize) -> Result<(), ModelError> {
    if a != b {
        return Err(ModelError::LengthMismatch { expected: a, actual: b });
    }
    Ok(())
}

#[inline]
fn weight(weights: (f64, f64), y: u8) -> f64 {
    if y == 1 {
        weights.1
    } else {
        weights.0
    }
}

/// Mean of `−w_y · log p(y)` with `p` clamped to `[ε, 1−ε]`.
pub fn weighted_ce(probs: &[f64], labels: &[u8], weights: (f64, f64)) -> Result<f64, ModelError> {
    check_len(probs.len(), labels.len())?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            -weight(weights, y) * if y == 1 { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    Ok(total / probs.len().max(1) as f64)
}

/// Gradient of [`weighted_ce`] with respect to each probability.
pub fn weighted_ce_grad(probs: &[f64], labels: &[u8], weights: (f64, f64)) -> Result<Vec<f64>, ModelError> {
    check_len(probs.len(), labels.len())?;
    let n = probs.len().max(1) as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p <= EPS || p >= 1.0 - EPS {
                return 0.0;
            }
            let w = weight(weights, y);
            if y == 1 {
                -w / (n * p)
            } else {
                w / (n * (1.0 - p))
            }
        })
        .collect())
}

/// `weighted_ce + λ · mean((age_pred − age)²)`; ages are expected standardized.
pub fn mtl_loss(
    probs: &[f64],
    age_pred: &[f64],
    labels: &[u8],
    ages: &[f64],
    weights: (f64, f64),
    lambda_reg: f64,
) -> Result<f64, ModelError> {
    check_len(probs.len(), age_pred.len())?;
    check_len(probs.len(), ages.len())?;
    if !(lambda_reg >= 0.0) {
        return Err(ModelError::Config(format!("lambda_reg must be >= 0, got {lambda_reg}")));
    }
    let ce = weighted_ce(probs, labels, weights)?;
    if lambda_reg == 0.0 {
        return Ok(ce);
    }
    let mse = age_pred.iter().zip(ages).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ages.len().max(1) as f64;
    Ok(ce + lambda_reg * mse)
}

/// Per-sample weighted CE on a logit, and its derivative in the logit.
#[inline]
pub(crate) fn ce_on_logit(z: f64, y: u8, w: (f64, f64)) -> (f64, f64) {
    let p = sigmoid(z);
    let pc = p.clamp(EPS, 1.0 - EPS);
    let wy = weight(w, y);
    let loss = -wy * if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
    let grad = if p <= EPS || p >= 1.0 - EPS { 0.0 } else { wy * (p - y as f64) };
    (loss, grad)
}

/// Per-sample class-weighted hinge on a margin, and its derivative.
#[inline]
pub(crate) fn hinge_on_margin(s: f64, y: u8, w: (f64, f64)) -> (f64, f64) {
    let t = if y == 1 { 1.0 } else { -1.0 };
    let wy = weight(w, y);
    if t * s < 1.0 {
        (wy * (1.0 - t * s), -wy * t)
    } else {
        (0.0, 0.0)
    }
}

//! Shapley attributions with an interventional value function, and per-modality shares.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::MeanSd;
use crate::model::Modality;

/// Largest feature count accepted by [`shapley_exact`].
pub const EXACT_LIMIT: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("{d} features exceed the exact-enumeration limit of {limit}; use sampled mode")]
    TooManyFeatures { d: usize, limit: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("n_permutations must be >= 1")]
    NoPermutations,
    #[error("all attributions are zero; modality share is undefined")]
    ZeroAttribution,
    #[error("invalid modality partition: {0}")]
    Partition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled { n_permutations: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub phi: Vec<f64>,
    /// Mean model output over the background rows.
    pub baseline: f64,
    pub prediction: f64,
    pub method: Method,
    /// Efficiency residual spread over the features in proportion to `|φ|` (sampled mode).
    pub residual_redistributed: f64,
}

impl ShapleyReport {
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.prediction - self.baseline)
    }
}

fn check_inputs(x: &[f64], background: &[Vec<f64>]) -> Result<(), ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
        return Err(ExplainError::DimensionMismatch { expected: x.len(), actual: b.len() });
    }
    Ok(())
}

fn mean_output<F: Fn(&[f64]) -> f64>(model: &F, rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| model(r)).sum::<f64>() / rows.len() as f64
}

/// `v(S)`: mean over background rows of the model with the features in `S` taken from `x`.
fn coalition_value<F: Fn(&[f64]) -> f64>(model: &F, x: &[f64], background: &[Vec<f64>], s: u32) -> f64 {
    let mut z = vec![0.0; x.len()];
    let mut total = 0.0;
    for b in background {
        for j in 0..x.len() {
            z[j] = if s >> j & 1 == 1 { x[j] } else { b[j] };
        }
        total += model(&z);
    }
    total / background.len() as f64
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn shapley_exact<F>(model: &F, x: &[f64], background: &[Vec<f64>], limit: usize) -> Result<ShapleyReport, ExplainError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_inputs(x, background)?;
    let d = x.len();
    if d > limit.min(EXACT_LIMIT) {
        return Err(ExplainError::TooManyFeatures { d, limit: limit.min(EXACT_LIMIT) });
    }
    let values: Vec<f64> = (0..1u32 << d).into_par_iter().map(|s| coalition_value(model, x, background, s)).collect();
    // weight of a coalition of size k not containing i: k!(d-k-1)!/d! = 1 / (d · C(d-1, k))
    let mut weight = vec![0.0; d.max(1)];
    let mut binom = 1.0;
    for (k, w) in weight.iter_mut().enumerate().take(d) {
        *w = 1.0 / (d as f64 * binom);
        binom = binom * (d - 1 - k) as f64 / (k + 1) as f64;
    }
    let phi = (0..d)
        .map(|i| {
            let bit = 1u32 << i;
            (0..1u32 << d)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]))
                .sum()
        })
        .collect();
    Ok(ShapleyReport {
        phi,
        baseline: values[0],
        prediction: values[(1usize << d) - 1],
        method: Method::Exact,
        residual_redistributed: 0.0,
    })
}

/// Permutation-sampling estimator. Each permutation switches features from background
/// to `x` one at a time in every background row and credits the change in mean output.
pub fn shapley_sampled<F, R>(
    model: &F,
    x: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    rng: &mut R,
) -> Result<ShapleyReport, ExplainError>
where
    F: Fn(&[f64]) -> f64,
    R: Rng,
{
    check_inputs(x, background)?;
    if n_permutations == 0 {
        return Err(ExplainError::NoPermutations);
    }
    let d = x.len();
    let baseline = mean_output(model, background);
    let prediction = model(x);
    let mut phi = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut rows = background.to_vec();
    for _ in 0..n_permutations {
        order.shuffle(rng);
        rows.iter_mut().zip(background).for_each(|(r, b)| r.copy_from_slice(b));
        let mut prev = baseline;
        for &j in &order {
            rows.iter_mut().for_each(|r| r[j] = x[j]);
            let cur = mean_output(model, &rows);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    phi.iter_mut().for_each(|p| *p /= n_permutations as f64);
    let residual = (prediction - baseline) - phi.iter().sum::<f64>();
    let mass: f64 = phi.iter().map(|p| p.abs()).sum();
    if mass > 0.0 {
        phi.iter_mut().for_each(|p| *p += residual * p.abs() / mass);
    }
    Ok(ShapleyReport { phi, baseline, prediction, method: Method::Sampled { n_permutations }, residual_redistributed: residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// `Σ_{i∈m} |φ_i| / Σ_i |φ_i|`.
    #[default]
    Absolute,
    /// `Σ_{i∈m} φ_i / Σ_i φ_i`; may leave [0, 1].
    Signed,
}

/// `(clinical_share, imaging_share)` of one attribution vector.
pub fn modality_share(phi: &[f64], partition: &[Modality], mode: ShareMode) -> Result<(f64, f64), ExplainError> {
    if phi.len() != partition.len() {
        return Err(ExplainError::Partition(format!("{} modalities for {} features", partition.len(), phi.len())));
    }
    let f = |v: f64| if mode == ShareMode::Absolute { v.abs() } else { v };
    let total: f64 = phi.iter().map(|&v| f(v)).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(ExplainError::ZeroAttribution);
    }
    let clinical: f64 = phi.iter().zip(partition).filter(|(_, m)| **m == Modality::Clinical).map(|(&v, _)| f(v)).sum();
    let clinical = clinical / total;
    Ok((clinical, 1.0 - clinical))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityShares {
    pub mode: ShareMode,
    pub clinical: MeanSd,
    pub imaging: MeanSd,
    pub per_row: Vec<(f64, f64)>,
}

/// Per-row shares with their mean and sample SD over the evaluation set.
pub fn aggregate_shares(reports: &[ShapleyReport], partition: &[Modality], mode: ShareMode) -> Result<ModalityShares, ExplainError> {
    let per_row: Vec<(f64, f64)> = reports.iter().map(|r| modality_share(&r.phi, partition, mode)).collect::<Result<_, _>>()?;
    let c: Vec<f64> = per_row.iter().map(|s| s.0).collect();
    let i: Vec<f64> = per_row.iter().map(|s| s.1).collect();
    Ok(ModalityShares { mode, clinical: MeanSd::of(&c), imaging: MeanSd::of(&i), per_row })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    Sampled { n_permutations: usize, seed: u64 },
}

/// Attributions for every row, in row order; row `i` of sampled mode uses its own derived stream.
pub fn explain_rows<F>(model: &F, rows: &[Vec<f64>], background: &[Vec<f64>], estimator: Estimator) -> Result<Vec<ShapleyReport>, ExplainError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    match estimator {
        Estimator::Exact => rows.iter().map(|x| shapley_exact(model, x, background, EXACT_LIMIT)).collect(),
        Estimator::Sampled { n_permutations, seed } => rows
            .par_iter()
            .enumerate()
            .map(|(i, x)| shapley_sampled(model, x, background, n_permutations, &mut crate::seed::rng_for(seed, &[i as u64])))
            .collect(),
    }
}

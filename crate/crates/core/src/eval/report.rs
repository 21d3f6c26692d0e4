//! metrics.json, roc_fold{i}.csv and chosen_configs.json.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aggregate, CVPlan, CVResult, EvalError, FoldRecord};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_dropped: usize,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub chosen_trial: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub tuner: String,
    pub threshold: f64,
    pub n_samples: usize,
    pub plan: CVPlan,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn new(r: &CVResult) -> Self {
        let fold = |f: &FoldRecord| FoldMetrics {
            fold: f.fold,
            n_train: f.train.len(),
            n_test: f.test.len(),
            n_dropped: f.dropped.len(),
            auc: f.auc,
            balanced_accuracy: f.balanced_accuracy,
            f1: f.f1,
            chosen_trial: f.chosen_trial,
            best_epoch: f.best_epoch,
            epochs_run: f.epochs_run,
        };
        Self {
            model: r.kind.to_string(),
            tuner: format!("seeded random search, {} trials shared across outer folds", r.plan.trials),
            threshold: super::metrics::THRESHOLD,
            n_samples: r.n_samples,
            plan: r.plan.clone(),
            folds: r.folds.iter().map(fold).collect(),
            aggregate: r.aggregate.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenConfig {
    pub fold: usize,
    pub trial: usize,
    pub inner_mean_balanced_accuracy: Option<f64>,
    pub config: ModelConfig,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| EvalError::Write { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, s + "\n").map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

pub fn write_metrics_json(r: &CVResult, path: &Path) -> Result<(), EvalError> {
    write_json(&MetricsReport::new(r), path)
}

pub fn write_chosen_configs(r: &CVResult, path: &Path) -> Result<(), EvalError> {
    let v: Vec<ChosenConfig> = r
        .folds
        .iter()
        .map(|f| ChosenConfig {
            fold: f.fold,
            trial: f.chosen_trial,
            inner_mean_balanced_accuracy: f.inner_scores.get(f.chosen_trial).copied().flatten(),
            config: f.chosen.clone(),
        })
        .collect();
    write_json(&v, path)
}

/// `fpr,tpr,threshold` rows; the opening point has threshold `inf`.
pub fn write_roc_csv(fold: &FoldRecord, path: &Path) -> Result<(), EvalError> {
    let err = |e: csv::Error| EvalError::Write { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["fpr", "tpr", "threshold"]).map_err(err)?;
    for p in &fold.roc {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

//! Stratified nested cross-validation with random hyperparameter search,
//! the metric suite and report writers.

pub mod dataset;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod search;

use std::collections::HashSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, Sources};
pub use folds::{stratified_holdout, stratified_kfold};
pub use metrics::{auc, balanced_accuracy, f1, roc_curve, threshold_probs, Confusion, MetricError, RocPoint};
pub use report::{write_chosen_configs, write_metrics_json, write_roc_csv, MetricsReport};
pub use search::{random_search, SearchSpace};

use crate::io::IngestError;
use crate::model::{fit, ModelConfig, ModelError, ModelKind, Split, Standardizer, TrainedModel};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k={k} folds need at least k members of each class; the minority class has {minority}")]
    TooManyFolds { k: usize, minority: usize },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("invalid dataset: {0}")]
    Data(String),
    #[error("fold leakage: {0}")]
    Leakage(String),
    #[error("outer fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Write { path: PathBuf, message: String },
}

const TAG_OUTER: u64 = 1;
const TAG_INNER: u64 = 2;
const TAG_RETRAIN: u64 = 3;
const TAG_SEARCH: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CVPlan {
    pub outer_k: usize,
    pub inner_k: usize,
    pub trials: usize,
    pub seed: u64,
    /// Drop rows with missing clinical fields inside each fold.
    pub strict: bool,
    /// Share of outer-train held out for early stopping in the final refit.
    pub retrain_val_fraction: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub space: SearchSpace,
}

impl Default for CVPlan {
    fn default() -> Self {
        Self {
            outer_k: 5,
            inner_k: 3,
            trials: 50,
            seed: 0,
            strict: false,
            retrain_val_fraction: 0.2,
            max_epochs: 400,
            patience: 50,
            space: SearchSpace::default(),
        }
    }
}

impl CVPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.outer_k < 2 {
            return Err(EvalError::Plan(format!("outer_k must be >= 2, got {}", self.outer_k)));
        }
        if self.inner_k < 2 {
            return Err(EvalError::Plan(format!("inner_k must be >= 2, got {}", self.inner_k)));
        }
        if self.trials < 1 {
            return Err(EvalError::Plan("trials must be >= 1".into()));
        }
        if !(self.retrain_val_fraction > 0.0 && self.retrain_val_fraction < 1.0) {
            return Err(EvalError::Plan("retrain_val_fraction must lie in (0, 1)".into()));
        }
        if self.max_epochs < 1 || self.patience < 1 {
            return Err(EvalError::Plan("max_epochs and patience must be >= 1".into()));
        }
        self.space.validate()
    }

    /// The candidate configurations, shared by every outer fold.
    pub fn candidates(&self, kind: ModelKind) -> Result<Vec<ModelConfig>, EvalError> {
        let base = ModelConfig { kind, max_epochs: self.max_epochs, patience: self.patience, ..Default::default() };
        random_search(&self.space, &base, self.trials, &mut rng_for(self.seed, &[TAG_SEARCH]))
    }

    pub fn outer_folds(&self, labels: &[u8]) -> Result<Vec<Vec<usize>>, EvalError> {
        stratified_kfold(labels, self.outer_k, derive_seed(self.seed, &[TAG_OUTER]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    /// Rows of this outer fold removed by strict mode.
    pub dropped: Vec<usize>,
    pub inner_folds: Vec<Vec<usize>>,
    pub retrain_train: Vec<usize>,
    pub retrain_val: Vec<usize>,
    /// Mean inner validation balanced accuracy per candidate; `None` when a fit diverged.
    pub inner_scores: Vec<Option<f64>>,
    pub chosen_trial: usize,
    pub chosen: ModelConfig,
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test_probs: Vec<f64>,
    pub roc: Vec<RocPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auc: MeanSd,
    pub balanced_accuracy: MeanSd,
    pub f1: MeanSd,
    pub best_epoch: MeanSd,
    pub epochs_run: MeanSd,
}

impl Aggregate {
    pub fn of(folds: &[FoldRecord]) -> Self {
        let m = |f: fn(&FoldRecord) -> f64| MeanSd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            auc: m(|r| r.auc),
            balanced_accuracy: m(|r| r.balanced_accuracy),
            f1: m(|r| r.f1),
            best_epoch: m(|r| r.best_epoch as f64),
            epochs_run: m(|r| r.epochs_run as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CVResult {
    pub kind: ModelKind,
    pub plan: CVPlan,
    pub n_samples: usize,
    pub folds: Vec<FoldRecord>,
    pub aggregate: Aggregate,
    /// Final refit per outer fold.
    pub models: Vec<TrainedModel>,
}

fn split<'a>(ds: &'a Dataset, idx: &[usize]) -> Split<'a> {
    Split {
        rows: ds.rows(idx),
        labels: ds.labels_of(idx),
        ages: ds.ages.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
    }
}

fn map_back(local: &[Vec<usize>], global: &[usize]) -> Vec<Vec<usize>> {
    local.iter().map(|f| f.iter().map(|&i| global[i]).collect()).collect()
}

fn minus(all: &[usize], remove: &[usize]) -> Vec<usize> {
    let r: HashSet<usize> = remove.iter().copied().collect();
    all.iter().copied().filter(|i| !r.contains(i)).collect()
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let s: HashSet<usize> = a.iter().copied().collect();
    b.iter().all(|i| !s.contains(i))
}

/// Scores a configuration on one inner split: the best validation balanced accuracy
/// reached during early stopping. Divergence scores `None`.
fn inner_score(ds: &Dataset, cfg: &ModelConfig, train: &[usize], val: &[usize], seed: u64) -> Result<Option<f64>, ModelError> {
    let cfg = ModelConfig { seed, ..cfg.clone() };
    match fit(&cfg, &ds.schema, &split(ds, train), &split(ds, val)) {
        Ok(m) => Ok(Some(m.history[m.best_epoch - 1].val_balanced_accuracy)),
        Err(ModelError::Diverged { epoch }) => {
            log::debug!("candidate diverged at epoch {epoch}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn run_fold(
    ds: &Dataset,
    plan: &CVPlan,
    candidates: &[ModelConfig],
    outer: &[Vec<usize>],
    i: usize,
    search: bool,
) -> Result<(FoldRecord, TrainedModel), EvalError> {
    let keep = |idx: &usize| !(plan.strict && ds.excluded[*idx]);
    let test: Vec<usize> = outer[i].iter().copied().filter(keep).collect();
    let dropped: Vec<usize> = outer[i].iter().copied().filter(|x| !keep(x)).collect();
    let mut train: Vec<usize> = outer.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.iter().copied()).filter(keep).collect();
    train.sort_unstable();
    if !disjoint(&train, &test) {
        return Err(EvalError::Leakage(format!("fold {i}: train and test overlap")));
    }
    let fold_err = |source| EvalError::Fold { fold: i, source };

    let (inner_folds, inner_scores, chosen_trial) = if search {
        let local = stratified_kfold(&ds.labels_of(&train), plan.inner_k, derive_seed(plan.seed, &[TAG_INNER, i as u64]))?;
        let inner = map_back(&local, &train);
        if let Some(f) = inner.iter().position(|f| !disjoint(f, &test)) {
            return Err(EvalError::Leakage(format!("fold {i}: inner fold {f} contains outer-test rows")));
        }
        let scores: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|cfg| {
                let mut sum = 0.0;
                for (j, val) in inner.iter().enumerate() {
                    let tr = minus(&train, val);
                    match inner_score(ds, cfg, &tr, val, derive_seed(cfg.seed, &[i as u64, 1 + j as u64]))? {
                        Some(s) => sum += s,
                        None => return Ok(None),
                    }
                }
                Ok(Some(sum / inner.len() as f64))
            })
            .collect::<Result<_, ModelError>>()
            .map_err(fold_err)?;
        let mut best: Option<(usize, f64)> = None;
        for (t, s) in scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((t, s));
                }
            }
        }
        let t = best.map_or(0, |b| b.0);
        (inner, scores, t)
    } else {
        (Vec::new(), vec![None; candidates.len()], 0)
    };

    let chosen = candidates[chosen_trial].clone();
    let local = stratified_holdout(&ds.labels_of(&train), plan.retrain_val_fraction, derive_seed(plan.seed, &[TAG_RETRAIN, i as u64]))?;
    let (rt, rv) = (map_back(&[local.0], &train).remove(0), map_back(&[local.1], &train).remove(0));
    if !disjoint(&rt, &test) || !disjoint(&rv, &test) {
        return Err(EvalError::Leakage(format!("fold {i}: refit split contains outer-test rows")));
    }
    let cfg = ModelConfig { seed: derive_seed(chosen.seed, &[i as u64, 0]), ..chosen.clone() };
    let model = fit(&cfg, &ds.schema, &split(ds, &rt), &split(ds, &rv)).map_err(fold_err)?;

    let probs = model.predict_proba(&ds.rows(&test)).map_err(fold_err)?;
    let y = ds.labels_of(&test);
    let preds = threshold_probs(&probs);
    let record = FoldRecord {
        fold: i,
        auc: auc(&probs, &y)?,
        balanced_accuracy: balanced_accuracy(&preds, &y)?,
        f1: f1(&preds, &y)?,
        roc: roc_curve(&probs, &y)?,
        best_epoch: model.best_epoch,
        epochs_run: model.epochs_run,
        test_probs: probs,
        test,
        train,
        dropped,
        inner_folds,
        retrain_train: rt,
        retrain_val: rv,
        inner_scores,
        chosen_trial,
        chosen,
    };
    log::info!(
        "{} fold {i}: trial {} AUC {:.3} BA {:.3} F1 {:.3}, best epoch {} of {}",
        model.kind,
        record.chosen_trial,
        record.auc,
        record.balanced_accuracy,
        record.f1,
        record.best_epoch,
        record.epochs_run
    );
    Ok((record, model))
}

fn run_cv(ds: &Dataset, kind: ModelKind, plan: &CVPlan, candidates: &[ModelConfig], search: bool) -> Result<CVResult, EvalError> {
    plan.validate()?;
    ds.validate()?;
    ds.check_for(kind)?;
    let outer = plan.outer_folds(&ds.labels)?;
    let out: Vec<(FoldRecord, TrainedModel)> =
        (0..plan.outer_k).into_par_iter().map(|i| run_fold(ds, plan, candidates, &outer, i, search)).collect::<Result<_, _>>()?;
    let (folds, models): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let result = CVResult { kind, plan: plan.clone(), n_samples: ds.len(), aggregate: Aggregate::of(&folds), folds, models };
    audit_leakage(&result, ds)?;
    Ok(result)
}

/// Nested CV: each outer fold picks the candidate with the best mean inner validation
/// balanced accuracy (first on ties), refits it on outer-train and scores outer-test once.
pub fn nested_cv(ds: &Dataset, kind: ModelKind, plan: &CVPlan) -> Result<CVResult, EvalError> {
    plan.validate()?;
    let candidates = plan.candidates(kind)?;
    run_cv(ds, kind, plan, &candidates, true)
}

/// Outer CV of one fixed configuration, with the same folds and refit protocol.
pub fn plain_cv(ds: &Dataset, config: &ModelConfig, plan: &CVPlan) -> Result<CVResult, EvalError> {
    config.validate()?;
    run_cv(ds, config.kind, plan, std::slice::from_ref(config), false)
}

/// Re-checks every fold boundary of a finished run: outer tests partition the kept rows,
/// no test row reaches an inner fold or the refit, and each refit standardizer equals one
/// recomputed from its training rows alone.
pub fn audit_leakage(result: &CVResult, ds: &Dataset) -> Result<(), EvalError> {
    let leak = |m: String| Err(EvalError::Leakage(m));
    let mut seen = vec![false; ds.len()];
    for f in &result.folds {
        for &i in f.test.iter().chain(&f.dropped) {
            if i >= ds.len() || seen[i] {
                return leak(format!("row {i} appears in more than one outer test fold"));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return leak(format!("row {i} is in no outer test fold"));
    }
    for (f, model) in result.folds.iter().zip(&result.models) {
        let test: HashSet<usize> = f.test.iter().chain(&f.dropped).copied().collect();
        let train: HashSet<usize> = f.train.iter().copied().collect();
        for (name, idx) in [("train", &f.train), ("refit train", &f.retrain_train), ("refit validation", &f.retrain_val)] {
            if idx.iter().any(|i| test.contains(i)) {
                return leak(format!("fold {}: {name} rows intersect the outer test set", f.fold));
            }
        }
        for (j, inner) in f.inner_folds.iter().enumerate() {
            if inner.iter().any(|i| test.contains(i) || !train.contains(i)) {
                return leak(format!("fold {}: inner fold {j} leaves outer-train", f.fold));
            }
        }
        if f.retrain_train.iter().chain(&f.retrain_val).any(|i| !train.contains(i)) {
            return leak(format!("fold {}: refit rows leave outer-train", f.fold));
        }
        if Standardizer::fit(&ds.rows(&f.retrain_train)) != model.standardizer {
            return leak(format!("fold {}: standardization was not fitted on refit-train rows only", f.fold));
        }
    }
    Ok(())
}

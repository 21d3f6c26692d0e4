//! Tabular classifiers: logistic regression, linear SVM, MLP, two-modality fusion
//! and a multitask network with an auxiliary age head.

pub mod loss;
pub mod net;
pub mod standardize;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{class_weights, mtl_loss, sigmoid, weighted_ce, weighted_ce_grad, EPS};
pub use net::{Architecture, Dense, Network, Objective};
pub use standardize::{Scaler, Standardizer};

use crate::eval::metrics::balanced_accuracy;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("multitask model needs age targets for train and validation rows")]
    MissingAges,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    #[serde(alias = "svm")]
    LinearSvm,
    Mlp,
    Fusion,
    Mtl,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::Mlp => "mlp",
            ModelKind::Fusion => "fusion",
            ModelKind::Mtl => "mtl",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" => Ok(ModelKind::Logreg),
            "svm" | "linear_svm" => Ok(ModelKind::LinearSvm),
            "mlp" => Ok(ModelKind::Mlp),
            "fusion" => Ok(ModelKind::Fusion),
            "mtl" => Ok(ModelKind::Mtl),
            other => Err(ModelError::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Imaging,
    Clinical,
}

/// Column names with their modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub modalities: Vec<Modality>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, modalities: Vec<Modality>) -> Result<Self, ModelError> {
        if names.len() != modalities.len() {
            return Err(ModelError::LengthMismatch { expected: names.len(), actual: modalities.len() });
        }
        Ok(Self { names, modalities })
    }

    pub fn uniform(names: Vec<String>, modality: Modality) -> Self {
        let modalities = vec![modality; names.len()];
        Self { names, modalities }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn columns_of(&self, m: Modality) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.modalities[i] == m).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub d_emb: usize,
    pub lambda_reg: f64,
    pub l2: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logreg,
            hidden: 16,
            d_emb: 16,
            lambda_reg: 0.1,
            l2: 1e-4,
            lr: 1e-2,
            lr_decay: 0.99,
            batch_size: 32,
            max_epochs: 400,
            patience: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be >= 1".into());
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be >= 0, got {}", self.l2));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size < 1 || self.hidden < 1 || self.d_emb < 1 {
            return bad("batch_size, hidden and d_emb must be >= 1".into());
        }
        Ok(())
    }

    pub fn architecture(&self, schema: &FeatureSchema) -> Result<Architecture, ModelError> {
        let d = schema.len();
        if d == 0 {
            return Err(ModelError::Config("no feature columns".into()));
        }
        Ok(match self.kind {
            ModelKind::Logreg | ModelKind::LinearSvm => Architecture::Linear { inputs: d },
            ModelKind::Mlp => Architecture::Mlp { inputs: d, hidden: self.hidden },
            ModelKind::Mtl => Architecture::Multitask { inputs: d, hidden: self.hidden },
            ModelKind::Fusion => Architecture::Fusion {
                imaging: schema.columns_of(Modality::Imaging),
                clinical: schema.columns_of(Modality::Clinical),
                hidden: self.hidden,
                imaging_emb: self.d_emb,
                clinical_emb: self.d_emb,
            },
        })
    }
}

/// Rows (borrowed), binary labels and, for the multitask model, raw ages.
#[derive(Clone, Debug, Default)]
pub struct Split<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<u8>,
    pub ages: Option<Vec<f64>>,
}

impl<'a> Split<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self, d: usize) -> Result<(), ModelError> {
        if self.labels.len() != self.rows.len() {
            return Err(ModelError::LengthMismatch { expected: self.rows.len(), actual: self.labels.len() });
        }
        if let Some(a) = &self.ages {
            if a.len() != self.rows.len() {
                return Err(ModelError::LengthMismatch { expected: self.rows.len(), actual: a.len() });
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != d {
                return Err(ModelError::DimensionMismatch { expected: d, actual: r.len() });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteInput { row: i, col: j });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: f64,
}

/// Which scalar a fitted model exposes to downstream consumers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    #[default]
    Probability,
    Margin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub architecture: Architecture,
    pub feature_names: Vec<String>,
    pub modalities: Vec<Modality>,
    pub standardizer: Standardizer,
    pub age_scaler: Option<Scaler>,
    pub params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn both_classes(labels: &[u8], what: &str) -> Result<(), ModelError> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(ModelError::DegenerateLabels(format!("{what} split has a single class")));
    }
    Ok(())
}

/// Trains with Adam on mini-batches, early-stopping on validation balanced accuracy.
/// Returns the parameters of the best epoch (earliest on ties).
pub fn fit(config: &ModelConfig, schema: &FeatureSchema, train: &Split, val: &Split) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    let d = schema.len();
    train.check(d)?;
    val.check(d)?;
    let weights = class_weights(&train.labels)?;
    both_classes(&val.labels, "validation")?;
    let net = Network::new(config.architecture(schema)?)?;

    let standardizer = Standardizer::fit(&train.rows);
    let xt = standardizer.transform(&train.rows);
    let xv = standardizer.transform(&val.rows);
    let xt: Vec<&[f64]> = xt.iter().map(|r| r.as_slice()).collect();
    let xv: Vec<&[f64]> = xv.iter().map(|r| r.as_slice()).collect();

    let (age_scaler, at, av) = if config.kind == ModelKind::Mtl {
        let (Some(ta), Some(va)) = (&train.ages, &val.ages) else {
            return Err(ModelError::MissingAges);
        };
        let s = Scaler::fit(ta);
        let f = |v: &Vec<f64>| v.iter().map(|&a| s.forward(a)).collect::<Vec<f64>>();
        (Some(s), Some(f(ta)), Some(f(va)))
    } else {
        (None, None, None)
    };

    let objective = Objective {
        hinge: config.kind == ModelKind::LinearSvm,
        weights,
        lambda_reg: if config.kind == ModelKind::Mtl { config.lambda_reg } else { 0.0 },
        l2: config.l2,
    };
    let val_objective = Objective { l2: 0.0, ..objective };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = net.init_params(&mut rng);
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..xt.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    let mut batch_ages = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let lr = config.lr * config.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            batch_ages.clear();
            for &i in chunk {
                batch_rows.push(xt[i]);
                batch_labels.push(train.labels[i]);
                if let Some(a) = &at {
                    batch_ages.push(a[i]);
                }
            }
            let ages = at.as_ref().map(|_| batch_ages.as_slice());
            let l = net.loss_grad(&params, &batch_rows, &batch_labels, ages, &objective, &mut grad);
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged { epoch });
            }
            adam.step(&mut params, &grad, lr);
            loss_sum += l * chunk.len() as f64;
        }
        let val_loss = net.loss(&params, &xv, &val.labels, av.as_deref(), &val_objective);
        if !val_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Diverged { epoch });
        }
        let preds: Vec<u8> = xv.iter().map(|x| u8::from(net.forward_unchecked(&params, x).0 >= 0.0)).collect();
        let ba = balanced_accuracy(&preds, &val.labels).map_err(|e| ModelError::DegenerateLabels(e.to_string()))?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / xt.len() as f64,
            val_loss,
            val_balanced_accuracy: ba,
        });
        if ba > best.0 {
            best = (ba, epoch, params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    log::debug!("{} fit: best epoch {} (BA {:.3}) of {}", config.kind, best.1, best.0, history.len());
    Ok(TrainedModel {
        kind: config.kind,
        config: config.clone(),
        architecture: net.architecture().clone(),
        feature_names: schema.names.clone(),
        modalities: schema.modalities.clone(),
        standardizer,
        age_scaler,
        params: best.2,
        epochs_run: history.len(),
        history,
        best_epoch: best.1,
    })
}

impl TrainedModel {
    pub fn network(&self) -> Result<Network, ModelError> {
        let net = Network::new(self.architecture.clone())?;
        if net.n_params() != self.params.len() {
            return Err(ModelError::LengthMismatch { expected: net.n_params(), actual: self.params.len() });
        }
        if self.standardizer.dim() != net.inputs() {
            return Err(ModelError::DimensionMismatch { expected: net.inputs(), actual: self.standardizer.dim() });
        }
        Ok(net)
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.dim()
    }

    fn outputs(&self, rows: &[&[f64]]) -> Result<Vec<(f64, Option<f64>)>, ModelError> {
        let net = self.network()?;
        rows.iter()
            .map(|r| {
                if r.len() != net.inputs() {
                    return Err(ModelError::DimensionMismatch { expected: net.inputs(), actual: r.len() });
                }
                Ok(net.forward_unchecked(&self.params, &self.standardizer.transform_row(r)))
            })
            .collect()
    }

    /// Raw score: logit for the cross-entropy models, margin for the SVM.
    pub fn decision_function(&self, rows: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
        Ok(self.outputs(rows)?.into_iter().map(|o| o.0).collect())
    }

    /// `σ(score)`; for the SVM this is a rank-preserving link, not a calibrated probability.
    pub fn predict_proba(&self, rows: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
        Ok(self.decision_function(rows)?.into_iter().map(sigmoid).collect())
    }

    /// Age predictions in years, multitask models only.
    pub fn predict_age(&self, rows: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
        let s = self.age_scaler.ok_or_else(|| ModelError::Config("model has no age head".into()))?;
        Ok(self.outputs(rows)?.into_iter().map(|o| s.inverse(o.1.unwrap_or(0.0))).collect())
    }

    /// Scalar model function over raw feature rows.
    pub fn scorer(&self, scale: OutputScale) -> Result<impl Fn(&[f64]) -> f64 + Sync + '_, ModelError> {
        let net = self.network()?;
        Ok(move |x: &[f64]| {
            let s = net.forward_unchecked(&self.params, &self.standardizer.transform_row(x)).0;
            match scale {
                OutputScale::Probability => sigmoid(s),
                OutputScale::Margin => s,
            }
        })
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(s)?;
        m.network()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&s)
    }
}

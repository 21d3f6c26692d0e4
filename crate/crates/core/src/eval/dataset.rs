//! Model-ready cohort: feature rows, labels, optional age target and strict-mode exclusions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::io::clinical::ENCODED_CLINICAL_COLUMNS;
use crate::io::{encode_clinical, impute_clinical, ClinicalRecord, FeatureTable, ImputationSummary, OutcomeLabel};
use crate::model::{FeatureSchema, Modality, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub patient_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// Raw ages, used as the auxiliary target of the multitask model.
    pub ages: Option<Vec<f64>>,
    /// Rows with any missing clinical field; dropped inside folds in strict mode.
    pub excluded: Vec<bool>,
}

/// Inputs for [`Dataset::assemble`]. Row order follows `labels`.
#[derive(Clone, Copy, Debug)]
pub struct Sources<'a> {
    pub imaging: Option<&'a FeatureTable>,
    pub clinical: Option<&'a [ClinicalRecord]>,
    pub labels: &'a [OutcomeLabel],
    /// Append the encoded clinical columns to the features.
    pub clinical_columns: bool,
    /// Attach clinical age as the auxiliary target.
    pub age_target: bool,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, patient_ids: Vec<String>, x: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, EvalError> {
        let n = x.len();
        let ds = Self { schema, patient_ids, x, labels, ages: None, excluded: vec![false; n] };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> Vec<&[f64]> {
        idx.iter().map(|&i| self.x[i].as_slice()).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let n = self.x.len();
        let bad = |m: String| Err(EvalError::Data(m));
        if self.labels.len() != n || self.patient_ids.len() != n || self.excluded.len() != n {
            return bad(format!(
                "inconsistent lengths: {n} rows, {} labels, {} ids, {} exclusion flags",
                self.labels.len(),
                self.patient_ids.len(),
                self.excluded.len()
            ));
        }
        if let Some(a) = &self.ages {
            if a.len() != n {
                return bad(format!("{} ages for {n} rows", a.len()));
            }
        }
        if self.schema.names.len() != self.schema.modalities.len() {
            return bad("schema names and modalities differ in length".into());
        }
        for (i, r) in self.x.iter().enumerate() {
            if r.len() != self.schema.len() {
                return bad(format!("row {i} has {} values, schema has {}", r.len(), self.schema.len()));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return bad(format!("row {i} column {} is not finite", self.schema.names[j]));
            }
        }
        if let Some(y) = self.labels.iter().find(|&&y| y > 1) {
            return bad(format!("label {y} is not binary"));
        }
        Ok(())
    }

    /// Joins imaging features, clinical records and labels by patient id.
    /// Clinical gaps are imputed over the whole cohort; rows that had gaps are flagged.
    pub fn assemble(src: Sources) -> Result<(Self, Option<ImputationSummary>), EvalError> {
        let imaging_index: Option<HashMap<&str, usize>> =
            src.imaging.map(|t| t.patient_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect());
        let (clinical, summary, missing) = match src.clinical {
            Some(records) => {
                let (filled, summary) = impute_clinical(records)?;
                let missing: HashMap<String, bool> = records.iter().map(|r| (r.patient_id.clone(), r.has_missing())).collect();
                let by_id: HashMap<String, ClinicalRecord> = filled.into_iter().map(|r| (r.patient_id.clone(), r)).collect();
                (Some(by_id), Some(summary), missing)
            }
            None => (None, None, HashMap::new()),
        };
        if (src.clinical_columns || src.age_target) && clinical.is_none() {
            return Err(EvalError::Data("clinical records are required for clinical columns or the age target".into()));
        }

        let mut names = Vec::new();
        let mut modalities = Vec::new();
        if let Some(t) = src.imaging {
            names.extend(t.columns.iter().cloned());
            modalities.extend(std::iter::repeat(Modality::Imaging).take(t.columns.len()));
        }
        if src.clinical_columns {
            names.extend(ENCODED_CLINICAL_COLUMNS.iter().map(|s| s.to_string()));
            modalities.extend(std::iter::repeat(Modality::Clinical).take(ENCODED_CLINICAL_COLUMNS.len()));
        }
        if names.is_empty() {
            return Err(EvalError::Data("no feature columns selected".into()));
        }

        let n = src.labels.len();
        let mut x = Vec::with_capacity(n);
        let mut ages = Vec::with_capacity(n);
        let mut excluded = Vec::with_capacity(n);
        for l in src.labels {
            let id = l.patient_id.as_str();
            let mut row = Vec::with_capacity(names.len());
            if let (Some(t), Some(index)) = (src.imaging, &imaging_index) {
                let i = *index.get(id).ok_or_else(|| EvalError::Data(format!("patient {id} has no imaging features")))?;
                row.extend_from_slice(&t.rows[i]);
            }
            let record = match &clinical {
                Some(c) => Some(c.get(id).ok_or_else(|| EvalError::Data(format!("patient {id} has no clinical record")))?),
                None => None,
            };
            if let Some(r) = record {
                if src.clinical_columns {
                    row.extend_from_slice(&encode_clinical(r)?);
                }
                if src.age_target {
                    ages.push(r.age.unwrap_or(f64::NAN));
                }
            }
            excluded.push(missing.get(id).copied().unwrap_or(false));
            x.push(row);
        }
        let ds = Self {
            schema: FeatureSchema::new(names, modalities)?,
            patient_ids: src.labels.iter().map(|l| l.patient_id.clone()).collect(),
            x,
            labels: src.labels.iter().map(|l| l.binary).collect(),
            ages: src.age_target.then_some(ages),
            excluded,
        };
        ds.validate()?;
        Ok((ds, summary))
    }

    /// Checks the columns a model kind needs.
    pub fn check_for(&self, kind: ModelKind) -> Result<(), EvalError> {
        match kind {
            ModelKind::Mtl if self.ages.is_none() => Err(EvalError::Data("mtl needs an age target".into())),
            ModelKind::Fusion
                if self.schema.columns_of(Modality::Imaging).is_empty() || self.schema.columns_of(Modality::Clinical).is_empty() =>
            {
                Err(EvalError::Data("fusion needs both imaging and clinical columns".into()))
            }
            _ => Ok(()),
        }
    }
}

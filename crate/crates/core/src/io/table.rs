//! Per-patient numeric tables (`patient_id` followed by named columns).

use std::collections::HashSet;
use std::path::Path;

use super::IngestError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub patient_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, patient_ids: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, patient_id: impl Into<String>, row: Vec<f64>) -> Result<(), IngestError> {
        if row.len() != self.columns.len() {
            return Err(IngestError::RowWidth { expected: self.columns.len(), actual: row.len() });
        }
        self.patient_ids.push(patient_id.into());
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_of(&self, patient_id: &str) -> Option<&[f64]> {
        self.patient_ids.iter().position(|p| p == patient_id).map(|i| self.rows[i].as_slice())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| IngestError::csv(path, e))?;
        for (id, row) in self.patient_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| IngestError::csv(path, e))?;
        }
        w.flush().map_err(|e| IngestError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::csv(path, e))?;
        let header = reader.headers().map_err(|e| IngestError::csv(path, e))?.clone();
        if header.get(0) != Some("patient_id") {
            return Err(IngestError::MissingColumn("patient_id".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(IngestError::DuplicateColumn(c.clone()));
            }
        }
        let mut table = FeatureTable::new(columns);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| IngestError::csv(path, e))?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let mut row = Vec::with_capacity(table.columns.len());
            for (j, cell) in rec.iter().skip(1).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| IngestError::NonNumeric {
                    column: table.columns[j].clone(),
                    row: i + 1,
                    value: cell.to_string(),
                })?;
                row.push(v);
            }
            if !table.patient_ids.is_empty() && table.patient_ids.contains(&id) {
                return Err(IngestError::DuplicatePatient(id));
            }
            table.push(id, row)?;
        }
        Ok(table)
    }
}

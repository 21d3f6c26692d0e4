//! File formats: `.mvol` volumes, a NIfTI-1 subset, clinical and label CSVs,
//! and per-patient feature tables.

pub mod clinical;
pub mod mvol;
pub mod nifti;
pub mod table;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::volume::VolumeError;

pub use clinical::{
    binarize_outcome, encode_clinical, impute_clinical, read_clinical_csv, read_labels_csv, write_clinical_csv,
    write_labels_csv, ClinicalRecord, ImputationSummary, OutcomeLabel, SmokingStatus, YesNo,
};
pub use mvol::{read_mvol, write_mvol, AnyVolume, Content, Dtype, VolumeHeader, VolumeRef};
pub use nifti::read_nifti_subset;
pub use table::FeatureTable;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("malformed volume header: {0}")]
    MalformedHeader(String),
    #[error("payload holds {actual} bytes but the header declares {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("invalid label code {0}")]
    InvalidLabel(u8),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("expected {expected} content")]
    WrongContent { expected: &'static str },
    #[error(transparent)]
    Volume(VolumeError),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("duplicate patient id {0:?}")]
    DuplicatePatient(String),
    #[error("row {row}: non-numeric value {value:?} in column {column}")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("row {row}: invalid value {value:?} in column {column}")]
    InvalidValue { column: String, row: usize, value: String },
    #[error("IIEF score {0} outside 0-5")]
    ScoreOutOfRange(i64),
    #[error("column {0} has no observed values to impute from")]
    CannotImpute(String),
    #[error("patient {patient_id}: missing value in column {column}")]
    MissingValue { column: String, patient_id: String },
    #[error("row has {actual} values, table has {expected} columns")]
    RowWidth { expected: usize, actual: usize },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(path: &Path, err: csv::Error) -> Self {
        IngestError::Csv { path: path.to_path_buf(), message: err.to_string() }
    }
}

impl From<VolumeError> for IngestError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::InvalidLabel(code) => IngestError::InvalidLabel(code),
            other => IngestError::Volume(other),
        }
    }
}

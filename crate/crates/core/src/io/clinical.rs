//! Clinical records, 12-month outcome labels, imputation and encoding.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

pub const CLINICAL_COLUMNS: [&str; 11] = [
    "patient_id",
    "age",
    "height_cm",
    "weight_kg",
    "smoking_status",
    "smoking_freq",
    "alcohol_use",
    "alcohol_units_week",
    "medication",
    "comorbidities",
    "preop_iief_q1",
];

pub const LABEL_COLUMNS: [&str; 2] = ["patient_id", "iief_q1_12mo"];

/// Numeric columns produced by [`encode_clinical`], in order.
pub const ENCODED_CLINICAL_COLUMNS: [&str; 11] = [
    "age",
    "height_cm",
    "weight_kg",
    "smoking_former",
    "smoking_current",
    "smoking_freq",
    "alcohol_use",
    "alcohol_units_week",
    "medication",
    "comorbidities",
    "preop_iief_q1",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmokingStatus {
    Never,
    Former,
    Current,
}

impl SmokingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SmokingStatus::Never => "never",
            SmokingStatus::Former => "former",
            SmokingStatus::Current => "current",
        }
    }
}

impl FromStr for SmokingStatus {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "never" => Ok(SmokingStatus::Never),
            "former" => Ok(SmokingStatus::Former),
            "current" => Ok(SmokingStatus::Current),
            _ => Err(()),
        }
    }
}

impl fmt::Display for SmokingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two-level categorical stored as `no` / `yes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    No,
    Yes,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::No => "no",
            YesNo::Yes => "yes",
        }
    }

    pub fn indicator(self) -> f64 {
        match self {
            YesNo::No => 0.0,
            YesNo::Yes => 1.0,
        }
    }
}

impl FromStr for YesNo {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "no" => Ok(YesNo::No),
            "yes" => Ok(YesNo::Yes),
            _ => Err(()),
        }
    }
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub age: Option<f64>,
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
    pub smoking_status: Option<SmokingStatus>,
    pub smoking_freq: Option<f64>,
    pub alcohol_use: Option<YesNo>,
    pub alcohol_units_week: Option<f64>,
    pub medication: Option<YesNo>,
    pub comorbidities: Option<YesNo>,
    pub preop_iief_q1: Option<u8>,
}

impl ClinicalRecord {
    pub fn has_missing(&self) -> bool {
        self.age.is_none()
            || self.height_cm.is_none()
            || self.weight_kg.is_none()
            || self.smoking_status.is_none()
            || self.smoking_freq.is_none()
            || self.alcohol_use.is_none()
            || self.alcohol_units_week.is_none()
            || self.medication.is_none()
            || self.comorbidities.is_none()
            || self.preop_iief_q1.is_none()
    }

    fn cells(&self) -> [String; 11] {
        fn num(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        fn cat<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.patient_id.clone(),
            num(self.age),
            num(self.height_cm),
            num(self.weight_kg),
            cat(self.smoking_status),
            num(self.smoking_freq),
            cat(self.alcohol_use),
            num(self.alcohol_units_week),
            cat(self.medication),
            cat(self.comorbidities),
            cat(self.preop_iief_q1),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub patient_id: String,
    pub iief_q1_12mo: u8,
    pub binary: u8,
}

impl OutcomeLabel {
    pub fn new(patient_id: impl Into<String>, iief_q1_12mo: u8) -> Result<Self, IngestError> {
        Ok(Self {
            patient_id: patient_id.into(),
            iief_q1_12mo,
            binary: binarize_outcome(iief_q1_12mo)?,
        })
    }
}

/// 1 (good function) for IIEF question-1 scores of 4 or 5, else 0.
pub fn binarize_outcome(score: u8) -> Result<u8, IngestError> {
    match score {
        0..=3 => Ok(0),
        4 | 5 => Ok(1),
        _ => Err(IngestError::ScoreOutOfRange(score as i64)),
    }
}

struct Header {
    index: BTreeMap<&'static str, usize>,
}

impl Header {
    fn parse(record: &csv::StringRecord, schema: &[&'static str]) -> Result<Self, IngestError> {
        let mut index = BTreeMap::new();
        for (i, name) in record.iter().enumerate() {
            let known = schema
                .iter()
                .find(|&&c| c == name.trim())
                .ok_or_else(|| IngestError::UnknownColumn(name.to_string()))?;
            if index.insert(*known, i).is_some() {
                return Err(IngestError::DuplicateColumn(name.to_string()));
            }
        }
        if let Some(missing) = schema.iter().find(|c| !index.contains_key(*c)) {
            return Err(IngestError::MissingColumn(missing.to_string()));
        }
        Ok(Self { index })
    }

    fn cell<'r>(&self, record: &'r csv::StringRecord, column: &str) -> Option<&'r str> {
        record
            .get(self.index[column])
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

fn parse_number(cell: Option<&str>, column: &str, row: usize) -> Result<Option<f64>, IngestError> {
    match cell {
        None => Ok(None),
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(IngestError::NonNumeric { column: column.into(), row, value: s.into() }),
        },
    }
}

fn parse_positive(cell: Option<&str>, column: &str, row: usize) -> Result<Option<f64>, IngestError> {
    let v = parse_number(cell, column, row)?;
    if let Some(x) = v {
        if x <= 0.0 {
            return Err(IngestError::InvalidValue { column: column.into(), row, value: x.to_string() });
        }
    }
    Ok(v)
}

fn parse_category<T: FromStr>(cell: Option<&str>, column: &str, row: usize) -> Result<Option<T>, IngestError> {
    match cell {
        None => Ok(None),
        Some(s) => s
            .parse::<T>()
            .map(Some)
            .map_err(|_| IngestError::InvalidValue { column: column.into(), row, value: s.into() }),
    }
}

fn parse_score(cell: Option<&str>, column: &str, row: usize) -> Result<Option<u8>, IngestError> {
    let Some(s) = cell else { return Ok(None) };
    let v: i64 = s
        .parse()
        .map_err(|_| IngestError::NonNumeric { column: column.into(), row, value: s.into() })?;
    if !(0..=5).contains(&v) {
        return Err(IngestError::ScoreOutOfRange(v));
    }
    Ok(Some(v as u8))
}

fn reader_for(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IngestError::csv(path, e))
}

pub fn read_clinical_csv(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>, IngestError> {
    let path = path.as_ref();
    let mut reader = reader_for(path)?;
    let header = Header::parse(reader.headers().map_err(|e| IngestError::csv(path, e))?, &CLINICAL_COLUMNS)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::csv(path, e))?;
        let row = i + 1;
        let c = |name: &str| header.cell(&rec, name);
        let patient_id = c("patient_id")
            .ok_or_else(|| IngestError::InvalidValue { column: "patient_id".into(), row, value: String::new() })?
            .to_string();
        out.push(ClinicalRecord {
            patient_id,
            age: parse_positive(c("age"), "age", row)?,
            height_cm: parse_positive(c("height_cm"), "height_cm", row)?,
            weight_kg: parse_positive(c("weight_kg"), "weight_kg", row)?,
            smoking_status: parse_category(c("smoking_status"), "smoking_status", row)?,
            smoking_freq: parse_number(c("smoking_freq"), "smoking_freq", row)?,
            alcohol_use: parse_category(c("alcohol_use"), "alcohol_use", row)?,
            alcohol_units_week: parse_number(c("alcohol_units_week"), "alcohol_units_week", row)?,
            medication: parse_category(c("medication"), "medication", row)?,
            comorbidities: parse_category(c("comorbidities"), "comorbidities", row)?,
            preop_iief_q1: parse_score(c("preop_iief_q1"), "preop_iief_q1", row)?,
        });
    }
    check_unique_ids(out.iter().map(|r| r.patient_id.as_str()))?;
    Ok(out)
}

pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<Vec<OutcomeLabel>, IngestError> {
    let path = path.as_ref();
    let mut reader = reader_for(path)?;
    let header = Header::parse(reader.headers().map_err(|e| IngestError::csv(path, e))?, &LABEL_COLUMNS)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::csv(path, e))?;
        let row = i + 1;
        let id = header
            .cell(&rec, "patient_id")
            .ok_or_else(|| IngestError::InvalidValue { column: "patient_id".into(), row, value: String::new() })?;
        let score = parse_score(header.cell(&rec, "iief_q1_12mo"), "iief_q1_12mo", row)?.ok_or_else(|| {
            IngestError::InvalidValue { column: "iief_q1_12mo".into(), row, value: String::new() }
        })?;
        out.push(OutcomeLabel::new(id, score)?);
    }
    check_unique_ids(out.iter().map(|r| r.patient_id.as_str()))?;
    Ok(out)
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(IngestError::DuplicatePatient(id.to_string()));
        }
    }
    Ok(())
}

pub fn write_clinical_csv(records: &[ClinicalRecord], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    w.write_record(CLINICAL_COLUMNS).map_err(|e| IngestError::csv(path, e))?;
    for r in records {
        w.write_record(r.cells()).map_err(|e| IngestError::csv(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_labels_csv(labels: &[OutcomeLabel], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| IngestError::csv(path, e))?;
    w.write_record(LABEL_COLUMNS).map_err(|e| IngestError::csv(path, e))?;
    for l in labels {
        w.write_record([l.patient_id.clone(), l.iief_q1_12mo.to_string()])
            .map_err(|e| IngestError::csv(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// How one column was completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputation {
    pub column: String,
    pub fill_value: String,
    pub filled: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationSummary {
    pub columns: Vec<ColumnImputation>,
}

impl ImputationSummary {
    pub fn total_filled(&self) -> usize {
        self.columns.iter().map(|c| c.filled).sum()
    }
}

fn fill_mean(
    records: &mut [ClinicalRecord],
    column: &'static str,
    field: fn(&mut ClinicalRecord) -> &mut Option<f64>,
    summary: &mut ImputationSummary,
) -> Result<(), IngestError> {
    let present: Vec<f64> = records.iter_mut().filter_map(|r| *field(r)).collect();
    let missing = records.len() - present.len();
    if missing == 0 {
        return Ok(());
    }
    if present.is_empty() {
        return Err(IngestError::CannotImpute(column.into()));
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    for r in records.iter_mut() {
        field(r).get_or_insert(mean);
    }
    summary.columns.push(ColumnImputation { column: column.into(), fill_value: mean.to_string(), filled: missing });
    Ok(())
}

/// Most frequent value; ties go to the lexicographically smallest rendering.
fn fill_mode<T: Copy + fmt::Display>(
    records: &mut [ClinicalRecord],
    column: &'static str,
    field: fn(&mut ClinicalRecord) -> &mut Option<T>,
    summary: &mut ImputationSummary,
) -> Result<(), IngestError> {
    let mut counts: BTreeMap<String, (usize, T)> = BTreeMap::new();
    let mut missing = 0;
    for r in records.iter_mut() {
        match *field(r) {
            Some(v) => counts.entry(v.to_string()).or_insert((0, v)).0 += 1,
            None => missing += 1,
        }
    }
    if missing == 0 {
        return Ok(());
    }
    // BTreeMap iterates in lexicographic order; keep the first maximum
    let mut best: Option<(&String, usize, T)> = None;
    for (key, &(n, v)) in &counts {
        if best.map_or(true, |(_, bn, _)| n > bn) {
            best = Some((key, n, v));
        }
    }
    let (key, _, value) = best.ok_or_else(|| IngestError::CannotImpute(column.into()))?;
    let key = key.clone();
    for r in records.iter_mut() {
        field(r).get_or_insert(value);
    }
    summary.columns.push(ColumnImputation { column: column.into(), fill_value: key, filled: missing });
    Ok(())
}

/// Fills categorical gaps with the column mode and numeric gaps with the
/// column mean, both computed over the non-missing entries.
pub fn impute_clinical(records: &[ClinicalRecord]) -> Result<(Vec<ClinicalRecord>, ImputationSummary), IngestError> {
    let mut out = records.to_vec();
    let mut s = ImputationSummary::default();
    fill_mean(&mut out, "age", |r| &mut r.age, &mut s)?;
    fill_mean(&mut out, "height_cm", |r| &mut r.height_cm, &mut s)?;
    fill_mean(&mut out, "weight_kg", |r| &mut r.weight_kg, &mut s)?;
    fill_mode(&mut out, "smoking_status", |r| &mut r.smoking_status, &mut s)?;
    fill_mean(&mut out, "smoking_freq", |r| &mut r.smoking_freq, &mut s)?;
    fill_mode(&mut out, "alcohol_use", |r| &mut r.alcohol_use, &mut s)?;
    fill_mean(&mut out, "alcohol_units_week", |r| &mut r.alcohol_units_week, &mut s)?;
    fill_mode(&mut out, "medication", |r| &mut r.medication, &mut s)?;
    fill_mode(&mut out, "comorbidities", |r| &mut r.comorbidities, &mut s)?;
    fill_mode(&mut out, "preop_iief_q1", |r| &mut r.preop_iief_q1, &mut s)?;
    Ok((out, s))
}

/// Numeric encoding in [`ENCODED_CLINICAL_COLUMNS`] order; smoking status is
/// dummy-coded against `never`.
pub fn encode_clinical(record: &ClinicalRecord) -> Result<[f64; 11], IngestError> {
    fn need<T>(v: Option<T>, column: &str, id: &str) -> Result<T, IngestError> {
        v.ok_or_else(|| IngestError::MissingValue { column: column.into(), patient_id: id.into() })
    }
    let id = record.patient_id.as_str();
    let smoking = need(record.smoking_status, "smoking_status", id)?;
    Ok([
        need(record.age, "age", id)?,
        need(record.height_cm, "height_cm", id)?,
        need(record.weight_kg, "weight_kg", id)?,
        (smoking == SmokingStatus::Former) as u8 as f64,
        (smoking == SmokingStatus::Current) as u8 as f64,
        need(record.smoking_freq, "smoking_freq", id)?,
        need(record.alcohol_use, "alcohol_use", id)?.indicator(),
        need(record.alcohol_units_week, "alcohol_units_week", id)?,
        need(record.medication, "medication", id)?.indicator(),
        need(record.comorbidities, "comorbidities", id)?.indicator(),
        need(record.preop_iief_q1, "preop_iief_q1", id)? as f64,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "patient_id,age,height_cm,weight_kg,smoking_status,smoking_freq,alcohol_use,alcohol_units_week,medication,comorbidities,preop_iief_q1\n";

    #[test]
    fn binarization_rule() {
        assert_eq!(binarize_outcome(5).unwrap(), 1);
        assert_eq!(binarize_outcome(4).unwrap(), 1);
        assert_eq!(binarize_outcome(3).unwrap(), 0);
        assert_eq!(binarize_outcome(0).unwrap(), 0);
        assert!(matches!(binarize_outcome(6), Err(IngestError::ScoreOutOfRange(6))));
        let all: Vec<u8> = (0..=5).map(|s| binarize_outcome(s).unwrap()).collect();
        assert!(all.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn labels_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "labels.csv", "patient_id,iief_q1_12mo\nA,4\nB,3\nC,5\n");
        let labels = read_labels_csv(&p).unwrap();
        assert_eq!(labels.iter().map(|l| l.binary).collect::<Vec<_>>(), vec![1, 0, 1]);

        let p = write(&dir, "bad.csv", "patient_id,iief_q1_12mo\nA,9\n");
        assert!(matches!(read_labels_csv(&p), Err(IngestError::ScoreOutOfRange(9))));
        let p = write(&dir, "bad2.csv", "patient_id,iief_q1_12mo,extra\nA,1,2\n");
        assert!(matches!(read_labels_csv(&p), Err(IngestError::UnknownColumn(c)) if c == "extra"));
    }

    #[test]
    fn clinical_csv_missing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", &format!("{HEADER}P1,,180,80,never,0,yes,3,no,no,5\n"));
        let recs = read_clinical_csv(&p).unwrap();
        assert_eq!(recs[0].age, None);
        assert_eq!(recs[0].height_cm, Some(180.0));
        assert_eq!(recs[0].smoking_status, Some(SmokingStatus::Never));
        assert!(recs[0].has_missing());

        let p = write(&dir, "c2.csv", &format!("{HEADER}P1,old,180,80,never,0,yes,3,no,no,5\n"));
        assert!(matches!(read_clinical_csv(&p), Err(IngestError::NonNumeric { column, .. }) if column == "age"));
        let p = write(&dir, "c3.csv", &format!("{HEADER}P1,60,180,80,never,0,yes,3,no,no,7\n"));
        assert!(matches!(read_clinical_csv(&p), Err(IngestError::ScoreOutOfRange(7))));
        let p = write(&dir, "c4.csv", "patient_id,age,diabetes\nP1,60,no\n");
        assert!(matches!(read_clinical_csv(&p), Err(IngestError::UnknownColumn(c)) if c == "diabetes"));
    }

    #[test]
    fn clinical_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            ClinicalRecord {
                patient_id: "P1".into(),
                age: Some(61.5),
                height_cm: Some(177.0),
                weight_kg: None,
                smoking_status: Some(SmokingStatus::Former),
                smoking_freq: Some(0.0),
                alcohol_use: Some(YesNo::Yes),
                alcohol_units_week: Some(4.25),
                medication: None,
                comorbidities: Some(YesNo::No),
                preop_iief_q1: Some(5),
            },
            ClinicalRecord { patient_id: "P2".into(), ..Default::default() },
        ];
        let p = dir.path().join("c.csv");
        write_clinical_csv(&recs, &p).unwrap();
        assert_eq!(read_clinical_csv(&p).unwrap(), recs);
    }

    fn rec(id: &str, age: Option<f64>, smoking: Option<SmokingStatus>) -> ClinicalRecord {
        ClinicalRecord {
            patient_id: id.into(),
            age,
            height_cm: Some(175.0),
            weight_kg: Some(80.0),
            smoking_status: smoking,
            smoking_freq: Some(0.0),
            alcohol_use: Some(YesNo::No),
            alcohol_units_week: Some(0.0),
            medication: Some(YesNo::No),
            comorbidities: Some(YesNo::No),
            preop_iief_q1: Some(5),
        }
    }

    #[test]
    fn mean_and_mode_imputation() {
        use SmokingStatus::*;
        let recs = vec![
            rec("a", Some(60.0), Some(Never)),
            rec("b", None, Some(Never)),
            rec("c", Some(70.0), Some(Current)),
            rec("d", Some(65.0), None),
        ];
        let (done, summary) = impute_clinical(&recs).unwrap();
        assert_eq!(done[1].age, Some(65.0));
        assert_eq!(done[3].smoking_status, Some(Never));
        assert!(done.iter().all(|r| !r.has_missing()));
        assert_eq!(summary.total_filled(), 2);
        // untouched entries are preserved
        for (a, b) in recs.iter().zip(&done) {
            if let Some(age) = a.age {
                assert_eq!(b.age, Some(age));
            }
        }
    }

    #[test]
    fn mode_tie_takes_smallest_category() {
        use SmokingStatus::*;
        let recs = vec![
            rec("a", Some(60.0), Some(Never)),
            rec("b", Some(60.0), Some(Current)),
            rec("c", Some(60.0), None),
        ];
        let (done, _) = impute_clinical(&recs).unwrap();
        // "current" < "never"
        assert_eq!(done[2].smoking_status, Some(Current));
    }

    #[test]
    fn all_missing_column_cannot_be_imputed() {
        let mut recs = vec![rec("a", Some(60.0), None), rec("b", Some(61.0), None)];
        recs[0].smoking_status = None;
        let mut r = recs.clone();
        r.iter_mut().for_each(|x| x.medication = None);
        assert!(matches!(impute_clinical(&r), Err(IngestError::CannotImpute(c)) if c == "smoking_status"));
        let mut r = vec![rec("a", Some(60.0), Some(SmokingStatus::Never))];
        r[0].medication = None;
        assert!(matches!(impute_clinical(&r), Err(IngestError::CannotImpute(c)) if c == "medication"));
    }

    #[test]
    fn encoding_layout() {
        let r = rec("a", Some(60.0), Some(SmokingStatus::Current));
        let e = encode_clinical(&r).unwrap();
        assert_eq!(e, [60.0, 175.0, 80.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0]);
        let r = rec("a", None, Some(SmokingStatus::Current));
        assert!(matches!(encode_clinical(&r), Err(IngestError::MissingValue { .. })));
    }
}

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::features::FEATURE_NAMES;

const LEAD_COLUMNS: [&str; 5] = ["subject_id", "trial_id", "segment_index", "valid", "reason"];
const LABEL_COLUMNS: [&str; 2] = ["sbp_mmhg", "dbp_mmhg"];

/// One segment's feature values and reference labels.
///
/// Rows whose features could not be computed are kept with
/// `invalid_reason` set, so segment counts always reconcile with the
/// number of windows cut from the input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub trial_id: String,
    pub segment_index: usize,
    pub values: Vec<f64>,
    pub sbp_mmhg: f64,
    pub dbp_mmhg: f64,
    pub invalid_reason: Option<String>,
}

impl FeatureRow {
    pub fn is_valid(&self) -> bool {
        self.invalid_reason.is_none()
    }
}

// NaN-aware bitwise equality so that invalid rows (which carry NaN
// features) compare equal after a round trip.
impl PartialEq for FeatureRow {
    fn eq(&self, other: &Self) -> bool {
        self.subject_id == other.subject_id
            && self.trial_id == other.trial_id
            && self.segment_index == other.segment_index
            && self.invalid_reason == other.invalid_reason
            && self.sbp_mmhg.to_bits() == other.sbp_mmhg.to_bits()
            && self.dbp_mmhg.to_bits() == other.dbp_mmhg.to_bits()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Which blood-pressure label a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "SBP")]
    Sbp,
    #[serde(rename = "DBP")]
    Dbp,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Sbp => "SBP",
            Target::Dbp => "DBP",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sbp" => Ok(Target::Sbp),
            "dbp" => Ok(Target::Dbp),
            other => Err(format!("unknown target `{other}`")),
        }
    }
}

/// Feature matrix with labels and grouping keys.
///
/// Column order always follows the canonical feature order; projections
/// onto a subset keep the surviving columns in that relative order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Empty table over all 42 canonical features.
    pub fn canonical() -> Self {
        FeatureTable {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Empty table over a subset of features; names must appear in
    /// canonical order.
    pub fn with_features(names: Vec<String>) -> Result<Self> {
        let mut last = None;
        for n in &names {
            let idx = FEATURE_NAMES
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| DatasetError::Malformed(format!("unknown feature `{n}`")))?;
            if last.is_some_and(|l| idx <= l) {
                return Err(DatasetError::Malformed(format!(
                    "feature `{n}` is out of canonical order"
                )));
            }
            last = Some(idx);
        }
        Ok(FeatureTable {
            feature_names: names,
            rows: Vec::new(),
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Canonical index (0..42) of each column.
    pub fn canonical_indices(&self) -> Vec<usize> {
        self.feature_names
            .iter()
            .map(|n| FEATURE_NAMES.iter().position(|c| c == n).expect("validated name"))
            .collect()
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.values.len() != self.feature_names.len() {
            return Err(DatasetError::Malformed(format!(
                "row has {} values, table has {} features",
                row.values.len(),
                self.feature_names.len()
            )));
        }
        if row.is_valid() && row.values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Malformed(
                "valid rows must have finite feature values".into(),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy holding only the valid rows.
    pub fn valid_only(&self) -> FeatureTable {
        FeatureTable {
            feature_names: self.feature_names.clone(),
            rows: self.rows.iter().filter(|r| r.is_valid()).cloned().collect(),
        }
    }

    /// Row-major feature matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn sbp(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sbp_mmhg).collect()
    }

    pub fn dbp(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.dbp_mmhg).collect()
    }

    pub fn labels(&self, target: Target) -> Vec<f64> {
        match target {
            Target::Sbp => self.sbp(),
            Target::Dbp => self.dbp(),
        }
    }

    /// Projects onto the given column positions (re-sorted into table order).
    pub fn project(&self, columns: &[usize]) -> Result<FeatureTable> {
        let mut cols = columns.to_vec();
        cols.sort_unstable();
        cols.dedup();
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_features()) {
            return Err(DatasetError::Malformed(format!("column {bad} out of range")));
        }
        Ok(FeatureTable {
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: cols.iter().map(|&c| r.values[c]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }
}

pub fn save_feature_table(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let header: Vec<&str> = LEAD_COLUMNS
        .iter()
        .copied()
        .chain(table.feature_names.iter().map(String::as_str))
        .chain(LABEL_COLUMNS)
        .collect();
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = vec![
            row.subject_id.clone(),
            row.trial_id.clone(),
            row.segment_index.to_string(),
            if row.is_valid() { "1" } else { "0" }.to_string(),
            row.invalid_reason.clone().unwrap_or_default(),
        ];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        rec.push(row.sbp_mmhg.to_string());
        rec.push(row.dbp_mmhg.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn load_feature_table(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers()?.clone();
    let n = header.len();
    if n < LEAD_COLUMNS.len() + LABEL_COLUMNS.len()
        || header.iter().take(5).ne(LEAD_COLUMNS)
        || header.iter().skip(n - 2).ne(LABEL_COLUMNS)
    {
        return Err(DatasetError::Malformed(
            "feature table header must be subject_id,trial_id,segment_index,valid,reason,<features>,sbp_mmhg,dbp_mmhg".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(5).take(n - 7).map(String::from).collect();
    let mut table = FeatureTable::with_features(names)?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| DatasetError::Malformed(format!("row {}: `{s}` is not a number", i + 1)))
        };
        let valid = match &rec[3] {
            "1" => true,
            "0" => false,
            other => return Err(DatasetError::Malformed(format!("row {}: bad valid flag `{other}`", i + 1))),
        };
        let reason = rec[4].to_string();
        let values = (5..n - 2).map(|c| parse(&rec[c])).collect::<Result<Vec<_>>>()?;
        table.push(FeatureRow {
            subject_id: rec[0].to_string(),
            trial_id: rec[1].to_string(),
            segment_index: rec[2]
                .parse()
                .map_err(|_| DatasetError::Malformed(format!("row {}: bad segment index", i + 1)))?,
            values,
            sbp_mmhg: parse(&rec[n - 2])?,
            dbp_mmhg: parse(&rec[n - 1])?,
            invalid_reason: if valid { None } else { Some(reason) },
        })?;
    }
    Ok(table)
}

/// Reference BP pair for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLabel {
    pub subject_id: String,
    pub trial_id: String,
    pub sbp_mmhg: f64,
    pub dbp_mmhg: f64,
}

pub fn save_labels(labels: &[TrialLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for l in labels {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))?;
    Ok(())
}

/// Reads a `subject_id,trial_id,sbp_mmhg,dbp_mmhg` label file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<TrialLabel>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let labels = rdr.deserialize().collect::<std::result::Result<Vec<TrialLabel>, _>>()?;
    for l in &labels {
        if !(l.sbp_mmhg > l.dbp_mmhg && l.dbp_mmhg > 0.0) {
            return Err(DatasetError::Malformed(format!(
                "labels for {}/{} violate sbp > dbp > 0",
                l.subject_id, l.trial_id
            )));
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(i: usize, values: Vec<f64>, reason: Option<&str>) -> FeatureRow {
        FeatureRow {
            subject_id: format!("S{:02}", i % 13),
            trial_id: format!("T{:02}", i % 10),
            segment_index: i,
            values,
            sbp_mmhg: 120.0 + i as f64 * 0.5,
            dbp_mmhg: 80.0 - i as f64 * 0.25,
            invalid_reason: reason.map(String::from),
        }
    }

    #[test]
    fn empty_table_is_header_only_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = FeatureTable::canonical();
        save_feature_table(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 42 + 7);
        assert_eq!(load_feature_table(&p).unwrap(), t);
    }

    #[test]
    fn invalid_row_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = FeatureTable::canonical();
        t.push(row(0, vec![1.0; 42], None)).unwrap();
        let mut bad = vec![2.0; 42];
        bad[40] = f64::NAN;
        t.push(row(1, bad, Some("UndefinedEntropy: A=0, B=3"))).unwrap();
        save_feature_table(&t, &p).unwrap();
        let back = load_feature_table(&p).unwrap();
        assert_eq!(back, t);
        assert!(!back.rows[1].is_valid());
        assert_eq!(back.valid_only().len(), 1);
    }

    #[test]
    fn projection_keeps_canonical_order() {
        let mut t = FeatureTable::canonical();
        t.push(row(0, (0..42).map(f64::from).collect(), None)).unwrap();
        let p = t.project(&[41, 0, 13]).unwrap();
        assert_eq!(p.feature_names(), ["PTT_max", "PW", "HR"]);
        assert_eq!(p.rows[0].values, vec![0.0, 13.0, 41.0]);
        assert_eq!(p.canonical_indices(), vec![0, 13, 41]);
        assert!(FeatureTable::with_features(vec!["HR".into(), "PW".into()]).is_err());
    }

    #[test]
    fn labels_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let labels = vec![TrialLabel {
            subject_id: "S01".into(),
            trial_id: "T01".into(),
            sbp_mmhg: 121.5,
            dbp_mmhg: 77.0,
        }];
        save_labels(&labels, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), labels);
        std::fs::write(&p, "subject_id,trial_id,sbp_mmhg,dbp_mmhg\nS,T,70,80\n").unwrap();
        assert!(load_labels(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn save_load_is_identity(
            rows in prop::collection::vec(
                (prop::collection::vec(-1e6f64..1e6, 42), any::<bool>()),
                0..12,
            )
        ) {
            let mut t = FeatureTable::canonical();
            for (i, (values, ok)) in rows.into_iter().enumerate() {
                t.push(row(i, values, if ok { None } else { Some("flagged, with comma") })).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.csv");
            save_feature_table(&t, &p).unwrap();
            prop_assert_eq!(load_feature_table(&p).unwrap(), t);
        }
    }
}

//! Data model and on-disk formats.
//!
//! Everything the pipeline passes between stages lives here: raw
//! carrier-band recordings, processed 500 Hz series, labelled segments and
//! feature tables. Text formats are plain CSV with a single `#` metadata
//! line; raw recordings additionally have a little-endian binary form.

mod raw;
mod series;
mod summary;
mod table;

pub use raw::{load_raw, save_raw, RawFormat, RawRecording, RecordingMeta};
pub use series::{load_series, save_series, LabeledSegment, ProcessedSeries, SeriesKind};
pub use summary::{dataset_summary, Histogram, SummaryStats};
pub use table::{
    load_feature_table, load_labels, save_feature_table, save_labels, FeatureRow, FeatureTable,
    Target, TrialLabel,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o failure on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header field `{0}`")]
    MissingHeaderField(String),
    #[error("invalid header field `{field}`: {reason}")]
    InvalidHeaderField { field: String, reason: String },
    #[error("channel lengths differ: vs={vs}, vr={vr}, ecg={ecg}")]
    LengthMismatch { vs: usize, vr: usize, ecg: usize },
    #[error("non-finite sample at row {row} in column `{column}`")]
    NonFiniteSample { row: usize, column: String },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("feature table is empty")]
    EmptyTable,
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Parses a `# key=value key=value ...` metadata line.
pub(crate) fn parse_meta_line(line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| DatasetError::Malformed("metadata line must start with `#`".into()))?;
    let mut out = BTreeMap::new();
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| DatasetError::Malformed(format!("metadata token `{token}` lacks `=`")))?;
        out.insert(key.to_string(), value.to_string());
    }
    Ok(out)
}

pub(crate) fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let raw = meta
        .get(key)
        .ok_or_else(|| DatasetError::MissingHeaderField(key.to_string()))?;
    raw.parse::<f64>()
        .map_err(|e| DatasetError::InvalidHeaderField {
            field: key.to_string(),
            reason: e.to_string(),
        })
}

pub(crate) fn check_token(field: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(|c| c.is_whitespace() || c == '=' || c == '|') {
        return Err(DatasetError::InvalidHeaderField {
            field: field.to_string(),
            reason: format!("`{value}` must be non-empty and free of whitespace, `=` and `|`"),
        });
    }
    Ok(())
}

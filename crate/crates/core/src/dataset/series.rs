use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{meta_f64, parse_meta_line, DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeriesKind {
    #[serde(rename = "BIOZ_ABS")]
    BiozAbs,
    #[serde(rename = "BIOZ_REAL")]
    BiozReal,
    #[serde(rename = "BIOZ_IMAG")]
    BiozImag,
    #[serde(rename = "ECG")]
    Ecg,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::BiozAbs => "BIOZ_ABS",
            SeriesKind::BiozReal => "BIOZ_REAL",
            SeriesKind::BiozImag => "BIOZ_IMAG",
            SeriesKind::Ecg => "ECG",
        })
    }
}

impl FromStr for SeriesKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BIOZ_ABS" | "ABS" => Ok(SeriesKind::BiozAbs),
            "BIOZ_REAL" | "REAL" => Ok(SeriesKind::BiozReal),
            "BIOZ_IMAG" | "IMAG" => Ok(SeriesKind::BiozImag),
            "ECG" => Ok(SeriesKind::Ecg),
            other => Err(format!("unknown series kind `{other}`")),
        }
    }
}

/// A uniformly sampled, already demodulated series.
///
/// `start_s` is the time of the first sample relative to the start of the
/// raw recording, so fiducial times from different channels of the same
/// trial are directly comparable. `log` records every processing step in
/// the order it was applied; steps only ever get appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSeries {
    pub values: Vec<f64>,
    pub sample_rate_hz: f64,
    pub start_s: f64,
    pub kind: SeriesKind,
    log: Vec<String>,
}

impl ProcessedSeries {
    pub fn new(values: Vec<f64>, sample_rate_hz: f64, start_s: f64, kind: SeriesKind) -> Self {
        ProcessedSeries {
            values,
            sample_rate_hz,
            start_s,
            kind,
            log: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Time of sample `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.start_s + i as f64 / self.sample_rate_hz
    }

    /// Fractional sample position of time `t`.
    pub fn position_of(&self, t: f64) -> f64 {
        (t - self.start_s) * self.sample_rate_hz
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Appends a processing-step descriptor. Descriptors may not contain
    /// whitespace or `|` (they are stored on a single metadata line).
    pub fn push_step(&mut self, step: impl Into<String>) {
        let step = step.into();
        debug_assert!(
            !step.is_empty() && !step.chars().any(|c| c.is_whitespace() || c == '|'),
            "bad step descriptor {step}"
        );
        self.log.push(step);
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.push_step(step);
        self
    }

    /// Same metadata and log, new values.
    pub fn map_values(&self, values: Vec<f64>) -> Self {
        ProcessedSeries {
            values,
            sample_rate_hz: self.sample_rate_hz,
            start_s: self.start_s,
            kind: self.kind,
            log: self.log.clone(),
        }
    }

    /// Samples `[start, start + len)` with the time origin shifted accordingly.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        ProcessedSeries {
            values: self.values[start..start + len].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            start_s: self.time_at(start),
            kind: self.kind,
            log: self.log.clone(),
        }
    }
}

/// One analysis window of aligned BIOZ and ECG with the trial's BP labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub biz: ProcessedSeries,
    pub ecg: ProcessedSeries,
    pub sbp_mmhg: f64,
    pub dbp_mmhg: f64,
    pub segment_index: usize,
    pub subject_id: String,
    pub trial_id: String,
}

pub fn save_series(series: &ProcessedSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| DatasetError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for step in &series.log {
        if step.is_empty() || step.chars().any(|c| c.is_whitespace() || c == '|') {
            return Err(DatasetError::InvalidHeaderField {
                field: "step".into(),
                reason: format!("`{step}` must be non-empty and free of whitespace and `|`"),
            });
        }
    }
    let mut line = format!(
        "# kind={} sample_rate_hz={} start_s={}",
        series.kind, series.sample_rate_hz, series.start_s
    );
    if !series.log.is_empty() {
        line.push_str(" steps=");
        line.push_str(&series.log.join("|"));
    }
    writeln!(w, "{line}").map_err(io)?;
    writeln!(w, "value").map_err(io)?;
    for v in &series.values {
        writeln!(w, "{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_series(path: impl AsRef<Path>) -> Result<ProcessedSeries> {
    let path = path.as_ref();
    let io = |e| DatasetError::io(path, e);
    let mut lines = BufReader::new(File::open(path).map_err(io)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| DatasetError::Malformed("empty series file".into()))?
        .map_err(io)?;
    let meta = parse_meta_line(&first)?;
    let kind = meta
        .get("kind")
        .ok_or_else(|| DatasetError::MissingHeaderField("kind".into()))?
        .parse::<SeriesKind>()
        .map_err(|reason| DatasetError::InvalidHeaderField {
            field: "kind".into(),
            reason,
        })?;
    let sample_rate_hz = meta_f64(&meta, "sample_rate_hz")?;
    let start_s = meta_f64(&meta, "start_s")?;
    let log = meta
        .get("steps")
        .map(|s| s.split('|').map(String::from).collect())
        .unwrap_or_default();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "value" => {}
        _ => return Err(DatasetError::Malformed("expected `value` column header".into())),
    }
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| DatasetError::Malformed(format!("row {}: `{t}` is not a number", i + 1)))?;
        if !v.is_finite() {
            return Err(DatasetError::NonFiniteSample {
                row: i + 1,
                column: "value".into(),
            });
        }
        values.push(v);
    }
    Ok(ProcessedSeries {
        values,
        sample_rate_hz,
        start_s,
        kind,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip_keeps_log_order() {
        let s = ProcessedSeries::new(vec![1.5, -2.25, 0.1 + 0.2], 500.0, 0.001, SeriesKind::BiozAbs)
            .with_step("demod(n_block=200)")
            .with_step("fir(order=1000)");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        save_series(&s, &p).unwrap();
        let back = load_series(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.log(), ["demod(n_block=200)", "fir(order=1000)"]);
    }

    #[test]
    fn slice_shifts_time_origin() {
        let s = ProcessedSeries::new((0..10).map(f64::from).collect(), 5.0, 1.0, SeriesKind::Ecg);
        let part = s.slice(4, 3);
        assert_eq!(part.values, vec![4.0, 5.0, 6.0]);
        assert!((part.start_s - 1.8).abs() < 1e-12);
        assert!((part.time_at(1) - s.time_at(5)).abs() < 1e-12);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureTable, Result};

/// Fixed-width histogram; bin `i` covers `[start + i*width, start + (i+1)*width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width` spanning all values.
    pub fn aligned(values: &[f64], bin_width: f64) -> Histogram {
        if values.is_empty() {
            return Histogram {
                start: 0.0,
                bin_width,
                counts: Vec::new(),
            };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = (lo / bin_width).floor() * bin_width;
        let n_bins = (((hi - start) / bin_width).floor() as usize) + 1;
        let mut counts = vec![0; n_bins];
        for &v in values {
            let i = (((v - start) / bin_width).floor() as usize).min(n_bins - 1);
            counts[i] += 1;
        }
        Histogram {
            start,
            bin_width,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n_rows: usize,
    pub n_valid: usize,
    pub sbp_mean: f64,
    pub sbp_sd: f64,
    pub dbp_mean: f64,
    pub dbp_sd: f64,
    pub rows_per_subject: BTreeMap<String, usize>,
    pub sbp_histogram: Histogram,
    pub dbp_histogram: Histogram,
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Label statistics over every row (valid or not); SD uses n-1.
pub fn dataset_summary(table: &FeatureTable) -> Result<SummaryStats> {
    if table.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    let sbp = table.sbp();
    let dbp = table.dbp();
    let (sbp_mean, sbp_sd) = mean_sd(&sbp);
    let (dbp_mean, dbp_sd) = mean_sd(&dbp);
    let mut rows_per_subject = BTreeMap::new();
    for r in &table.rows {
        *rows_per_subject.entry(r.subject_id.clone()).or_insert(0) += 1;
    }
    Ok(SummaryStats {
        n_rows: table.len(),
        n_valid: table.rows.iter().filter(|r| r.is_valid()).count(),
        sbp_mean,
        sbp_sd,
        dbp_mean,
        dbp_sd,
        rows_per_subject,
        sbp_histogram: Histogram::aligned(&sbp, 5.0),
        dbp_histogram: Histogram::aligned(&dbp, 5.0),
    })
}

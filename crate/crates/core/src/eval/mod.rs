//! K-fold cross-validation, error metrics, AAMI/BHS grading and plot
//! exports.

mod export;
mod metrics;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureTable, Target};
use crate::regress::{self, ModelConfig, ModelKind, RegressError};
use crate::util::{mean, sample_sd};

pub use export::{export_plots, render_report};
pub use metrics::{
    aami_check, bhs_grade, bland_altman, cumulative_percentages, metrics, BhsGrade, BlandAltman, Metrics,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{reference} references but {estimate} estimates")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("no rows to evaluate")]
    Empty,
    #[error("{n_rows} rows ({what}) cannot fill {n_folds} folds")]
    TooFewRows {
        n_rows: usize,
        n_folds: usize,
        what: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cumulative percentages must satisfy 0 <= cp5 <= cp10 <= cp15 <= 100, got {0}, {1}, {2}")]
    NonMonotoneCp(f64, f64, f64),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("export failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitUnit {
    Segment,
    Trial,
    Subject,
}

impl std::str::FromStr for SplitUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "segment" => Ok(SplitUnit::Segment),
            "trial" => Ok(SplitUnit::Trial),
            "subject" => Ok(SplitUnit::Subject),
            other => Err(format!("unknown split unit `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_folds: usize,
    pub shuffle_seed: u64,
    pub split_unit: SplitUnit,
    pub target: Target,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_folds: 10,
            shuffle_seed: 0,
            split_unit: SplitUnit::Segment,
            target: Target::Sbp,
        }
    }
}

/// Fold index for every row.
///
/// Rows (or whole groups when `groups` is given) are shuffled with the
/// seed. Rows are then dealt into contiguous near-equal folds; groups go
/// one at a time to the fold currently holding the fewest rows.
pub fn kfold_split(n_rows: usize, groups: Option<&[String]>, cfg: &CvConfig) -> Result<Vec<usize>> {
    let k = cfg.n_folds;
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("n_folds {k} must be at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    match groups {
        None => {
            if n_rows < k {
                return Err(EvalError::TooFewRows {
                    n_rows,
                    n_folds: k,
                    what: "rows",
                });
            }
            let mut idx: Vec<usize> = (0..n_rows).collect();
            idx.shuffle(&mut rng);
            let (base, extra) = (n_rows / k, n_rows % k);
            let mut folds = vec![0; n_rows];
            let mut pos = 0;
            for f in 0..k {
                let size = base + usize::from(f < extra);
                for &row in &idx[pos..pos + size] {
                    folds[row] = f;
                }
                pos += size;
            }
            Ok(folds)
        }
        Some(groups) => {
            if groups.len() != n_rows {
                return Err(EvalError::LengthMismatch {
                    reference: n_rows,
                    estimate: groups.len(),
                });
            }
            let mut keys: Vec<&String> = Vec::new();
            let mut members: HashMap<&String, Vec<usize>> = HashMap::new();
            for (row, g) in groups.iter().enumerate() {
                members
                    .entry(g)
                    .or_insert_with(|| {
                        keys.push(g);
                        Vec::new()
                    })
                    .push(row);
            }
            if keys.len() < k {
                return Err(EvalError::TooFewRows {
                    n_rows: keys.len(),
                    n_folds: k,
                    what: "groups",
                });
            }
            keys.shuffle(&mut rng);
            let mut sizes = vec![0usize; k];
            let mut folds = vec![0; n_rows];
            for g in keys {
                let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
                for &row in &members[g] {
                    folds[row] = f;
                }
                sizes[f] += members[g].len();
            }
            Ok(folds)
        }
    }
}

/// Mean and sample SD of a per-fold quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(v: &[f64]) -> Self {
        MeanSd {
            mean: mean(v),
            sd: sample_sd(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: Target,
    pub model: ModelKind,
    pub feature_names: Vec<String>,
    pub cv: CvConfig,
    /// Metrics over all pooled held-out predictions.
    pub pooled: Metrics,
    pub folds: Vec<Metrics>,
    pub fold_mae: MeanSd,
    pub fold_rmse: MeanSd,
    /// Over folds where R is defined.
    pub fold_r: MeanSd,
    pub cp5: f64,
    pub cp10: f64,
    pub cp15: f64,
    pub aami_pass: bool,
    pub bhs_grade: BhsGrade,
    pub bland_altman: BlandAltman,
    /// (reference, estimate) in table row order.
    pub residuals: Vec<(f64, f64)>,
    pub fold_of_row: Vec<usize>,
}

/// Trains on k-1 folds and predicts the held-out fold, for every fold, over
/// the valid rows of `table`.
pub fn cross_validate(table: &FeatureTable, model: &ModelConfig, cv: &CvConfig) -> Result<EvalReport> {
    let table = table.valid_only();
    if table.is_empty() {
        return Err(EvalError::Empty);
    }
    let groups: Option<Vec<String>> = match cv.split_unit {
        SplitUnit::Segment => None,
        SplitUnit::Trial => Some(
            table
                .rows
                .iter()
                .map(|r| format!("{}\u{1f}{}", r.subject_id, r.trial_id))
                .collect(),
        ),
        SplitUnit::Subject => Some(table.rows.iter().map(|r| r.subject_id.clone()).collect()),
    };
    let folds = kfold_split(table.len(), groups.as_deref(), cv)?;
    let x = table.matrix();
    let y = table.labels(cv.target);
    let names = table.feature_names().to_vec();

    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..cv.n_folds)
        .into_par_iter()
        .map(|f| {
            let (mut tx, mut ty, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (i, &fi) in folds.iter().enumerate() {
                if fi == f {
                    test.push(i);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            let m = regress::train(model, &tx, &ty, &names)?;
            let test_x: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
            let pred = m.predict(&test_x)?;
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;

    let mut estimate = vec![f64::NAN; y.len()];
    let mut fold_metrics = Vec::with_capacity(cv.n_folds);
    for (rows, pred) in &per_fold {
        let refs: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        fold_metrics.push(metrics(&refs, pred)?);
        for (&i, &p) in rows.iter().zip(pred) {
            estimate[i] = p;
        }
    }
    let pooled = metrics(&y, &estimate)?;
    let (cp5, cp10, cp15) = cumulative_percentages(&y, &estimate);
    let fold_r: Vec<f64> = fold_metrics.iter().filter_map(|m| m.r).collect();
    Ok(EvalReport {
        target: cv.target,
        model: model.kind(),
        feature_names: names,
        cv: *cv,
        pooled,
        fold_mae: MeanSd::of(&fold_metrics.iter().map(|m| m.mae).collect::<Vec<_>>()),
        fold_rmse: MeanSd::of(&fold_metrics.iter().map(|m| m.rmse).collect::<Vec<_>>()),
        fold_r: MeanSd::of(&fold_r),
        folds: fold_metrics,
        cp5,
        cp10,
        cp15,
        aami_pass: aami_check(pooled.me, pooled.rmse),
        bhs_grade: bhs_grade(cp5, cp10, cp15)?,
        bland_altman: bland_altman(&y, &estimate)?,
        residuals: y.iter().copied().zip(estimate).collect(),
        fold_of_row: folds,
    })
}

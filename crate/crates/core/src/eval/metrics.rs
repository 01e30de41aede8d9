use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::util::{mean, pearson, sample_sd};

/// Agreement between estimates and references, in mmHg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub me: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Pearson correlation of (estimate, reference); `None` when either
    /// side has zero variance.
    pub r: Option<f64>,
}

pub fn metrics(reference: &[f64], estimate: &[f64]) -> Result<Metrics> {
    if reference.len() != estimate.len() {
        return Err(EvalError::LengthMismatch {
            reference: reference.len(),
            estimate: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = reference.len() as f64;
    let err: Vec<f64> = estimate.iter().zip(reference).map(|(e, r)| e - r).collect();
    Ok(Metrics {
        n: reference.len(),
        me: err.iter().sum::<f64>() / n,
        mae: err.iter().map(|e| e.abs()).sum::<f64>() / n,
        rmse: (err.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        r: pearson(estimate, reference),
    })
}

/// Percentages of absolute errors `<= 5`, `<= 10` and `<= 15` mmHg.
pub fn cumulative_percentages(reference: &[f64], estimate: &[f64]) -> (f64, f64, f64) {
    let n = reference.len() as f64;
    let within = |lim: f64| {
        100.0
            * estimate
                .iter()
                .zip(reference)
                .filter(|(e, r)| (*e - *r).abs() <= lim)
                .count() as f64
            / n
    };
    (within(5.0), within(10.0), within(15.0))
}

/// AAMI: `|ME| <= 5` and `RMSE <= 8` mmHg.
pub fn aami_check(me: f64, rmse: f64) -> bool {
    me.abs() <= 5.0 && rmse <= 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BhsGrade {
    A,
    B,
    C,
    #[serde(rename = "FAIL")]
    Fail,
}

impl std::fmt::Display for BhsGrade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BhsGrade::A => "A",
            BhsGrade::B => "B",
            BhsGrade::C => "C",
            BhsGrade::Fail => "FAIL",
        })
    }
}

/// Best BHS grade whose three cumulative thresholds are all met.
pub fn bhs_grade(cp5: f64, cp10: f64, cp15: f64) -> Result<BhsGrade> {
    let in_range = |v: f64| (0.0..=100.0).contains(&v);
    if !(in_range(cp5) && in_range(cp10) && in_range(cp15)) || !(cp5 <= cp10 && cp10 <= cp15) {
        return Err(EvalError::NonMonotoneCp(cp5, cp10, cp15));
    }
    let grades = [
        (BhsGrade::A, 60.0, 85.0, 95.0),
        (BhsGrade::B, 50.0, 75.0, 90.0),
        (BhsGrade::C, 40.0, 65.0, 85.0),
    ];
    Ok(grades
        .iter()
        .find(|(_, a, b, c)| cp5 >= *a && cp10 >= *b && cp15 >= *c)
        .map_or(BhsGrade::Fail, |g| g.0))
}

/// Bland-Altman agreement: differences are `estimate - reference`, limits
/// are `bias ± 1.96 SD` with the n-1 SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// (pair mean, difference) per row.
    pub points: Vec<(f64, f64)>,
}

pub fn bland_altman(reference: &[f64], estimate: &[f64]) -> Result<BlandAltman> {
    metrics(reference, estimate)?;
    let points: Vec<(f64, f64)> = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (0.5 * (e + r), e - r))
        .collect();
    let diffs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let bias = mean(&diffs);
    let sd = sample_sd(&diffs);
    Ok(BlandAltman {
        bias,
        sd,
        lower: bias - 1.96 * sd,
        upper: bias + 1.96 * sd,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_cases() {
        let m = metrics(&[100.0, 120.0, 90.0], &[100.0, 120.0, 90.0]).unwrap();
        assert_eq!((m.me, m.mae, m.rmse), (0.0, 0.0, 0.0));
        assert!((m.r.unwrap() - 1.0).abs() < 1e-12);
        let m = metrics(&[100.0, 120.0], &[102.0, 118.0]).unwrap();
        assert_eq!((m.me, m.mae, m.rmse), (0.0, 2.0, 2.0));
        assert!((m.r.unwrap() - 1.0).abs() < 1e-12);
        let m = metrics(&[100.0, 110.0, 130.0], &[105.0, 115.0, 135.0]).unwrap();
        assert!((m.me - 5.0).abs() < 1e-12 && (m.mae - 5.0).abs() < 1e-12 && (m.rmse - 5.0).abs() < 1e-12);
        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(metrics(&[1.0, 1.0], &[2.0, 3.0]).unwrap().r, None);
    }

    #[test]
    fn graders() {
        assert!(aami_check(0.08, 4.11));
        assert!(aami_check(0.01, 3.36));
        assert!(!aami_check(5.01, 4.0));
        assert_eq!(bhs_grade(83.1, 95.0, 98.6).unwrap(), BhsGrade::A);
        assert_eq!(bhs_grade(86.9, 97.7, 99.1).unwrap(), BhsGrade::A);
        assert_eq!(bhs_grade(59.9, 95.0, 99.0).unwrap(), BhsGrade::B);
        assert_eq!(bhs_grade(10.0, 20.0, 30.0).unwrap(), BhsGrade::Fail);
        assert!(matches!(bhs_grade(90.0, 80.0, 99.0), Err(EvalError::NonMonotoneCp(..))));
    }

    #[test]
    fn cp_is_inclusive() {
        let (a, b, c) = cumulative_percentages(&[0.0, 0.0, 0.0, 0.0], &[5.0, 10.0, 15.0, 16.0]);
        assert_eq!((a, b, c), (25.0, 50.0, 75.0));
    }

    #[test]
    fn bland_altman_identity() {
        let ba = bland_altman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((ba.bias, ba.lower, ba.upper), (0.0, 0.0, 0.0));
    }
}

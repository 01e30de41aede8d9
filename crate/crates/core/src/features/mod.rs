//! The 42-feature extractor: cardiac-cycle features averaged over valid
//! cycles plus whole-segment statistics.

mod cycle;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledSegment, ProcessedSeries};
use crate::fiducial::{detect_cycle_fiducials, detect_r_peaks_with, CycleFiducials, FiducialError, RPeakConfig};

pub use cycle::{cycle_diff, cycle_heights, cycle_ptt, cycle_slopes, cycle_widths, Widths, LEVELS};
pub use stats::{entropy_features, heart_rate, stat_features};

pub const N_FEATURES: usize = 42;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "PTT_max", "PTT_min", "PAT",
    "DW", "DW25", "DW50", "DW75", "DW90",
    "SW", "SW25", "SW50", "SW75", "SW90",
    "PW", "PW25", "PW50", "PW75", "PW90",
    "PWR25", "PWR50", "PWR75", "PWR90",
    "HI_max", "HI_min", "HI_MD", "PP", "HIR_max", "HIR_MD",
    "AS", "DS",
    "HId_max", "PWd", "PWd50", "PWRd", "ASd", "DSd",
    "SD", "Skew", "Kurt",
    "ApEn", "SampEn",
    "HR",
];

/// Index of a feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

const CYCLE_FEATURES: usize = 36;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no valid cardiac cycle in segment")]
    NoValidCycles,
    #[error("the {0} level is never crossed")]
    LevelNotCrossed(f64),
    #[error("minimum height is zero")]
    ZeroMinHeight,
    #[error("zero-duration edge")]
    ZeroDuration,
    #[error("degenerate difference: {0}")]
    DegenerateDifference(&'static str),
    #[error("constant segment")]
    ConstantSegment,
    #[error("undefined entropy: {0}")]
    UndefinedEntropy(&'static str),
    #[error("need at least 2 R peaks, got {0}")]
    TooFewPeaks(usize),
    #[error("{len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error(transparent)]
    Fiducial(#[from] FiducialError),
}

impl FeatureError {
    /// Short machine-readable reason tag.
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureError::NoValidCycles => "NoValidCycles",
            FeatureError::LevelNotCrossed(_) => "LevelNotCrossed",
            FeatureError::ZeroMinHeight => "ZeroMinHeight",
            FeatureError::ZeroDuration => "ZeroDuration",
            FeatureError::DegenerateDifference(_) => "DegenerateDifference",
            FeatureError::ConstantSegment => "ConstantSegment",
            FeatureError::UndefinedEntropy(_) => "UndefinedEntropy",
            FeatureError::TooFewPeaks(_) => "TooFewPeaks",
            FeatureError::TooShort { .. } => "TooShort",
            FeatureError::Fiducial(e) => e.tag(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub entropy_m: usize,
    pub entropy_r_fraction: f64,
    pub rpeak: RPeakConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            entropy_m: 2,
            entropy_r_fraction: 0.2,
            rpeak: RPeakConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Canonical order, see [`FEATURE_NAMES`]; NaN where a value could not
    /// be computed.
    pub values: Vec<f64>,
    pub invalid_reasons: Vec<String>,
    pub n_cycles: usize,
    pub n_valid_cycles: usize,
}

impl FeatureVector {
    pub fn is_valid(&self) -> bool {
        self.invalid_reasons.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }
}

/// All 36 cycle features in canonical order, or the first reason the cycle
/// has to be excluded.
pub fn cycle_features(c: &CycleFiducials, biz: &ProcessedSeries) -> std::result::Result<Vec<f64>, String> {
    if !c.is_valid() {
        return Err(format!("{:?}", c.flags[0]));
    }
    let tag = |e: FeatureError| e.tag().to_string();
    let mut v = Vec::with_capacity(CYCLE_FEATURES);
    v.extend_from_slice(&cycle_ptt(c));
    v.extend(cycle_widths(c, biz).map_err(tag)?.flatten());
    v.extend_from_slice(&cycle_heights(c).map_err(tag)?);
    v.extend_from_slice(&cycle_slopes(c).map_err(tag)?);
    v.extend_from_slice(&cycle_diff(c, biz).map_err(tag)?);
    debug_assert_eq!(v.len(), CYCLE_FEATURES);
    Ok(v)
}

fn mean_over<const K: usize>(per_cycle: impl Iterator<Item = [f64; K]>) -> Result<[f64; K]> {
    let mut acc = [0.0; K];
    let mut count = 0usize;
    for v in per_cycle {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(FeatureError::NoValidCycles);
    }
    Ok(acc.map(|a| a / count as f64))
}

/// `(PTT_max, PTT_min, PAT)` averaged over cycles with valid fiducials.
pub fn ptt_features(cycles: &[CycleFiducials]) -> Result<(f64, f64, f64)> {
    let [a, b, c] = mean_over(cycles.iter().filter(|c| c.is_valid()).map(cycle_ptt))?;
    Ok((a, b, c))
}

/// Width family means over cycles where every level is crossed.
pub fn width_features(cycles: &[CycleFiducials], biz: &ProcessedSeries) -> Result<Widths> {
    let per: Vec<Widths> = cycles
        .iter()
        .filter(|c| c.is_valid())
        .filter_map(|c| cycle_widths(c, biz).ok())
        .collect();
    let flat = mean_over(per.iter().map(|w| {
        let mut a = [0.0; 19];
        a.copy_from_slice(&w.flatten());
        a
    }))?;
    let mut w = Widths {
        dw: [0.0; 5],
        sw: [0.0; 5],
        pw: [0.0; 5],
        pwr: [0.0; 4],
    };
    w.dw.copy_from_slice(&flat[0..5]);
    w.sw.copy_from_slice(&flat[5..10]);
    w.pw.copy_from_slice(&flat[10..15]);
    w.pwr.copy_from_slice(&flat[15..19]);
    Ok(w)
}

/// `(HI_max, HI_min, HI_MD, PP, HIR_max, HIR_MD)` means.
pub fn height_features(cycles: &[CycleFiducials]) -> Result<[f64; 6]> {
    mean_over(cycles.iter().filter(|c| c.is_valid()).filter_map(|c| cycle_heights(c).ok()))
}

/// `(AS, DS)` means.
pub fn slope_features(cycles: &[CycleFiducials]) -> Result<[f64; 2]> {
    mean_over(cycles.iter().filter(|c| c.is_valid()).filter_map(|c| cycle_slopes(c).ok()))
}

/// `(HId_max, PWd, PWd50, PWRd, ASd, DSd)` means.
pub fn diff_features(cycles: &[CycleFiducials], biz: &ProcessedSeries) -> Result<[f64; 6]> {
    mean_over(
        cycles
            .iter()
            .filter(|c| c.is_valid())
            .filter_map(|c| cycle_diff(c, biz).ok()),
    )
}

/// Checks the identities every extracted vector must satisfy.
pub fn check_invariants(values: &[f64]) -> std::result::Result<(), String> {
    let at = |n: &str| values[feature_index(n).unwrap()];
    let tol = |a: f64| 1e-9 * a.abs().max(1.0);
    if (at("PW") - at("SW") - at("DW")).abs() > tol(at("PW")) {
        return Err("PW != SW + DW".into());
    }
    if (at("PP") - (at("HI_max") - at("HI_min"))).abs() > tol(at("PP")) {
        return Err("PP != HI_max - HI_min".into());
    }
    let pwr = [at("PWR25"), at("PWR50"), at("PWR75"), at("PWR90")];
    if !pwr.iter().all(|&r| r > 0.0 && r <= 1.0) || !pwr.windows(2).all(|w| w[0] >= w[1]) {
        return Err(format!("PWR out of order: {pwr:?}"));
    }
    Ok(())
}

/// Full canonical vector for one segment. Cycle features are means over
/// cycles whose fiducials and every per-cycle feature are valid; the
/// vector is marked invalid with reasons when no such cycle exists or a
/// segment-level feature is undefined.
pub fn extract_all(segment: &LabeledSegment, cfg: &FeatureConfig) -> FeatureVector {
    let mut values = vec![f64::NAN; N_FEATURES];
    let mut reasons = Vec::new();
    let biz = &segment.biz;

    let peaks = detect_r_peaks_with(&segment.ecg, &cfg.rpeak);
    let (mut n_cycles, mut n_valid) = (0, 0);
    let cycles = match &peaks {
        Ok(r) => detect_cycle_fiducials(biz, r),
        Err(e) => Err(e.clone()),
    };
    match cycles {
        Ok(cycles) => {
            n_cycles = cycles.len();
            let mut acc = vec![0.0; CYCLE_FEATURES];
            let mut first_reason = None;
            for c in &cycles {
                match cycle_features(c, biz) {
                    Ok(v) => {
                        n_valid += 1;
                        for (a, x) in acc.iter_mut().zip(v) {
                            *a += x;
                        }
                    }
                    Err(r) => {
                        first_reason.get_or_insert(r);
                    }
                }
            }
            if n_valid > 0 {
                for (slot, a) in values.iter_mut().zip(acc) {
                    *slot = a / n_valid as f64;
                }
            } else {
                let detail = first_reason.map(|r| format!("({r})")).unwrap_or_default();
                reasons.push(format!("NoValidCycles{detail}"));
            }
        }
        Err(e) => reasons.push(e.tag().to_string()),
    }

    match stat_features(&biz.values) {
        Ok((sd, skew, kurt)) => values[36..39].copy_from_slice(&[sd, skew, kurt]),
        Err(e) => reasons.push(e.tag().to_string()),
    }
    match entropy_features(&biz.values, cfg.entropy_m, cfg.entropy_r_fraction) {
        Ok((apen, sampen)) => values[39..41].copy_from_slice(&[apen, sampen]),
        Err(e) => reasons.push(e.tag().to_string()),
    }
    if let Ok(r) = &peaks {
        match heart_rate(r) {
            Ok(hr) => values[41] = hr,
            Err(e) => reasons.push(e.tag().to_string()),
        }
    }
    if reasons.is_empty() {
        if let Err(r) = check_invariants(&values) {
            reasons.push(format!("InvariantViolated({r})"));
        }
    }
    FeatureVector {
        values,
        invalid_reasons: reasons,
        n_cycles,
        n_valid_cycles: n_valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKind;

    #[test]
    fn names_are_unique_and_canonical() {
        let mut seen = std::collections::HashSet::new();
        assert!(FEATURE_NAMES.iter().all(|n| seen.insert(*n)));
        assert_eq!(feature_index("PTT_max"), Some(0));
        assert_eq!(feature_index("HId_max"), Some(30));
        assert_eq!(feature_index("SD"), Some(36));
        assert_eq!(feature_index("HR"), Some(41));
    }

    fn cycle(t_r: f64, dt_max: f64) -> CycleFiducials {
        CycleFiducials {
            t_r,
            t_r_next: t_r + 1.0,
            t_min: t_r + 0.1,
            t_max: t_r + dt_max,
            t_md: t_r + 0.18,
            t_min_next: t_r + 1.1,
            hi_max: 1.0,
            hi_min: 0.5,
            hi_md: 0.7,
            hi_min_next: 0.5,
            flags: vec![],
        }
    }

    #[test]
    fn ptt_plug_in_and_mean() {
        let (a, b, c) = ptt_features(&[cycle(1.0, 0.3)]).unwrap();
        assert!((a - 0.3).abs() < 1e-12 && (b - 0.1).abs() < 1e-12 && (c - 0.18).abs() < 1e-12);
        let (a, _, _) = ptt_features(&[cycle(1.0, 0.3), cycle(2.0, 0.32)]).unwrap();
        assert!((a - 0.31).abs() < 1e-12);
        let mut bad = cycle(1.0, 0.3);
        bad.flags.push(crate::fiducial::FiducialFlag::TimeOrdering);
        assert!(matches!(ptt_features(&[bad]), Err(FeatureError::NoValidCycles)));
    }

    #[test]
    fn flat_segment_is_invalid() {
        let flat = ProcessedSeries::new(vec![0.0; 4000], 500.0, 0.0, SeriesKind::BiozAbs);
        let seg = LabeledSegment {
            biz: flat,
            ecg: ProcessedSeries::new(vec![0.0; 4000], 500.0, 0.0, SeriesKind::Ecg),
            sbp_mmhg: 120.0,
            dbp_mmhg: 80.0,
            segment_index: 0,
            subject_id: "S".into(),
            trial_id: "T".into(),
        };
        let v = extract_all(&seg, &FeatureConfig::default());
        assert!(!v.is_valid());
        assert!(v.invalid_reasons.iter().any(|r| r == "NoPeaksFound"));
    }
}

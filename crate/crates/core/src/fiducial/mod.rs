//! ECG R-peak detection and per-cycle impedance fiducials.

mod cycle;
mod rpeak;

use thiserror::Error;

pub use cycle::{detect_cycle_fiducials, save_fiducials_csv, CycleFiducials, FiducialFlag};
pub use rpeak::{detect_r_peaks, detect_r_peaks_with, RPeakConfig};

#[derive(Debug, Clone, Error)]
pub enum FiducialError {
    #[error("series of {duration_s} s is too short; need at least {needed_s} s")]
    SeriesTooShort { duration_s: f64, needed_s: f64 },
    #[error("no R peaks found")]
    NoPeaksFound,
    #[error("need at least 2 R peaks, got {0}")]
    TooFewPeaks(usize),
    #[error("no cardiac cycle window lies inside the series")]
    EmptyCycleWindow,
    #[error("writing fiducials failed: {0}")]
    Io(String),
}

impl FiducialError {
    pub fn tag(&self) -> &'static str {
        match self {
            FiducialError::SeriesTooShort { .. } => "SeriesTooShort",
            FiducialError::NoPeaksFound => "NoPeaksFound",
            FiducialError::TooFewPeaks(_) => "TooFewPeaks",
            FiducialError::EmptyCycleWindow => "EmptyCycleWindow",
            FiducialError::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, FiducialError>;

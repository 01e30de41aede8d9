//! Band-pass filtering, Savitzky-Golay baseline handling and segmentation.

mod fir;
mod segment;
mod sg;

use thiserror::Error;

pub use fir::{apply_fir, design_fir, magnitude_response, FirMethod, FirSpec, FirWindow};
pub use segment::{segment, SegmentLabels, WindowSpec};
pub use sg::{apply_sg, savgol, SgMode, SgSpec};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("series of {len} samples is too short; need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid Savitzky-Golay spec: {0}")]
    InvalidSpec(String),
    #[error("series lasts {duration_s} s, shorter than the {window_s} s window")]
    SeriesShorterThanWindow { duration_s: f64, window_s: f64 },
    #[error("series are not aligned: {0}")]
    MisalignedSeries(String),
    #[error("invalid labels: sbp {sbp} / dbp {dbp}")]
    InvalidLabels { sbp: f64, dbp: f64 },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

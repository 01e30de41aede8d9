//! Cuff-less blood pressure estimation from brain bio-impedance and ECG.
//!
//! The crate covers the whole chain: carrier demodulation of raw
//! recordings ([`demod`]), band-pass and Savitzky-Golay preprocessing with
//! sliding-window segmentation ([`preprocess`]), R-peak and impedance
//! fiducial detection ([`fiducial`]), the 42-feature extractor
//! ([`features`]), feature ranking ([`featsel`]), four regressors
//! ([`regress`]) and a cross-validation harness with AAMI/BHS grading
//! ([`eval`]). [`synth`] produces recordings with exact ground truth so
//! each stage can be checked without hardware, and [`pipeline`] wires the
//! stages together under one serialisable configuration.

pub mod dataset;
pub mod demod;
pub mod eval;
pub mod featsel;
pub mod features;
pub mod fiducial;
pub mod pipeline;
pub mod preprocess;
pub mod regress;
pub mod synth;
pub mod util;

pub use dataset::{FeatureTable, LabeledSegment, ProcessedSeries, RawRecording, SeriesKind};
pub use pipeline::{PipelineConfig, PipelineError};

use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::dataset::{LabeledSegment, ProcessedSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_s: f64,
    pub overlap_fraction: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_s: 8.0,
            overlap_fraction: 0.75,
        }
    }
}

impl WindowSpec {
    /// Window and hop lengths in samples.
    pub fn lengths(&self, sample_rate_hz: f64) -> Result<(usize, usize)> {
        if !(self.window_s > 0.0) || !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(PreprocessError::InvalidSpec(format!(
                "window_s {} must be positive and overlap {} in [0, 1)",
                self.window_s, self.overlap_fraction
            )));
        }
        let window = (self.window_s * sample_rate_hz).round() as usize;
        let hop = ((self.window_s * (1.0 - self.overlap_fraction) * sample_rate_hz).round() as usize).max(1);
        if window == 0 {
            return Err(PreprocessError::InvalidSpec("window is shorter than one sample".into()));
        }
        Ok((window, hop))
    }
}

/// Trial-level identity and BP labels copied onto every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLabels {
    pub sbp_mmhg: f64,
    pub dbp_mmhg: f64,
    pub subject_id: String,
    pub trial_id: String,
}

/// Cuts aligned BIOZ and ECG series into overlapping windows.
///
/// Segment `k` covers samples `[k*hop, k*hop + window)`; a trailing
/// remainder shorter than one hop is dropped.
pub fn segment(
    biz: &ProcessedSeries,
    ecg: &ProcessedSeries,
    labels: &SegmentLabels,
    spec: &WindowSpec,
) -> Result<Vec<LabeledSegment>> {
    if biz.sample_rate_hz != ecg.sample_rate_hz {
        return Err(PreprocessError::MisalignedSeries(format!(
            "sample rates {} and {} differ",
            biz.sample_rate_hz, ecg.sample_rate_hz
        )));
    }
    if (biz.start_s - ecg.start_s).abs() * biz.sample_rate_hz > 1e-6 || biz.len() != ecg.len() {
        return Err(PreprocessError::MisalignedSeries(format!(
            "bioz starts at {} s with {} samples, ecg at {} s with {}",
            biz.start_s,
            biz.len(),
            ecg.start_s,
            ecg.len()
        )));
    }
    if !(labels.sbp_mmhg > labels.dbp_mmhg && labels.dbp_mmhg > 0.0) {
        return Err(PreprocessError::InvalidLabels {
            sbp: labels.sbp_mmhg,
            dbp: labels.dbp_mmhg,
        });
    }
    let (window, hop) = spec.lengths(biz.sample_rate_hz)?;
    if biz.len() < window {
        return Err(PreprocessError::SeriesShorterThanWindow {
            duration_s: biz.duration_s(),
            window_s: spec.window_s,
        });
    }
    let count = (biz.len() - window) / hop + 1;
    let step = format!(
        "segment(window_s={},overlap={})",
        spec.window_s, spec.overlap_fraction
    );
    Ok((0..count)
        .map(|k| LabeledSegment {
            biz: biz.slice(k * hop, window).with_step(step.clone()),
            ecg: ecg.slice(k * hop, window).with_step(step.clone()),
            sbp_mmhg: labels.sbp_mmhg,
            dbp_mmhg: labels.dbp_mmhg,
            segment_index: k,
            subject_id: labels.subject_id.clone(),
            trial_id: labels.trial_id.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKind;
    use proptest::prelude::*;

    fn pair(n: usize) -> (ProcessedSeries, ProcessedSeries) {
        let v: Vec<f64> = (0..n).map(|i| i as f64).collect();
        (
            ProcessedSeries::new(v.clone(), 500.0, 0.2, SeriesKind::BiozAbs),
            ProcessedSeries::new(v, 500.0, 0.2, SeriesKind::Ecg),
        )
    }

    fn labels() -> SegmentLabels {
        SegmentLabels {
            sbp_mmhg: 120.0,
            dbp_mmhg: 80.0,
            subject_id: "S1".into(),
            trial_id: "T1".into(),
        }
    }

    #[test]
    fn thirty_seconds_gives_twelve() {
        let (b, e) = pair(15_000);
        let segs = segment(&b, &e, &labels(), &WindowSpec::default()).unwrap();
        assert_eq!(segs.len(), 12);
        assert!(segs.iter().all(|s| s.biz.len() == 4000 && s.sbp_mmhg == 120.0));
        assert!((segs[3].biz.start_s - (0.2 + 6.0)).abs() < 1e-12);
        assert_eq!(segs[0].biz.log().len(), 1);
    }

    #[test]
    fn boundary_and_guard() {
        let (b, e) = pair(4000);
        assert_eq!(segment(&b, &e, &labels(), &WindowSpec::default()).unwrap().len(), 1);
        let (b, e) = pair(3950);
        assert!(matches!(
            segment(&b, &e, &labels(), &WindowSpec::default()),
            Err(PreprocessError::SeriesShorterThanWindow { .. })
        ));
    }

    #[test]
    fn misaligned_and_bad_labels() {
        let (b, mut e) = pair(5000);
        let bad = SegmentLabels { sbp_mmhg: 70.0, ..labels() };
        assert!(matches!(
            segment(&b, &e, &bad, &WindowSpec::default()),
            Err(PreprocessError::InvalidLabels { .. })
        ));
        e.start_s += 0.01;
        assert!(matches!(
            segment(&b, &e, &labels(), &WindowSpec::default()),
            Err(PreprocessError::MisalignedSeries(_))
        ));
    }

    proptest! {
        #[test]
        fn quarters_tile_the_source(extra in 0usize..3000, quarters in 0usize..8) {
            let n = 4000 + quarters * 1000 + extra;
            let (b, e) = pair(n);
            let segs = segment(&b, &e, &labels(), &WindowSpec::default()).unwrap();
            let mut rebuilt: Vec<f64> = segs.iter().flat_map(|s| s.biz.values[..1000].to_vec()).collect();
            rebuilt.extend_from_slice(&segs.last().unwrap().biz.values[1000..]);
            let covered = (segs.len() - 1) * 1000 + 4000;
            prop_assert_eq!(&rebuilt[..], &b.values[..covered]);
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{FiducialError, Result};
use crate::dataset::ProcessedSeries;
use crate::util::parabolic_vertex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RPeakConfig {
    pub integration_window_s: f64,
    pub refractory_s: f64,
    /// Half-width of the search on the ECG around each detection.
    pub localise_s: f64,
    pub min_duration_s: f64,
}

impl Default for RPeakConfig {
    fn default() -> Self {
        RPeakConfig {
            integration_window_s: 0.150,
            refractory_s: 0.250,
            localise_s: 0.100,
            min_duration_s: 2.0,
        }
    }
}

/// R-peak times (seconds, on the series' own clock), strictly increasing and
/// at least one refractory period apart.
///
/// Energy detector: five-point derivative, squared, centred moving-window
/// integration, then an adaptive signal/noise threshold with searchback
/// for missed beats. Each detection is moved to the ECG maximum within
/// `localise_s` and refined with a parabola through its neighbours.
pub fn detect_r_peaks(ecg: &ProcessedSeries) -> Result<Vec<f64>> {
    detect_r_peaks_with(ecg, &RPeakConfig::default())
}

pub fn detect_r_peaks_with(ecg: &ProcessedSeries, cfg: &RPeakConfig) -> Result<Vec<f64>> {
    let fs = ecg.sample_rate_hz;
    if ecg.duration_s() < cfg.min_duration_s {
        return Err(FiducialError::SeriesTooShort {
            duration_s: ecg.duration_s(),
            needed_s: cfg.min_duration_s,
        });
    }
    let x = &ecg.values;
    let n = x.len();
    let energy = integrate(&squared_derivative(x, fs), ((cfg.integration_window_s * fs).round() as usize) | 1);
    if energy.iter().all(|&e| e == 0.0) {
        return Err(FiducialError::NoPeaksFound);
    }

    let refractory = (cfg.refractory_s * fs).round() as usize;
    let learn = ((2.0 * fs) as usize).min(n);
    let mut spki = 0.25 * energy[..learn].iter().cloned().fold(0.0, f64::max);
    let mut npki = 0.5 * energy[..learn].iter().sum::<f64>() / learn as f64;
    let threshold = |s: f64, nz: f64| nz + 0.25 * (s - nz);

    let mut accepted: Vec<usize> = Vec::new();
    let mut pending_noise: Vec<usize> = Vec::new();
    let mut rr_history: Vec<usize> = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(energy[i] > energy[i - 1] && energy[i] >= energy[i + 1]) {
            continue;
        }
        let e = energy[i];
        if let Some(&last) = accepted.last() {
            if i - last < refractory {
                if e > energy[last] {
                    *accepted.last_mut().unwrap() = i;
                }
                continue;
            }
            // Searchback when the gap is much longer than the recent rhythm.
            if !rr_history.is_empty() {
                let mean_rr = rr_history.iter().sum::<usize>() as f64 / rr_history.len() as f64;
                if (i - last) as f64 > 1.66 * mean_rr {
                    let t2 = 0.5 * threshold(spki, npki);
                    if let Some(&best) = pending_noise
                        .iter()
                        .filter(|&&j| j - last >= refractory && i - j >= refractory && energy[j] > t2)
                        .max_by(|&&a, &&b| energy[a].total_cmp(&energy[b]))
                    {
                        spki = 0.25 * energy[best] + 0.75 * spki;
                        rr_history.push(best - last);
                        accepted.push(best);
                    }
                }
            }
        }
        if e > threshold(spki, npki) && accepted.last().is_none_or(|&l| i - l >= refractory) {
            spki = 0.125 * e + 0.875 * spki;
            if let Some(&last) = accepted.last() {
                rr_history.push(i - last);
                if rr_history.len() > 8 {
                    rr_history.remove(0);
                }
            }
            accepted.push(i);
            pending_noise.clear();
        } else {
            npki = 0.125 * e + 0.875 * npki;
            pending_noise.push(i);
        }
    }
    if accepted.is_empty() {
        return Err(FiducialError::NoPeaksFound);
    }

    let half = (cfg.localise_s * fs).round() as usize;
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(accepted.len());
    for &i in &accepted {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let j = crate::util::argmax(x, lo, hi);
        let (delta, value) = if j > 0 && j + 1 < n {
            parabolic_vertex(x[j - 1], x[j], x[j + 1])
        } else {
            (0.0, x[j])
        };
        let t = ecg.time_at(j) + delta / fs;
        match peaks.last_mut() {
            Some(prev) if t - prev.0 < cfg.refractory_s => {
                if value > prev.1 {
                    *prev = (t, value);
                }
            }
            _ => peaks.push((t, value)),
        }
    }
    Ok(peaks.into_iter().map(|(t, _)| t).collect())
}

fn squared_derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| {
            let d = (2.0 * at(i + 1) + at(i + 2) - at(i - 2) - 2.0 * at(i - 1)) * fs / 8.0;
            d * d
        })
        .collect()
}

fn integrate(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / width as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKind;

    fn qrs_train(times: &[f64], n: usize, fs: f64) -> ProcessedSeries {
        let v = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                times.iter().map(|&c| (-(t - c).powi(2) / (2.0 * 0.01f64.powi(2))).exp()).sum()
            })
            .collect();
        ProcessedSeries::new(v, fs, 0.0, SeriesKind::Ecg)
    }

    #[test]
    fn finds_regular_beats() {
        let times: Vec<f64> = (0..10).map(|k| 0.5 + 0.8 * k as f64 + 0.0007).collect();
        let s = qrs_train(&times, 4000, 500.0);
        let found = detect_r_peaks(&s).unwrap();
        assert_eq!(found.len(), times.len());
        for (a, b) in found.iter().zip(&times) {
            assert!((a - b).abs() < 5e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        let s = ProcessedSeries::new(vec![0.0; 2000], 500.0, 0.0, SeriesKind::Ecg);
        assert!(matches!(detect_r_peaks(&s), Err(FiducialError::NoPeaksFound)));
        let short = ProcessedSeries::new(vec![0.0; 500], 500.0, 0.0, SeriesKind::Ecg);
        assert!(matches!(detect_r_peaks(&short), Err(FiducialError::SeriesTooShort { .. })));
    }

    #[test]
    fn searchback_recovers_a_small_beat() {
        let times: Vec<f64> = (0..12).map(|k| 0.4 + 0.75 * k as f64).collect();
        let mut s = qrs_train(&times, 5000, 500.0);
        // shrink one beat far below the running threshold
        let c = (times[7] * 500.0) as usize;
        for v in &mut s.values[c - 30..c + 30] {
            *v *= 0.45;
        }
        let found = detect_r_peaks(&s).unwrap();
        assert_eq!(found.len(), times.len());
    }

    #[test]
    fn times_respect_refractory() {
        let times = [0.5, 0.6, 1.5, 2.5, 3.5];
        let s = qrs_train(&times, 2500, 500.0);
        let found = detect_r_peaks(&s).unwrap();
        for w in found.windows(2) {
            assert!(w[1] - w[0] >= 0.25);
        }
    }
}

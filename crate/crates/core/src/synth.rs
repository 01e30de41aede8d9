//! Synthetic recordings with exact ground truth.
//!
//! The brain-impedance pulse is a piecewise raised cosine: from each
//! cycle's minimum it rises over `systolic_fraction · RR` as
//! `(1 − cos πu)/2`, then decays as `(1 + cos πv)/2` until the next
//! cycle's minimum. Minimum, maximum and maximum-derivative instants are
//! therefore known in closed form. The impedance is held constant over each
//! demodulation block and the sense voltage is obtained by inverting the
//! divider relation, so noise-free demodulation recovers it to rounding
//! error. This is a test signal, not a physiological model.
//!
//! The ECG is a sum of gaussian P, Q, R, S and T waves per beat.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RawRecording, RecordingMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// `value = intercept − ptt_coef · PTT + hr_coef · HR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineLaw {
    pub intercept: f64,
    pub ptt_coef: f64,
    pub hr_coef: f64,
}

impl AffineLaw {
    pub fn eval(&self, ptt_s: f64, hr_bpm: f64) -> f64 {
        self.intercept - self.ptt_coef * ptt_s + self.hr_coef * hr_bpm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpLaw {
    pub sbp: AffineLaw,
    pub dbp: AffineLaw,
    /// Standard deviation of the gaussian label noise (mmHg).
    pub sigma_mmhg: f64,
}

impl Default for BpLaw {
    fn default() -> Self {
        BpLaw {
            sbp: AffineLaw {
                intercept: 150.0,
                ptt_coef: 100.0,
                hr_coef: 0.2,
            },
            dbp: AffineLaw {
                intercept: 90.0,
                ptt_coef: 60.0,
                hr_coef: 0.1,
            },
            sigma_mmhg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub heart_rate_bpm: f64,
    /// Uniform beat-to-beat RR variation, as a fraction of the mean RR.
    pub rr_jitter_fraction: f64,
    pub z_baseline_ohm: f64,
    pub delta_z_ohm: f64,
    /// Phase angle of the tissue impedance (0 = purely resistive).
    pub impedance_phase_rad: f64,
    /// Delay from each R peak to the following impedance minimum.
    pub ptt_s: f64,
    pub systolic_fraction: f64,
    pub respiration_amp_ohm: f64,
    pub respiration_freq_hz: f64,
    /// Carrier and ECG signal-to-noise ratio; `None` disables noise.
    pub noise_snr_db: Option<f64>,
    pub bp_law: BpLaw,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub excitation_freq_hz: f64,
    pub excitation_amp_v: f64,
    pub r0_ohm: f64,
    /// Block length the impedance is held constant over.
    pub n_block: usize,
    pub ecg_amp_v: f64,
    /// Carrier pick-up on the ECG lead.
    pub ecg_carrier_leak_v: f64,
    /// Time of the first R peak.
    pub first_beat_s: f64,
    pub subject_id: String,
    pub trial_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            heart_rate_bpm: 72.0,
            rr_jitter_fraction: 0.0,
            z_baseline_ohm: 50.0,
            delta_z_ohm: 32.0,
            impedance_phase_rad: 0.0,
            ptt_s: 0.12,
            systolic_fraction: 0.3,
            respiration_amp_ohm: 0.0,
            respiration_freq_hz: 0.25,
            noise_snr_db: None,
            bp_law: BpLaw::default(),
            seed: 0,
            sample_rate_hz: 100_000.0,
            excitation_freq_hz: 10_000.0,
            excitation_amp_v: 0.5,
            r0_ohm: 10_000.0,
            n_block: 200,
            ecg_amp_v: 1e-3,
            ecg_carrier_leak_v: 2e-4,
            first_beat_s: 0.25,
            subject_id: "SYN".into(),
            trial_id: "T00".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return bad(format!("heart rate {} bpm outside [30, 220]", self.heart_rate_bpm));
        }
        if !(self.delta_z_ohm >= 0.0) {
            return bad("delta_z_ohm must be non-negative".into());
        }
        if !(self.systolic_fraction > 0.0 && self.systolic_fraction < 1.0) {
            return bad("systolic_fraction must lie in (0, 1)".into());
        }
        if !(0.0..0.5).contains(&self.rr_jitter_fraction) {
            return bad("rr_jitter_fraction must lie in [0, 0.5)".into());
        }
        let rr = 60.0 / self.heart_rate_bpm;
        if !(self.ptt_s >= 0.0 && self.ptt_s < 0.5 * rr * (1.0 - self.rr_jitter_fraction)) {
            return bad(format!("ptt_s {} must lie in [0, RR/2)", self.ptt_s));
        }
        for (name, v) in [
            ("sample_rate_hz", self.sample_rate_hz),
            ("excitation_freq_hz", self.excitation_freq_hz),
            ("excitation_amp_v", self.excitation_amp_v),
            ("r0_ohm", self.r0_ohm),
            ("z_baseline_ohm", self.z_baseline_ohm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.sample_rate_hz / self.excitation_freq_hz < 4.0 {
            return bad("excitation must have at least 4 samples per period".into());
        }
        if self.n_block == 0 {
            return bad("n_block must be positive".into());
        }
        if self.z_baseline_ohm - self.respiration_amp_ohm.abs() <= 0.0 {
            return bad("respiration swing exceeds the baseline impedance".into());
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return bad("noise_snr_db must be finite (use None to disable noise)".into());
            }
        }
        Ok(())
    }
}

/// Exact fiducial instants and the noise-free impedance magnitude.
///
/// Fiducial times describe the pulse component; they are the true extrema
/// of `clean_impedance` when respiration is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub r_peak_times_s: Vec<f64>,
    pub biz_min_times_s: Vec<f64>,
    pub biz_max_times_s: Vec<f64>,
    pub biz_md_times_s: Vec<f64>,
    /// Beat-level minimum instant of the following cycle.
    pub biz_next_min_times_s: Vec<f64>,
    pub sbp_mmhg: f64,
    pub dbp_mmhg: f64,
    /// |Z| at each block centre.
    pub clean_impedance: Vec<f64>,
    pub clean_start_s: f64,
    pub clean_rate_hz: f64,
    pub mean_heart_rate_bpm: f64,
}

struct Beats {
    r: Vec<f64>,
}

impl Beats {
    fn new(cfg: &SynthConfig, duration_s: f64, rng: &mut ChaCha8Rng) -> Beats {
        let rr = 60.0 / cfg.heart_rate_bpm;
        let next_rr = |rng: &mut ChaCha8Rng| {
            if cfg.rr_jitter_fraction > 0.0 {
                rr * (1.0 + cfg.rr_jitter_fraction * rng.random_range(-1.0..=1.0))
            } else {
                rr
            }
        };
        // Two virtual beats before t=0 so the waveform is periodic from the start.
        let mut r = vec![cfg.first_beat_s - 2.0 * rr, cfg.first_beat_s - rr, cfg.first_beat_s];
        while *r.last().unwrap() < duration_s + 2.0 * rr {
            let last = *r.last().unwrap();
            r.push(last + next_rr(rng));
        }
        Beats { r }
    }

    /// Pulse value in [0, 1] at time `t`, plus the index of the beat whose
    /// cycle (minimum to next minimum) contains it.
    fn pulse(&self, t: f64, cfg: &SynthConfig) -> f64 {
        let ptt = cfg.ptt_s;
        // Last beat whose minimum is at or before t.
        let i = match self.r.partition_point(|&ri| ri + ptt <= t) {
            0 => return 0.0,
            k => k - 1,
        };
        if i + 1 >= self.r.len() {
            return 0.0;
        }
        let rr = self.r[i + 1] - self.r[i];
        let t_min = self.r[i] + ptt;
        let ts = cfg.systolic_fraction * rr;
        if t < t_min + ts {
            let u = (t - t_min) / ts;
            0.5 * (1.0 - (PI * u).cos())
        } else {
            let v = (t - t_min - ts) / (rr - ts);
            0.5 * (1.0 + (PI * v).cos())
        }
    }
}

fn impedance_abs(beats: &Beats, t: f64, cfg: &SynthConfig) -> f64 {
    cfg.z_baseline_ohm
        + cfg.delta_z_ohm * beats.pulse(t, cfg)
        + cfg.respiration_amp_ohm * (2.0 * PI * cfg.respiration_freq_hz * t).sin()
}

/// (centre offset in RR units or seconds, amplitude, width) of the ECG waves.
fn ecg_waves(rr: f64) -> [(f64, f64, f64); 5] {
    [
        (-0.2 * rr, 0.12, 0.025 * rr.min(1.0)),
        (-0.035, -0.10, 0.008),
        (0.0, 1.0, 0.010),
        (0.035, -0.20, 0.009),
        (0.35 * rr, 0.30, 0.05 * rr.min(1.0)),
    ]
}

fn add_ecg(ecg: &mut [f64], beats: &Beats, cfg: &SynthConfig) {
    let fs = cfg.sample_rate_hz;
    let n = ecg.len();
    for w in beats.r.windows(2) {
        let (r, rr) = (w[0], w[1] - w[0]);
        for (offset, amp, sigma) in ecg_waves(rr) {
            let centre = r + offset;
            let lo = ((centre - 6.0 * sigma) * fs).ceil().max(0.0) as usize;
            let hi = (((centre + 6.0 * sigma) * fs).floor().max(-1.0) + 1.0) as usize;
            let inv = 1.0 / (2.0 * sigma * sigma);
            for (i, e) in ecg.iter_mut().enumerate().take(hi.min(n)).skip(lo) {
                let d = i as f64 / fs - centre;
                *e += cfg.ecg_amp_v * amp * (-d * d * inv).exp();
            }
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Generates a recording of `duration_s` seconds and its ground truth.
pub fn generate(config: &SynthConfig, duration_s: f64) -> Result<(RawRecording, GroundTruth)> {
    config.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SynthError::InvalidConfig("duration must be positive".into()));
    }
    let fs = config.sample_rate_hz;
    let n = (duration_s * fs).round() as usize;
    let nb = config.n_block;
    if n < nb {
        return Err(SynthError::InvalidConfig("duration shorter than one block".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let beats = Beats::new(config, duration_s, &mut rng);

    // Impedance per block, evaluated at the block centre.
    let n_blocks_total = n.div_ceil(nb);
    let block_centre = |k: usize| (k as f64 * nb as f64 + (nb as f64 - 1.0) / 2.0) / fs;
    let z_abs: Vec<f64> = (0..n_blocks_total)
        .map(|k| impedance_abs(&beats, block_centre(k), config))
        .collect();

    // Divider: V_R = V_S / (1 + Z/R0).
    let (zs, zc) = config.impedance_phase_rad.sin_cos();
    let divider: Vec<(f64, f64)> = z_abs
        .iter()
        .map(|&z| {
            let (re, im) = (1.0 + z * zc / config.r0_ohm, z * zs / config.r0_ohm);
            (config.excitation_amp_v / re.hypot(im), im.atan2(re))
        })
        .collect();

    let w = 2.0 * PI * config.excitation_freq_hz / fs;
    let (tab_s, tab_c): (Vec<f64>, Vec<f64>) = (0..nb).map(|j| (w * j as f64).sin_cos()).unzip();
    let mut vs = vec![0.0; n];
    let mut vr = vec![0.0; n];
    for k in 0..n_blocks_total {
        let start = k * nb;
        let phase0 = (w * start as f64).rem_euclid(2.0 * PI);
        let (s0, c0) = phase0.sin_cos();
        let (amp_r, lag) = divider[k];
        let (sl, cl) = lag.sin_cos();
        for j in 0..nb.min(n - start) {
            let sin_w = s0 * tab_c[j] + c0 * tab_s[j];
            let cos_w = c0 * tab_c[j] - s0 * tab_s[j];
            vs[start + j] = config.excitation_amp_v * sin_w;
            vr[start + j] = amp_r * (sin_w * cl - cos_w * sl);
        }
    }

    let mut ecg = vec![0.0; n];
    add_ecg(&mut ecg, &beats, config);
    if config.ecg_carrier_leak_v != 0.0 {
        for (i, e) in ecg.iter_mut().enumerate() {
            *e += config.ecg_carrier_leak_v * (w * i as f64).sin();
        }
    }

    if let Some(snr_db) = config.noise_snr_db {
        let scale = 10f64.powf(-snr_db / 20.0);
        let levels = [config.excitation_amp_v / 2f64.sqrt(), rms(&vr), rms(&ecg)];
        for (stream, (chan, level)) in [&mut vs, &mut vr, &mut ecg].into_iter().zip(levels).enumerate() {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
            noise_rng.set_stream(stream as u64 + 1);
            let normal = Normal::new(0.0, level * scale).expect("finite sigma");
            for v in chan.iter_mut() {
                *v += normal.sample(&mut noise_rng);
            }
        }
    }

    let in_range: Vec<usize> = (0..beats.r.len() - 1)
        .filter(|&i| beats.r[i] >= 0.0 && beats.r[i] < duration_s)
        .collect();
    let r_peak_times_s: Vec<f64> = in_range.iter().map(|&i| beats.r[i]).collect();
    let mins: Vec<f64> = in_range.iter().map(|&i| beats.r[i] + config.ptt_s).collect();
    let ts: Vec<f64> = in_range
        .iter()
        .map(|&i| config.systolic_fraction * (beats.r[i + 1] - beats.r[i]))
        .collect();
    let mean_rr = if r_peak_times_s.len() >= 2 {
        (r_peak_times_s[r_peak_times_s.len() - 1] - r_peak_times_s[0]) / (r_peak_times_s.len() - 1) as f64
    } else {
        60.0 / config.heart_rate_bpm
    };
    let hr = 60.0 / mean_rr;
    let labels = bp_labels(config, &[config.ptt_s], &[hr]);

    let n_full_blocks = n / nb;
    let truth = GroundTruth {
        biz_max_times_s: mins.iter().zip(&ts).map(|(m, t)| m + t).collect(),
        biz_md_times_s: mins.iter().zip(&ts).map(|(m, t)| m + t / 2.0).collect(),
        biz_next_min_times_s: in_range.iter().map(|&i| beats.r[i + 1] + config.ptt_s).collect(),
        biz_min_times_s: mins,
        r_peak_times_s,
        sbp_mmhg: labels[0].0,
        dbp_mmhg: labels[0].1,
        clean_impedance: z_abs[..n_full_blocks].to_vec(),
        clean_start_s: block_centre(0),
        clean_rate_hz: fs / nb as f64,
        mean_heart_rate_bpm: hr,
    };
    let meta = RecordingMeta {
        sample_rate_hz: fs,
        excitation_freq_hz: config.excitation_freq_hz,
        r0_ohm: config.r0_ohm,
        subject_id: config.subject_id.clone(),
        trial_id: config.trial_id.clone(),
    };
    let rec = RawRecording::new(vs, vr, ecg, meta)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    Ok((rec, truth))
}

/// Applies the configured BP law to each (PTT, HR) row, adding seeded
/// gaussian noise. Identical inputs and seed give identical labels.
pub fn bp_labels(config: &SynthConfig, ptt_s: &[f64], hr_bpm: &[f64]) -> Vec<(f64, f64)> {
    let law = &config.bp_law;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0xB9);
    let noise = Normal::new(0.0, law.sigma_mmhg.max(0.0)).expect("finite sigma");
    ptt_s
        .iter()
        .zip(hr_bpm)
        .map(|(&p, &h)| {
            let (ns, nd) = if law.sigma_mmhg > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            (law.sbp.eval(p, h) + ns, law.dbp.eval(p, h) + nd)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demod::{demodulate, DemodConfig};

    #[test]
    fn zero_modulation_gives_constant_impedance() {
        let cfg = SynthConfig {
            delta_z_ohm: 0.0,
            ..SynthConfig::default()
        };
        let (rec, _) = generate(&cfg, 2.0).unwrap();
        let d = demodulate(&rec, &DemodConfig::default()).unwrap();
        for z in d.biz_abs.values {
            assert!((z - 50.0).abs() < 1e-9, "{z}");
        }
    }

    #[test]
    fn beat_count_matches_rate() {
        let cfg = SynthConfig {
            heart_rate_bpm: 60.0,
            ..SynthConfig::default()
        };
        let (_, gt) = generate(&cfg, 30.0).unwrap();
        assert!((29..=31).contains(&gt.r_peak_times_s.len()));
    }

    #[test]
    fn noise_free_closure_and_delta_z() {
        let cfg = SynthConfig::default();
        let (rec, gt) = generate(&cfg, 5.0).unwrap();
        let d = demodulate(&rec, &DemodConfig::default()).unwrap();
        assert_eq!(d.biz_abs.len(), gt.clean_impedance.len());
        assert!((d.biz_abs.start_s - gt.clean_start_s).abs() < 1e-15);
        let err = d
            .biz_abs
            .values
            .iter()
            .zip(&gt.clean_impedance)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
        // Peak-to-trough of the analytic pulse is exactly delta_z.
        let lo = 50.0;
        let hi = lo + cfg.delta_z_ohm;
        let z = |t: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            impedance_abs(&Beats::new(&cfg, 5.0, &mut rng), t, &cfg)
        };
        assert!((z(gt.biz_min_times_s[1]) - lo).abs() < 1e-6);
        assert!((z(gt.biz_max_times_s[1]) - hi).abs() < 1e-6);
    }

    #[test]
    fn ground_truth_ordering() {
        let cfg = SynthConfig {
            rr_jitter_fraction: 0.1,
            seed: 5,
            ..SynthConfig::default()
        };
        let (_, gt) = generate(&cfg, 10.0).unwrap();
        for i in 0..gt.r_peak_times_s.len() {
            assert!(gt.r_peak_times_s[i] < gt.biz_min_times_s[i]);
            assert!(gt.biz_min_times_s[i] < gt.biz_md_times_s[i]);
            assert!(gt.biz_md_times_s[i] < gt.biz_max_times_s[i]);
            assert!(gt.biz_max_times_s[i] < gt.biz_next_min_times_s[i]);
        }
    }

    #[test]
    fn seed_determinism() {
        let cfg = SynthConfig {
            noise_snr_db: Some(30.0),
            rr_jitter_fraction: 0.05,
            seed: 42,
            ..SynthConfig::default()
        };
        let (a, ga) = generate(&cfg, 1.0).unwrap();
        let (b, gb) = generate(&cfg, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, _) = generate(&SynthConfig { seed: 43, ..cfg }, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                heart_rate_bpm: 250.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                systolic_fraction: 1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                delta_z_ohm: -1.0,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate(&cfg, 5.0), Err(SynthError::InvalidConfig(_))));
        }
    }

    #[test]
    fn label_law_plug_in() {
        let cfg = SynthConfig {
            bp_law: BpLaw {
                sbp: AffineLaw {
                    intercept: 150.0,
                    ptt_coef: 100.0,
                    hr_coef: 0.0,
                },
                sigma_mmhg: 0.0,
                ..BpLaw::default()
            },
            ..SynthConfig::default()
        };
        let l = bp_labels(&cfg, &[0.25, 0.25], &[70.0, 70.0]);
        assert_eq!(l[0].0, 125.0);
        assert_eq!(l[0], l[1]);
    }

    #[test]
    fn label_noise_sd() {
        let cfg = SynthConfig {
            seed: 3,
            ..SynthConfig::default()
        };
        let n = 10_000;
        let ptt = vec![0.1; n];
        let hr = vec![70.0; n];
        let exact = cfg.bp_law.sbp.eval(0.1, 70.0);
        let l = bp_labels(&cfg, &ptt, &hr);
        let res: Vec<f64> = l.iter().map(|(s, _)| s - exact).collect();
        let mean = res.iter().sum::<f64>() / n as f64;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 2.0).abs() < 0.05, "sd {sd}");
    }
}

//! Carrier demodulation: raw excitation/sense voltages to a complex
//! impedance series, plus block averaging of the ECG channel.
//!
//! Each block of `n_block` raw samples is fitted by linear least squares to
//! `c + p·sin(ωt) + q·cos(ωt)`, giving amplitude `hypot(p, q)` and phase
//! `atan2(q, p)` for both channels. The series impedance then follows from
//! the voltage-divider relation
//!
//! ```text
//! Z = (A_S / A_R · e^{j(φ_S − φ_R)} − 1) · R0
//! ```
//!
//! The fit is exact for any phase, any DC offset and any (non-aliased)
//! carrier frequency, whether or not the block holds a whole number of
//! periods.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ProcessedSeries, RawRecording, SeriesKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemodError {
    #[error("block {block_index}: {channel} has no carrier component")]
    DegenerateBlock { block_index: usize, channel: &'static str },
    #[error("excitation {excitation_hz} Hz is aliased at sample rate {sample_rate_hz} Hz")]
    AliasedExcitation { excitation_hz: f64, sample_rate_hz: f64 },
    #[error("block of {n_block} samples is too short: {reason}")]
    BlockTooShort { n_block: usize, reason: String },
    #[error("input blocks have different lengths ({vs} vs {vr})")]
    LengthMismatch { vs: usize, vr: usize },
}

pub type Result<T> = std::result::Result<T, DemodError>;

/// Amplitude and phase of the excitation (`s`) and sense (`r`) voltages
/// within one block. Phases lie in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub a_s: f64,
    pub phi_s: f64,
    pub a_r: f64,
    pub phi_r: f64,
    pub block_index: usize,
}

impl BlockEstimate {
    pub fn phase_difference(&self) -> f64 {
        wrap_phase(self.phi_s - self.phi_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexImpedance {
    pub real_ohm: f64,
    pub imag_ohm: f64,
    pub abs_ohm: f64,
}

/// Maps an angle into (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Precomputed least-squares projector for one block length and carrier.
#[derive(Debug, Clone)]
pub struct SinusoidFitter {
    sin: Vec<f64>,
    cos: Vec<f64>,
    gram_inv: Matrix3<f64>,
}

impl SinusoidFitter {
    pub fn new(n: usize, excitation_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(excitation_hz > 0.0 && excitation_hz < sample_rate_hz / 2.0) {
            return Err(DemodError::AliasedExcitation {
                excitation_hz,
                sample_rate_hz,
            });
        }
        let samples_per_period = sample_rate_hz / excitation_hz;
        if (n as f64) < samples_per_period || n < 4 {
            return Err(DemodError::BlockTooShort {
                n_block: n,
                reason: format!("needs at least one carrier period ({samples_per_period:.3} samples)"),
            });
        }
        let w = 2.0 * PI * excitation_hz / sample_rate_hz;
        let (sin, cos): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (w * i as f64).sin_cos()).unzip();
        let mut gram = Matrix3::zeros();
        for i in 0..n {
            let b = Vector3::new(sin[i], cos[i], 1.0);
            gram += b * b.transpose();
        }
        let gram_inv = gram.try_inverse().ok_or_else(|| DemodError::BlockTooShort {
            n_block: n,
            reason: "carrier basis is singular over the block".into(),
        })?;
        Ok(SinusoidFitter { sin, cos, gram_inv })
    }

    pub fn len(&self) -> usize {
        self.sin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sin.is_empty()
    }

    /// Returns `(amplitude, phase, offset)` of the best-fitting sinusoid.
    pub fn fit(&self, block: &[f64]) -> (f64, f64, f64) {
        debug_assert_eq!(block.len(), self.sin.len());
        let (mut ps, mut pc, mut p1) = (0.0, 0.0, 0.0);
        for ((&x, &s), &c) in block.iter().zip(&self.sin).zip(&self.cos) {
            ps += x * s;
            pc += x * c;
            p1 += x;
        }
        let coef = self.gram_inv * Vector3::new(ps, pc, p1);
        let amplitude = coef[0].hypot(coef[1]);
        let phase = wrap_phase(coef[1].atan2(coef[0]));
        (amplitude, phase, coef[2])
    }

    fn estimate(&self, vs: &[f64], vr: &[f64], block_index: usize) -> Result<BlockEstimate> {
        let (a_s, phi_s, _) = self.fit(vs);
        let (a_r, phi_r, _) = self.fit(vr);
        for (channel, a, x) in [("vs", a_s, vs), ("vr", a_r, vr)] {
            let flat = x.iter().all(|&v| v == x[0]);
            if flat || !(a > f64::MIN_POSITIVE) {
                return Err(DemodError::DegenerateBlock { block_index, channel });
            }
        }
        Ok(BlockEstimate {
            a_s,
            phi_s,
            a_r,
            phi_r,
            block_index,
        })
    }
}

/// Fits amplitude and phase of both channels over one block.
pub fn estimate_block(vs_block: &[f64], vr_block: &[f64], f_exc: f64, fs: f64) -> Result<BlockEstimate> {
    if vs_block.len() != vr_block.len() {
        return Err(DemodError::LengthMismatch {
            vs: vs_block.len(),
            vr: vr_block.len(),
        });
    }
    SinusoidFitter::new(vs_block.len(), f_exc, fs)?.estimate(vs_block, vr_block, 0)
}

/// Evaluates the divider relation with complex arithmetic.
pub fn impedance_from_block(b: &BlockEstimate, r0: f64) -> ComplexImpedance {
    let ratio = b.a_s / b.a_r;
    let (s, c) = (b.phi_s - b.phi_r).sin_cos();
    let real_ohm = (ratio * c - 1.0) * r0;
    let imag_ohm = ratio * s * r0;
    ComplexImpedance {
        real_ohm,
        imag_ohm,
        abs_ohm: real_ohm.hypot(imag_ohm),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemodConfig {
    pub n_block: usize,
    /// Overrides the excitation frequency recorded in the file.
    pub excitation_freq_hz: Option<f64>,
}

impl Default for DemodConfig {
    fn default() -> Self {
        DemodConfig {
            n_block: 200,
            excitation_freq_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub biz_abs: ProcessedSeries,
    pub biz_real: ProcessedSeries,
    pub biz_imag: ProcessedSeries,
    pub ecg: ProcessedSeries,
    pub blocks: Vec<BlockEstimate>,
    /// Raw samples discarded at the tail (fewer than one block).
    pub dropped_samples: usize,
}

impl Demodulated {
    pub fn series(&self, kind: SeriesKind) -> &ProcessedSeries {
        match kind {
            SeriesKind::BiozAbs => &self.biz_abs,
            SeriesKind::BiozReal => &self.biz_real,
            SeriesKind::BiozImag => &self.biz_imag,
            SeriesKind::Ecg => &self.ecg,
        }
    }
}

/// Demodulates a full recording, one output sample per `n_block` raw
/// samples. Output sample `k` is stamped at the centre of its block.
pub fn demodulate(rec: &RawRecording, config: &DemodConfig) -> Result<Demodulated> {
    let meta = rec.meta();
    let fs = meta.sample_rate_hz;
    let f_exc = config.excitation_freq_hz.unwrap_or(meta.excitation_freq_hz);
    let n = config.n_block;
    if n == 0 || rec.len() < n {
        return Err(DemodError::BlockTooShort {
            n_block: n,
            reason: format!("recording holds only {} samples", rec.len()),
        });
    }
    let fitter = SinusoidFitter::new(n, f_exc, fs)?;
    let n_blocks = rec.len() / n;
    let dropped = rec.len() - n_blocks * n;
    if dropped > 0 {
        log::warn!("demodulate: dropping {dropped} trailing samples (partial block)");
    }

    let blocks = (0..n_blocks)
        .into_par_iter()
        .map(|k| {
            let r = k * n..(k + 1) * n;
            fitter.estimate(&rec.vs()[r.clone()], &rec.vr()[r], k)
        })
        .collect::<Result<Vec<_>>>()?;

    let z: Vec<ComplexImpedance> = blocks
        .iter()
        .map(|b| impedance_from_block(b, meta.r0_ohm))
        .collect();
    let ecg: Vec<f64> = rec
        .ecg()
        .chunks_exact(n)
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();

    let out_rate = fs / n as f64;
    let start_s = (n as f64 - 1.0) / (2.0 * fs);
    let step = format!("demod(n_block={n},f_exc_hz={f_exc},r0_ohm={})", meta.r0_ohm);
    let mk = |values: Vec<f64>, kind| {
        ProcessedSeries::new(values, out_rate, start_s, kind).with_step(step.clone())
    };
    Ok(Demodulated {
        biz_abs: mk(z.iter().map(|c| c.abs_ohm).collect(), SeriesKind::BiozAbs),
        biz_real: mk(z.iter().map(|c| c.real_ohm).collect(), SeriesKind::BiozReal),
        biz_imag: mk(z.iter().map(|c| c.imag_ohm).collect(), SeriesKind::BiozImag),
        ecg: mk(ecg, SeriesKind::Ecg).with_step(format!("block_mean(n_block={n})")),
        blocks,
        dropped_samples: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RecordingMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    const FS: f64 = 100_000.0;
    const FE: f64 = 10_000.0;

    fn tone(n: usize, amp: f64, phase: f64, offset: f64, start: usize) -> Vec<f64> {
        (start..start + n)
            .map(|i| offset + amp * (2.0 * PI * FE * i as f64 / FS + phase).sin())
            .collect()
    }

    #[test]
    fn exact_sinusoid_fit() {
        let b = estimate_block(&tone(200, 0.5, 0.0, 0.0, 0), &tone(200, 0.25, 0.0, 0.0, 0), FE, FS).unwrap();
        assert!((b.a_s - 0.5).abs() < 1e-9);
        assert!((b.a_r - 0.25).abs() < 1e-9);
        assert!(b.phase_difference().abs() < 1e-9);
    }

    #[test]
    fn fit_ignores_dc_and_fractional_periods() {
        // 10 kHz at 96 kHz over 150 samples holds 15.625 periods.
        let fs = 96_000.0;
        let vs: Vec<f64> = (0..150)
            .map(|i| 0.3 + 0.8 * (2.0 * PI * FE * i as f64 / fs + 1.1).sin())
            .collect();
        let vr: Vec<f64> = (0..150)
            .map(|i| -0.1 + 0.4 * (2.0 * PI * FE * i as f64 / fs + 0.6).sin())
            .collect();
        let b = estimate_block(&vs, &vr, FE, fs).unwrap();
        assert!((b.a_s - 0.8).abs() < 1e-9 && (b.a_r - 0.4).abs() < 1e-9);
        assert!((b.phi_s - 1.1).abs() < 1e-9 && (b.phi_r - 0.6).abs() < 1e-9);
    }

    #[test]
    fn zero_sense_channel_is_degenerate() {
        let err = estimate_block(&tone(200, 0.5, 0.0, 0.0, 0), &[0.0; 200], FE, FS).unwrap_err();
        assert_eq!(
            err,
            DemodError::DegenerateBlock {
                block_index: 0,
                channel: "vr"
            }
        );
    }

    #[test]
    fn aliased_and_short_blocks_rejected() {
        assert!(matches!(
            estimate_block(&[1.0; 200], &[1.0; 200], 60_000.0, FS),
            Err(DemodError::AliasedExcitation { .. })
        ));
        assert!(matches!(
            estimate_block(&[1.0; 5], &[1.0; 5], FE, FS),
            Err(DemodError::BlockTooShort { .. })
        ));
    }

    #[test]
    fn noisy_block_amplitude_error_below_one_percent() {
        // 40 dB SNR: noise variance = (A^2/2) / 1e4.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phase = Uniform::new(-PI, PI).unwrap();
        let amp = 0.5;
        let noise = Normal::new(0.0, (amp * amp / 2.0 / 1e4_f64).sqrt()).unwrap();
        let mut sq = 0.0;
        for _ in 0..1000 {
            let p = phase.sample(&mut rng);
            let vs: Vec<f64> = tone(200, amp, p, 0.0, 0)
                .into_iter()
                .map(|v| v + noise.sample(&mut rng))
                .collect();
            let vr = tone(200, amp / 2.0, p, 0.0, 0);
            let b = estimate_block(&vs, &vr, FE, FS).unwrap();
            sq += (b.a_s - amp).powi(2);
        }
        let rms = (sq / 1000.0).sqrt();
        assert!(rms < 0.01 * amp, "rms amplitude error {rms}");
    }

    #[test]
    fn divider_relation_cases() {
        let b = |ratio: f64, dphi: f64| BlockEstimate {
            a_s: ratio,
            phi_s: dphi,
            a_r: 1.0,
            phi_r: 0.0,
            block_index: 0,
        };
        let z = impedance_from_block(&b(2.0, 0.0), 10_000.0);
        assert_eq!((z.real_ohm, z.imag_ohm, z.abs_ohm), (10_000.0, 0.0, 10_000.0));
        let z = impedance_from_block(&b(1.0, 0.0), 10_000.0);
        assert_eq!((z.real_ohm, z.imag_ohm, z.abs_ohm), (0.0, 0.0, 0.0));

        // Independent route: explicit complex multiply/subtract.
        let (ratio, dphi, r0) = (1.01_f64, 0.02_f64, 10_000.0);
        let (re, im) = (ratio * dphi.cos(), ratio * dphi.sin());
        let (re, im) = ((re - 1.0) * r0, im * r0);
        let z = impedance_from_block(&b(ratio, dphi), r0);
        assert!((z.real_ohm - re).abs() <= 1e-12 * re.abs().max(1.0));
        assert!((z.imag_ohm - im).abs() <= 1e-12 * im.abs().max(1.0));
        assert!((z.abs_ohm - (re * re + im * im).sqrt()).abs() <= 1e-12 * z.abs_ohm);
    }

    #[test]
    fn linear_in_r0() {
        let b = BlockEstimate {
            a_s: 1.3,
            phi_s: 0.4,
            a_r: 0.9,
            phi_r: -0.2,
            block_index: 0,
        };
        let z1 = impedance_from_block(&b, 5_000.0);
        let z2 = impedance_from_block(&b, 10_000.0);
        assert!((z2.real_ohm - 2.0 * z1.real_ohm).abs() < 1e-9);
        assert!((z2.imag_ohm - 2.0 * z1.imag_ohm).abs() < 1e-9);
        assert!((z2.abs_ohm - 2.0 * z1.abs_ohm).abs() < 1e-9);
    }

    #[test]
    fn delay_leaves_amplitudes_and_phase_difference() {
        let vs = tone(400, 0.7, 0.3, 0.0, 0);
        let vr = tone(400, 0.2, -0.5, 0.0, 0);
        let b0 = estimate_block(&vs[..200], &vr[..200], FE, FS).unwrap();
        for k in [1, 3, 7, 13, 50] {
            let b = estimate_block(&vs[k..k + 200], &vr[k..k + 200], FE, FS).unwrap();
            assert!((b.a_s - b0.a_s).abs() < 1e-9);
            assert!((b.a_r - b0.a_r).abs() < 1e-9);
            assert!((b.phase_difference() - b0.phase_difference()).abs() < 1e-9);
        }
    }

    #[test]
    fn block_counts_and_ecg_mean() {
        let n = 3000 + 17;
        let meta = RecordingMeta::default();
        let rec = RawRecording::new(tone(n, 0.5, 0.0, 0.0, 0), tone(n, 0.4, 0.0, 0.0, 0), vec![1.0; n], meta)
            .unwrap();
        let d = demodulate(&rec, &DemodConfig::default()).unwrap();
        assert_eq!(d.biz_abs.len(), 15);
        assert_eq!(d.dropped_samples, 17);
        assert_eq!(d.biz_abs.sample_rate_hz, 500.0);
        assert!(d.ecg.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        // ratio 1.25 -> Z = 0.25 * R0
        assert!(d.biz_abs.values.iter().all(|&z| (z - 2500.0).abs() < 1e-6));
        assert_eq!(d.ecg.log().len(), 2);
    }

    #[test]
    fn abs_dominates_components() {
        // Independent real/imag modulation built directly from the divider relation.
        let n_blocks = 50;
        let n = 200;
        let r0 = 10_000.0;
        let mut vs = Vec::new();
        let mut vr = Vec::new();
        for k in 0..n_blocks {
            let re = 40.0 + 13.0 * (k as f64 * 0.3).sin();
            let im = -20.0 + 23.0 * (k as f64 * 0.11).cos();
            let (dr, di) = (1.0 + re / r0, im / r0);
            let mag = dr.hypot(di);
            let ph = di.atan2(dr);
            for i in k * n..(k + 1) * n {
                let w = 2.0 * PI * FE * i as f64 / FS;
                vs.push(0.5 * w.sin());
                vr.push(0.5 / mag * (w - ph).sin());
            }
        }
        let rec = RawRecording::new(vs, vr, vec![0.0; n_blocks * n], RecordingMeta::default()).unwrap();
        let d = demodulate(&rec, &DemodConfig::default()).unwrap();
        let amp = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        for k in 0..n_blocks {
            let z = d.biz_abs.values[k];
            assert!(z >= d.biz_real.values[k].abs() - 1e-9 && z >= d.biz_imag.values[k].abs() - 1e-9);
        }
        assert!(amp(&d.biz_abs.values) > 0.0);
    }
}

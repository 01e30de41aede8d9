use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::dataset::ProcessedSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirWindow {
    Hamming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirMethod {
    /// Weighted least-squares fit to the ideal band-pass, followed by a
    /// window-shaped DC null.
    LeastSquares,
    /// Classic windowed sinc (difference of two low-passes).
    WindowedSinc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirSpec {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub window: FirWindow,
    pub method: FirMethod,
    pub sample_rate_hz: f64,
}

impl Default for FirSpec {
    fn default() -> Self {
        FirSpec {
            order: 1000,
            low_hz: 0.5,
            high_hz: 10.0,
            window: FirWindow::Hamming,
            method: FirMethod::LeastSquares,
            sample_rate_hz: 500.0,
        }
    }
}

impl FirSpec {
    fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyq) {
            return Err(PreprocessError::InvalidBand(format!(
                "need 0 < low ({}) < high ({}) < fs/2 ({nyq})",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(PreprocessError::InvalidBand(format!(
                "order {} must be positive and even",
                self.order
            )));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!(
            "fir(order={},low_hz={},high_hz={},method={:?},window={:?})",
            self.order, self.low_hz, self.high_hz, self.method, self.window
        )
        .to_lowercase()
    }
}

fn window(kind: FirWindow, len: usize) -> Vec<f64> {
    match kind {
        // evaluated on the nearer half so the window is exactly symmetric
        FirWindow::Hamming => (0..len)
            .map(|n| {
                let k = n.min(len - 1 - n);
                0.54 - 0.46 * (2.0 * PI * k as f64 / (len - 1) as f64).cos()
            })
            .collect(),
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Designs a linear-phase band-pass with `order + 1` symmetric taps.
pub fn design_fir(spec: &FirSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let taps = match spec.method {
        FirMethod::WindowedSinc => windowed_sinc(spec),
        FirMethod::LeastSquares => least_squares(spec)?,
    };
    Ok(taps)
}

fn windowed_sinc(spec: &FirSpec) -> Vec<f64> {
    let m = spec.order / 2;
    let (f1, f2) = (spec.low_hz / spec.sample_rate_hz, spec.high_hz / spec.sample_rate_hz);
    let w = window(spec.window, spec.order + 1);
    (0..=spec.order)
        .map(|n| {
            let k = n as f64 - m as f64;
            w[n] * (2.0 * f2 * sinc(2.0 * f2 * k) - 2.0 * f1 * sinc(2.0 * f1 * k))
        })
        .collect()
}

const TRANSITION_WEIGHT: f64 = 1e-3;

/// Desired response ramps linearly from `from` at `lo` to `to` at `hi`.
struct Band {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
    weight: f64,
}

fn least_squares(spec: &FirSpec) -> Result<Vec<f64>> {
    let fs = spec.sample_rate_hz;
    let nyq = fs / 2.0;
    let (low, high) = (spec.low_hz, spec.high_hz);
    let mid = 0.5 * (low + high);
    let stop_lo = 0.1 * low;
    let pass_lo = (2.0 * low).min(mid);
    let pass_hi = (0.9 * high).max(mid);
    let stop_hi = (high + (high - pass_hi)).min(nyq);
    let flat = |lo, hi, level, weight| Band { lo, hi, from: level, to: level, weight };
    let mut bands = vec![
        flat(0.0, stop_lo, 0.0, 10.0),
        Band { lo: stop_lo, hi: pass_lo, from: 0.0, to: 1.0, weight: TRANSITION_WEIGHT },
        flat(pass_lo, pass_hi, 1.0, 1.0),
        Band { lo: pass_hi, hi: stop_hi, from: 1.0, to: 0.0, weight: TRANSITION_WEIGHT },
    ];
    if stop_hi < nyq {
        bands.push(flat(stop_hi, nyq, 0.0, 10.0));
    }

    // Amplitude response H(f) = sum_k a_k cos(2 pi f k / fs), a_0 = h[M], a_k = 2 h[M ± k].
    let m = spec.order / 2;
    let omega = 2.0 * PI / fs;
    // integral of cos(j * omega * f) over one band
    let integral = |j: usize, band: &Band| -> f64 {
        if j == 0 {
            band.hi - band.lo
        } else {
            let a = j as f64 * omega;
            ((a * band.hi).sin() - (a * band.lo).sin()) / a
        }
    };
    // integral of (f - lo) / (hi - lo) * cos(j * omega * f) over one band
    let ramp_integral = |j: usize, band: &Band| -> f64 {
        let width = band.hi - band.lo;
        if j == 0 {
            return 0.5 * width;
        }
        let a = j as f64 * omega;
        let anti = |f: f64| (f - band.lo) * (a * f).sin() / a + (a * f).cos() / (a * a);
        (anti(band.hi) - anti(band.lo)) / width
    };
    let mut gram_terms = vec![0.0; 2 * m + 1];
    let mut rhs = DVector::zeros(m + 1);
    for band in &bands {
        for (j, g) in gram_terms.iter_mut().enumerate() {
            *g += band.weight * integral(j, band);
        }
        for k in 0..=m {
            let desired = band.from * integral(k, band) + (band.to - band.from) * ramp_integral(k, band);
            rhs[k] += band.weight * desired;
        }
    }
    let gram = DMatrix::from_fn(m + 1, m + 1, |k, l| {
        0.5 * (gram_terms[k.abs_diff(l)] + gram_terms[k + l])
    });
    let a = gram
        .cholesky()
        .ok_or_else(|| PreprocessError::InvalidBand("least-squares system is not positive definite".into()))?
        .solve(&rhs);

    let mut taps = vec![0.0; spec.order + 1];
    taps[m] = a[0];
    for k in 1..=m {
        taps[m + k] = 0.5 * a[k];
        taps[m - k] = 0.5 * a[k];
    }
    // Null the DC gain exactly with a window-shaped correction; the window's
    // spectrum is concentrated well below the pass band.
    let w = window(spec.window, spec.order + 1);
    let (dc, wsum) = (taps.iter().sum::<f64>(), w.iter().sum::<f64>());
    for (t, wv) in taps.iter_mut().zip(&w) {
        *t -= dc * wv / wsum;
    }
    // Re-impose exact symmetry lost to rounding in the correction.
    for k in 1..=m {
        let avg = 0.5 * (taps[m + k] + taps[m - k]);
        taps[m + k] = avg;
        taps[m - k] = avg;
    }
    Ok(taps)
}

/// |H(f)| of `taps` at each frequency, by direct evaluation of the DTFT.
pub fn magnitude_response(taps: &[f64], sample_rate_hz: f64, freqs_hz: &[f64]) -> Vec<f64> {
    freqs_hz
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f / sample_rate_hz;
            let (mut re, mut im) = (0.0, 0.0);
            for (k, &h) in taps.iter().enumerate() {
                let (s, c) = (w * k as f64).sin_cos();
                re += h * c;
                im -= h * s;
            }
            re.hypot(im)
        })
        .collect()
}

/// Zero-phase filtering of a whole series.
///
/// The input is reflect-padded by `order/2` samples on each side (mirror
/// about the end samples, which are not repeated), convolved with the
/// symmetric taps, and the group delay of `order/2` samples is removed, so
/// the output is aligned with the input and has the same length.
pub fn apply_fir(series: &ProcessedSeries, taps: &[f64]) -> Result<ProcessedSeries> {
    let values = filter_zero_phase(&series.values, taps)?;
    let order = taps.len() - 1;
    Ok(series
        .map_values(values)
        .with_step(format!("fir_apply(taps={},delay_comp={})", taps.len(), order / 2)))
}

pub(crate) fn filter_zero_phase(x: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if taps.is_empty() || taps.len().is_multiple_of(2) {
        return Err(PreprocessError::InvalidBand("taps must have odd length".into()));
    }
    if n <= taps.len() {
        return Err(PreprocessError::SeriesTooShort {
            len: n,
            needed: taps.len() + 1,
        });
    }
    let m = taps.len() / 2;
    let padded: Vec<f64> = (0..n + 2 * m)
        .map(|i| {
            let j = i as isize - m as isize;
            let j = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            x[j as usize]
        })
        .collect();
    let full = fft_convolve(&padded, taps);
    Ok(full[2 * m..2 * m + n].to_vec())
}

fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::dataset::ProcessedSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgSpec {
    pub poly_order: usize,
    pub window_len: usize,
}

impl Default for SgSpec {
    fn default() -> Self {
        SgSpec {
            poly_order: 3,
            window_len: 10001,
        }
    }
}

impl SgSpec {
    fn validate(&self) -> Result<()> {
        if self.window_len.is_multiple_of(2) {
            return Err(PreprocessError::InvalidSpec(format!(
                "window_len {} must be odd",
                self.window_len
            )));
        }
        if self.poly_order >= self.window_len {
            return Err(PreprocessError::InvalidSpec(format!(
                "poly_order {} must be below window_len {}",
                self.poly_order, self.window_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgMode {
    Smooth,
    Detrend,
}

/// Savitzky-Golay filter; `Detrend` returns the input minus the smoothed
/// baseline. Output length always equals input length.
pub fn apply_sg(series: &ProcessedSeries, spec: &SgSpec, mode: SgMode) -> Result<ProcessedSeries> {
    let smooth = savgol(&series.values, spec)?;
    let values = match mode {
        SgMode::Smooth => smooth,
        SgMode::Detrend => series.values.iter().zip(&smooth).map(|(x, s)| x - s).collect(),
    };
    let mode_name = match mode {
        SgMode::Smooth => "smooth",
        SgMode::Detrend => "detrend",
    };
    Ok(series.map_values(values).with_step(format!(
        "sg(poly_order={},window_len={},mode={mode_name})",
        spec.poly_order, spec.window_len
    )))
}

const RESYNC_EVERY: usize = 64;

/// Smoothed values of `x`.
///
/// Sample `i` uses the symmetric window of half-width
/// `min(H, i, n-1-i)`, so windows shrink towards the ends instead of
/// reaching into padding; the fitted degree is capped at `2h` so tiny edge
/// windows stay well posed. The local fit is evaluated from running
/// moments `sum k^m x[i+k]` which are re-centred in O(order^2) per sample
/// and rebuilt from scratch every few samples to bound rounding drift.
pub fn savgol(x: &[f64], spec: &SgSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = (spec.window_len - 1) / 2;
    let max_h = half.min((n - 1) / 2);
    let order = spec.poly_order;
    let weights = CenterWeights::new(order, max_h);

    let mut out = vec![0.0; n];
    let mut moments = vec![0.0; order + 1];
    let mut h = 0usize;
    let binom = binomials(order);
    for i in 0..n {
        let new_h = half.min(i).min(n - 1 - i);
        if i % RESYNC_EVERY == 0 {
            h = new_h;
            recompute(x, i, h, &mut moments);
        } else {
            shift_moments(&mut moments, &binom);
            // old window now spans offsets [-h-1, h-1] around i
            let (old_lo, old_hi) = (-(h as isize) - 1, h as isize - 1);
            let (new_lo, new_hi) = (-(new_h as isize), new_h as isize);
            for k in old_lo..new_lo {
                accumulate(&mut moments, k, -x[(i as isize + k) as usize]);
            }
            for k in new_lo..old_lo {
                accumulate(&mut moments, k, x[(i as isize + k) as usize]);
            }
            for k in old_hi + 1..=new_hi {
                accumulate(&mut moments, k, x[(i as isize + k) as usize]);
            }
            for k in new_hi + 1..=old_hi {
                accumulate(&mut moments, k, -x[(i as isize + k) as usize]);
            }
            h = new_h;
        }
        out[i] = if h == 0 {
            x[i]
        } else {
            let w = weights.get(h);
            let scale = 1.0 / h as f64;
            let mut acc = 0.0;
            let mut s = 1.0;
            for (m, wm) in w.iter().enumerate() {
                acc += wm * moments[m] * s;
                s *= scale;
            }
            acc
        };
    }
    Ok(out)
}

fn recompute(x: &[f64], c: usize, h: usize, moments: &mut [f64]) {
    moments.iter_mut().for_each(|m| *m = 0.0);
    for k in -(h as isize)..=h as isize {
        accumulate(moments, k, x[(c as isize + k) as usize]);
    }
}

fn accumulate(moments: &mut [f64], k: isize, v: f64) {
    let k = k as f64;
    let mut p = v;
    for m in moments.iter_mut() {
        *m += p;
        p *= k;
    }
}

fn binomials(order: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; order + 1]; order + 1];
    for m in 0..=order {
        c[m][0] = 1.0;
        for j in 1..=m {
            c[m][j] = c[m - 1][j - 1] + if j < m { c[m - 1][j] } else { 0.0 };
        }
    }
    c
}

/// Moves the expansion point one sample to the right:
/// `sum (k-1)^m x = sum_j C(m,j) (-1)^(m-j) S_j`.
fn shift_moments(moments: &mut [f64], binom: &[Vec<f64>]) {
    let old = moments.to_vec();
    for (m, slot) in moments.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..=m {
            let sign = if (m - j) % 2 == 0 { 1.0 } else { -1.0 };
            acc += binom[m][j] * sign * old[j];
        }
        *slot = acc;
    }
}

/// Per half-width, the weights on the scaled moments `sum (k/h)^m x` that
/// give the fitted polynomial's value at the window centre.
struct CenterWeights {
    order: usize,
    // power_sums[p][h] = sum_{k=1..h} k^p
    power_sums: Vec<Vec<f64>>,
    cache: std::cell::RefCell<Vec<Option<Vec<f64>>>>,
}

impl CenterWeights {
    fn new(order: usize, max_h: usize) -> Self {
        let mut power_sums = vec![vec![0.0; max_h + 1]; 2 * order + 1];
        for (p, row) in power_sums.iter_mut().enumerate() {
            for h in 1..=max_h {
                row[h] = row[h - 1] + (h as f64).powi(p as i32);
            }
        }
        CenterWeights {
            order,
            power_sums,
            cache: std::cell::RefCell::new(vec![None; max_h + 1]),
        }
    }

    fn get(&self, h: usize) -> Vec<f64> {
        if let Some(w) = &self.cache.borrow()[h] {
            return w.clone();
        }
        let degree = self.order.min(2 * h);
        let hf = h as f64;
        let gram = DMatrix::from_fn(degree + 1, degree + 1, |a, b| {
            let p = a + b;
            if p == 0 {
                (2 * h + 1) as f64
            } else if p % 2 == 1 {
                0.0
            } else {
                2.0 * self.power_sums[p][h] / hf.powi(p as i32)
            }
        });
        let mut e0 = DVector::zeros(degree + 1);
        e0[0] = 1.0;
        let sol = gram
            .lu()
            .solve(&e0)
            .expect("Savitzky-Golay moment matrix is nonsingular for degree <= 2h");
        let w: Vec<f64> = sol.iter().copied().collect();
        self.cache.borrow_mut()[h] = Some(w.clone());
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKind;
    use crate::util::pearson;
    use std::f64::consts::PI;

    // Direct least-squares fit of a single window, independent of the
    // running-moment machinery.
    fn direct(x: &[f64], spec: &SgSpec) -> Vec<f64> {
        let n = x.len();
        let half = (spec.window_len - 1) / 2;
        (0..n)
            .map(|i| {
                let h = half.min(i).min(n - 1 - i);
                let d = spec.poly_order.min(2 * h);
                let rows = 2 * h + 1;
                let v = DMatrix::from_fn(rows, d + 1, |r, c| (r as f64 - h as f64).powi(c as i32));
                let y = DVector::from_fn(rows, |r, _| x[i + r - h]);
                let coef = v.clone().svd(true, true).solve(&y, 1e-14).unwrap();
                coef[0]
            })
            .collect()
    }

    #[test]
    fn reproduces_cubics() {
        let spec = SgSpec::default();
        let x: Vec<f64> = (0..15_000)
            .map(|i| {
                let t = i as f64 / 500.0 - 15.0;
                0.01 * t * t * t - 0.3 * t * t + 2.0 * t + 5.0
            })
            .collect();
        let y = savgol(&x, &spec).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_direct_fit() {
        let spec = SgSpec {
            poly_order: 3,
            window_len: 41,
        };
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let fast = savgol(&x, &spec).unwrap();
        let slow = direct(&x, &spec);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn detrend_keeps_ripple() {
        let ripple: Vec<f64> = (0..15_000)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / 500.0).sin())
            .collect();
        let x: Vec<f64> = ripple
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let t = i as f64 / 500.0;
                r + 0.002 * t * t * t - 0.05 * t * t + 0.4 * t + 3.0
            })
            .collect();
        let s = ProcessedSeries::new(x, 500.0, 0.0, SeriesKind::BiozAbs);
        let y = apply_sg(&s, &SgSpec::default(), SgMode::Detrend).unwrap();
        assert_eq!(y.len(), 15_000);
        assert!(pearson(&y.values, &ripple).unwrap() >= 0.99);
    }

    #[test]
    fn constant_detrends_to_zero() {
        let s = ProcessedSeries::new(vec![7.25; 5000], 500.0, 0.0, SeriesKind::Ecg);
        let y = apply_sg(&s, &SgSpec::default(), SgMode::Detrend).unwrap();
        assert!(y.values.iter().all(|v| v.abs() < 1e-9));
        assert_eq!(y.log().len(), 1);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SgSpec { poly_order: 3, window_len: 10 },
            SgSpec { poly_order: 5, window_len: 5 },
        ] {
            assert!(matches!(savgol(&[1.0; 20], &spec), Err(PreprocessError::InvalidSpec(_))));
        }
    }
}

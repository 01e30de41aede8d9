//! Per-cycle features. Each function works on one cycle; the segment
//! values are means over valid cycles (see [`super::extract_all`]).

use super::{FeatureError, Result};
use crate::dataset::ProcessedSeries;
use crate::fiducial::CycleFiducials;
use crate::util::parabolic_vertex;

pub const LEVELS: [f64; 4] = [0.25, 0.50, 0.75, 0.90];

/// `(PTT_max, PTT_min, PAT)`.
pub fn cycle_ptt(c: &CycleFiducials) -> [f64; 3] {
    [c.t_max - c.t_r, c.t_min - c.t_r, c.t_md - c.t_r]
}

/// Widths of one cycle: `dw`, `sw`, `pw` hold the full width followed by
/// the 25/50/75/90 % widths; `pwr` holds the four ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Widths {
    pub dw: [f64; 5],
    pub sw: [f64; 5],
    pub pw: [f64; 5],
    pub pwr: [f64; 4],
}

impl Widths {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(19);
        v.extend_from_slice(&self.dw);
        v.extend_from_slice(&self.sw);
        v.extend_from_slice(&self.pw);
        v.extend_from_slice(&self.pwr);
        v
    }
}

/// Fractional position of `t` clamped into the series.
fn pos(s: &ProcessedSeries, t: f64) -> f64 {
    s.position_of(t).clamp(0.0, (s.len() - 1) as f64)
}

/// Time at which `x` crosses `level` walking from sample `from` towards
/// `to` (exclusive of neither), interpolated linearly between the bracketing
/// samples. The walk starts above the level.
fn crossing(s: &ProcessedSeries, x: &[f64], level: f64, from: usize, to: usize) -> Option<f64> {
    let step: isize = if to >= from { 1 } else { -1 };
    let mut i = from as isize;
    while i != to as isize {
        let j = i + step;
        let (a, b) = (x[i as usize], x[j as usize]);
        if a >= level && b < level {
            let f = (a - level) / (a - b);
            return Some(s.time_at(i as usize) + step as f64 * f / s.sample_rate_hz);
        }
        i = j;
    }
    None
}

pub fn cycle_widths(c: &CycleFiducials, biz: &ProcessedSeries) -> Result<Widths> {
    let x = &biz.values;
    let i_peak = pos(biz, c.t_max).round() as usize;
    let i_lo = pos(biz, c.t_min).floor() as usize;
    let i_hi = pos(biz, c.t_min_next).ceil() as usize;
    let span = c.hi_max - c.hi_min;
    let mut w = Widths {
        dw: [c.t_min_next - c.t_max; 5],
        sw: [c.t_max - c.t_min; 5],
        pw: [c.t_min_next - c.t_min; 5],
        pwr: [0.0; 4],
    };
    if !(span > 0.0) {
        return Err(FeatureError::LevelNotCrossed(0.0));
    }
    for (k, &frac) in LEVELS.iter().enumerate() {
        let level = c.hi_min + frac * span;
        let up = crossing(biz, x, level, i_peak, i_lo).ok_or(FeatureError::LevelNotCrossed(frac))?;
        let down = crossing(biz, x, level, i_peak, i_hi).ok_or(FeatureError::LevelNotCrossed(frac))?;
        w.sw[k + 1] = c.t_max - up;
        w.dw[k + 1] = down - c.t_max;
        w.pw[k + 1] = down - up;
        w.pwr[k] = w.pw[k + 1] / w.pw[0];
    }
    Ok(w)
}

/// `(HI_max, HI_min, HI_MD, PP, HIR_max, HIR_MD)`.
pub fn cycle_heights(c: &CycleFiducials) -> Result<[f64; 6]> {
    if c.hi_min == 0.0 {
        return Err(FeatureError::ZeroMinHeight);
    }
    Ok([
        c.hi_max,
        c.hi_min,
        c.hi_md,
        c.hi_max - c.hi_min,
        c.hi_max / c.hi_min,
        c.hi_md / c.hi_min,
    ])
}

/// `(AS, DS)`; DS is negative for a falling edge.
pub fn cycle_slopes(c: &CycleFiducials) -> Result<[f64; 2]> {
    let rise = c.t_max - c.t_min;
    let fall = c.t_max - c.t_min_next;
    if rise == 0.0 || fall == 0.0 || !rise.is_finite() || !fall.is_finite() {
        return Err(FeatureError::ZeroDuration);
    }
    Ok([(c.hi_max - c.hi_min) / rise, (c.hi_max - c.hi_min_next) / fall])
}

/// `(HId_max, PWd, PWd50, PWRd, ASd, DSd)` from the first difference
/// scaled by the sample rate, taken over `[t_min, t_min_next]`.
///
/// The difference pulse is bounded by the nearest local minimum on each
/// side of its peak; when the difference is monotone up to the cycle edge,
/// the nearest zero crossing is used instead, and failing that the edge.
pub fn cycle_diff(c: &CycleFiducials, biz: &ProcessedSeries) -> Result<[f64; 6]> {
    let x = &biz.values;
    let fs = biz.sample_rate_hz;
    let i_lo = pos(biz, c.t_min).floor() as usize;
    let i_hi = pos(biz, c.t_min_next).ceil() as usize;
    if i_hi < i_lo + 3 {
        return Err(FeatureError::DegenerateDifference("cycle shorter than 3 samples"));
    }
    let d: Vec<f64> = (i_lo..i_hi).map(|i| (x[i + 1] - x[i]) * fs).collect();
    // d[k] sits halfway between samples i_lo + k and i_lo + k + 1
    let t_of = |k: f64| biz.time_at(i_lo) + (k + 0.5) / fs;
    let n = d.len();
    let kp = crate::util::argmax(&d, 0, n);
    let (delta, peak) = if kp > 0 && kp + 1 < n {
        parabolic_vertex(d[kp - 1], d[kp], d[kp + 1])
    } else {
        (0.0, d[kp])
    };
    let t_peak = t_of(kp as f64 + delta);

    let left = boundary(&d, kp, -1);
    let right = boundary(&d, kp, 1);
    let (t_left, t_right) = (t_of(left.0), t_of(right.0));
    let pwd = t_right - t_left;

    let half = 0.5 * peak;
    let up = half_crossing(&d, half, kp, -1).map(t_of);
    let down = half_crossing(&d, half, kp, 1).map(t_of);
    let (Some(up), Some(down)) = (up, down) else {
        return Err(FeatureError::DegenerateDifference("difference never falls to half its peak"));
    };
    let pwd50 = down - up;

    let rise = peak - left.1;
    let fall = peak - right.1;
    let scale = peak.abs().max(f64::MIN_POSITIVE);
    if rise <= 1e-9 * scale || fall <= 1e-9 * scale || t_peak == t_left || t_peak == t_right {
        return Err(FeatureError::DegenerateDifference("flat difference around its peak"));
    }
    if !(pwd > 0.0) {
        return Err(FeatureError::DegenerateDifference("empty difference pulse"));
    }
    Ok([
        peak,
        pwd,
        pwd50,
        pwd50 / pwd,
        rise / (t_peak - t_left),
        fall / (t_peak - t_right),
    ])
}

/// Boundary of the difference pulse walking from `kp` in direction `dir`:
/// (fractional index, value).
fn boundary(d: &[f64], kp: usize, dir: isize) -> (f64, f64) {
    let n = d.len() as isize;
    let mut k = kp as isize;
    loop {
        let next = k + dir;
        if next < 0 || next >= n {
            break;
        }
        if d[next as usize] > d[k as usize] {
            return (k as f64, d[k as usize]);
        }
        k = next;
    }
    let mut j = kp as isize;
    while j + dir >= 0 && j + dir < n {
        let (a, b) = (d[j as usize], d[(j + dir) as usize]);
        if a > 0.0 && b <= 0.0 {
            return (j as f64 + dir as f64 * a / (a - b), 0.0);
        }
        j += dir;
    }
    (k as f64, d[k as usize])
}

fn half_crossing(d: &[f64], level: f64, kp: usize, dir: isize) -> Option<f64> {
    let n = d.len() as isize;
    let mut k = kp as isize;
    while k + dir >= 0 && k + dir < n {
        let (a, b) = (d[k as usize], d[(k + dir) as usize]);
        if a >= level && b < level {
            return Some(k as f64 + dir as f64 * (a - level) / (a - b));
        }
        k += dir;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SeriesKind;

    fn triangle(fs: f64) -> (CycleFiducials, ProcessedSeries) {
        let v = (0..=1000)
            .map(|i| {
                let t = i as f64 / fs;
                if t <= 0.2 {
                    t / 0.2
                } else if t <= 0.8 {
                    (0.8 - t) / 0.6
                } else {
                    0.0
                }
            })
            .collect();
        let c = CycleFiducials {
            t_r: -0.1,
            t_r_next: 0.7,
            t_min: 0.0,
            t_max: 0.2,
            t_md: 0.1,
            t_min_next: 0.8,
            hi_max: 1.0,
            hi_min: 0.0,
            hi_md: 0.5,
            hi_min_next: 0.0,
            flags: vec![],
        };
        (c, ProcessedSeries::new(v, fs, 0.0, SeriesKind::BiozAbs))
    }

    #[test]
    fn triangle_widths() {
        let (c, s) = triangle(1000.0);
        let w = cycle_widths(&c, &s).unwrap();
        assert!((w.sw[0] - 0.2).abs() < 1e-12);
        assert!((w.dw[0] - 0.6).abs() < 1e-12);
        assert!((w.pw[0] - 0.8).abs() < 1e-12);
        assert!((w.pw[2] - 0.4).abs() < 1e-9);
        assert!((w.pwr[1] - 0.5).abs() < 1e-9);
        assert!((w.pw[1] - 0.6).abs() < 1e-9);
        assert!((w.pwr[0] - 0.75).abs() < 1e-9);
        for k in 0..5 {
            assert!((w.pw[k] - w.sw[k] - w.dw[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_slopes_and_scaling() {
        let (c, _) = triangle(1000.0);
        let [a, d] = cycle_slopes(&c).unwrap();
        assert!((a - 5.0).abs() < 1e-12);
        assert!((d + 1.0 / 0.6).abs() < 1e-12);
        let double = CycleFiducials {
            hi_max: 2.0,
            hi_md: 1.0,
            ..c
        };
        let [a2, d2] = cycle_slopes(&double).unwrap();
        assert!((a2 - 2.0 * a).abs() < 1e-12 && (d2 - 2.0 * d).abs() < 1e-12);
    }

    #[test]
    fn heights() {
        let (mut c, _) = triangle(1000.0);
        c.hi_min = 2.0;
        c.hi_md = 3.0;
        c.hi_max = 6.0;
        let h = cycle_heights(&c).unwrap();
        assert_eq!(h[3], 4.0);
        assert_eq!(h[4], 3.0);
        assert_eq!(h[5], 1.5);
        c.hi_max = 2.0;
        assert_eq!(cycle_heights(&c).unwrap()[3..5], [0.0, 1.0]);
        c.hi_min = 0.0;
        c.hi_max = 6.0;
        assert!(matches!(cycle_heights(&c), Err(FeatureError::ZeroMinHeight)));
    }

    #[test]
    fn ramp_difference_is_degenerate() {
        let v: Vec<f64> = (0..600).map(|i| 2.0 * i as f64 / 500.0).collect();
        let s = ProcessedSeries::new(v, 500.0, 0.0, SeriesKind::BiozAbs);
        let (mut c, _) = triangle(500.0);
        c.t_min = 0.0;
        c.t_min_next = 1.0;
        assert!(matches!(cycle_diff(&c, &s), Err(FeatureError::DegenerateDifference(_))));
    }

    #[test]
    fn difference_scales() {
        let (c, s) = triangle(1000.0);
        // smooth the triangle's corner so the difference has a peak
        let v: Vec<f64> = s.values.iter().map(|x| x * x).collect();
        let s1 = s.map_values(v.clone());
        let s3 = s.map_values(v.iter().map(|x| 3.0 * x).collect());
        let a = cycle_diff(&c, &s1).unwrap();
        let b = cycle_diff(&c, &s3).unwrap();
        for k in [0, 4, 5] {
            assert!((b[k] - 3.0 * a[k]).abs() < 1e-9 * a[k].abs().max(1.0));
        }
        for k in [1, 2, 3] {
            assert!((b[k] - a[k]).abs() < 1e-12);
        }
    }
}

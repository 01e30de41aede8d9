use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FiducialError, Result};
use crate::dataset::ProcessedSeries;
use crate::util::{argmax, argmin, parabolic_vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FiducialFlag {
    /// `t_r <= t_min < t_md < t_max < t_min_next` does not hold.
    TimeOrdering,
    /// `hi_min <= hi_md <= hi_max` does not hold.
    HeightOrdering,
    /// The first difference is constant over the rising edge.
    DegenerateMd,
    /// The next cycle's minimum lies outside the series.
    MissingNextMin,
}

/// Fiducial points of one cardiac cycle. Heights are in the units of the
/// input series (ohms), times on the series clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFiducials {
    pub t_r: f64,
    pub t_r_next: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_md: f64,
    pub t_min_next: f64,
    pub hi_max: f64,
    pub hi_min: f64,
    pub hi_md: f64,
    pub hi_min_next: f64,
    pub flags: Vec<FiducialFlag>,
}

impl CycleFiducials {
    pub fn is_valid(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn rr(&self) -> f64 {
        self.t_r_next - self.t_r
    }
}

struct Extremum {
    t: f64,
    value: f64,
}

/// Refines `x[i]` with a parabola unless `i` sits on the edge of its search
/// window `[lo, hi]`.
fn refine(series: &ProcessedSeries, i: usize, lo: usize, hi: usize) -> Extremum {
    let x = &series.values;
    if i > lo && i < hi {
        let (d, v) = parabolic_vertex(x[i - 1], x[i], x[i + 1]);
        Extremum {
            t: series.time_at(i) + d / series.sample_rate_hz,
            value: v,
        }
    } else {
        Extremum {
            t: series.time_at(i),
            value: x[i],
        }
    }
}

/// Inclusive sample range covering times `[t0, t1]`, or `None` when it
/// falls outside the series or is empty.
fn span(series: &ProcessedSeries, t0: f64, t1: f64) -> Option<(usize, usize)> {
    // Times that land on a sample up to rounding count as that sample.
    let snap = |p: f64| if (p - p.round()).abs() < 1e-6 { p.round() } else { p };
    let (p0, p1) = (snap(series.position_of(t0)), snap(series.position_of(t1)));
    if p0 < 0.0 || p1 < 0.0 {
        return None;
    }
    let lo = p0.ceil() as usize;
    let hi_f = p1.floor();
    let hi = hi_f as usize;
    if hi >= series.len() || lo > hi {
        return None;
    }
    Some((lo, hi))
}

fn interpolate(series: &ProcessedSeries, t: f64) -> f64 {
    let p = series.position_of(t).clamp(0.0, (series.len() - 1) as f64);
    let i = (p.floor() as usize).min(series.len() - 2);
    let f = p - i as f64;
    series.values[i] * (1.0 - f) + series.values[i + 1] * f
}

/// One entry per R-R interval whose search windows lie inside `biz`.
///
/// The minimum is searched over the first half of the interval after the R
/// peak, the maximum from the minimum up to the next R peak, and the
/// maximum-derivative point over the rising edge between them. The closing
/// minimum uses the same rule on the following interval (or on the current
/// RR length after the last peak).
pub fn detect_cycle_fiducials(biz: &ProcessedSeries, r_times: &[f64]) -> Result<Vec<CycleFiducials>> {
    if r_times.len() < 2 {
        return Err(FiducialError::TooFewPeaks(r_times.len()));
    }
    let x = &biz.values;
    let fs = biz.sample_rate_hz;
    let mut cycles = Vec::new();
    for k in 0..r_times.len() - 1 {
        let (t_r, t_next) = (r_times[k], r_times[k + 1]);
        let rr = t_next - t_r;
        let Some((lo_min, hi_min)) = span(biz, t_r, t_r + 0.5 * rr) else {
            continue;
        };
        let i_min = argmin(x, lo_min, hi_min + 1);
        let Some((_, hi_max)) = span(biz, t_r, t_next) else {
            continue;
        };
        let i_max = argmax(x, i_min, hi_max + 1);
        let min = refine(biz, i_min, lo_min, hi_min);
        let max = refine(biz, i_max, i_min, hi_max);

        let mut flags = Vec::new();
        let (t_md, hi_md) = if i_max > i_min {
            let diffs: Vec<f64> = (i_min..i_max).map(|j| x[j + 1] - x[j]).collect();
            let jd = argmax(&diffs, 0, diffs.len());
            let (dmin, dmax) = diffs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
            let scale = dmax.abs().max(dmin.abs()).max(f64::MIN_POSITIVE);
            if (dmax - dmin) <= 1e-9 * scale {
                flags.push(FiducialFlag::DegenerateMd);
            }
            let delta = if jd > 0 && jd + 1 < diffs.len() {
                parabolic_vertex(diffs[jd - 1], diffs[jd], diffs[jd + 1]).0
            } else {
                0.0
            };
            let t = biz.time_at(i_min + jd) + (0.5 + delta) / fs;
            (t, interpolate(biz, t))
        } else {
            flags.push(FiducialFlag::DegenerateMd);
            (min.t, min.value)
        };

        let rr_next = r_times.get(k + 2).map_or(rr, |t| t - t_next);
        let (t_min_next, hi_min_next) = match span(biz, t_next, t_next + 0.5 * rr_next) {
            Some((lo, hi)) => {
                let i = argmin(x, lo, hi + 1);
                let e = refine(biz, i, lo, hi);
                (e.t, e.value)
            }
            None => {
                flags.push(FiducialFlag::MissingNextMin);
                (f64::NAN, f64::NAN)
            }
        };

        let times_ok = t_r <= min.t && min.t < t_md && t_md < max.t && max.t < t_min_next;
        if !times_ok && !flags.contains(&FiducialFlag::MissingNextMin) {
            flags.push(FiducialFlag::TimeOrdering);
        }
        if !(min.value <= hi_md && hi_md <= max.value) {
            flags.push(FiducialFlag::HeightOrdering);
        }
        cycles.push(CycleFiducials {
            t_r,
            t_r_next: t_next,
            t_min: min.t,
            t_max: max.t,
            t_md,
            t_min_next,
            hi_max: max.value,
            hi_min: min.value,
            hi_md,
            hi_min_next,
            flags,
        });
    }
    if cycles.is_empty() {
        return Err(FiducialError::EmptyCycleWindow);
    }
    Ok(cycles)
}

/// Per-cycle debug export, one row per cycle.
pub fn save_fiducials_csv(cycles: &[CycleFiducials], path: impl AsRef<Path>) -> Result<()> {
    let io = |e: csv::Error| FiducialError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(io)?;
    w.write_record([
        "t_r", "t_min", "t_md", "t_max", "t_min_next", "hi_min", "hi_md", "hi_max", "hi_min_next", "flags",
    ])
    .map_err(io)?;
    for c in cycles {
        let flags: Vec<String> = c.flags.iter().map(|f| format!("{f:?}")).collect();
        let mut rec: Vec<String> = [
            c.t_r, c.t_min, c.t_md, c.t_max, c.t_min_next, c.hi_min, c.hi_md, c.hi_max, c.hi_min_next,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect();
        rec.push(flags.join("|"));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FiducialError::Io(e.to_string()))
}

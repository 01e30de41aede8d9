//! Whole-segment features.

use super::{FeatureError, Result};
use crate::util::{mean, sample_sd};

/// `(SD, Skew, Kurt)`: sample SD, moment skewness `m3/m2^1.5` and
/// non-excess kurtosis `m4/m2^2` (normal data gives 3).
pub fn stat_features(x: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() < 3 {
        return Err(FeatureError::TooShort { len: x.len(), needed: 3 });
    }
    let mu = mean(x);
    let n = x.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 == 0.0 {
        return Err(FeatureError::ConstantSegment);
    }
    Ok((sample_sd(x), m3 / m2.powf(1.5), m4 / (m2 * m2)))
}

/// Template match counts shared by ApEn and SampEn.
struct Matches {
    /// Per template of length `m` (N-m+1 of them), matches including itself.
    short: Vec<u64>,
    /// Per template of length `m+1` (N-m of them), matches including itself.
    long: Vec<u64>,
    /// Unordered pairs among the first N-m templates matching on `m` points.
    pairs_short: u64,
    /// Same pairs matching on `m+1` points.
    pairs_long: u64,
}

fn count_matches(x: &[f64], m: usize, r: f64) -> Matches {
    let n = x.len();
    let n_short = n - m + 1;
    let n_long = n - m;
    let mut out = Matches {
        short: vec![1; n_short],
        long: vec![1; n_long],
        pairs_short: 0,
        pairs_long: 0,
    };
    // Sorting by the first template value means that, scanning forward from
    // a template, the first coordinate only drifts further away.
    let mut order: Vec<usize> = (0..n_short).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if x[j] - x[i] > r {
                break;
            }
            if !(1..m).all(|k| (x[i + k] - x[j + k]).abs() <= r) {
                continue;
            }
            out.short[i] += 1;
            out.short[j] += 1;
            if i < n_long && j < n_long {
                out.pairs_short += 1;
                if (x[i + m] - x[j + m]).abs() <= r {
                    out.pairs_long += 1;
                    out.long[i] += 1;
                    out.long[j] += 1;
                }
            }
        }
    }
    out
}

/// `(ApEn, SampEn)` with embedding dimension `m`, tolerance
/// `r = r_fraction * SD` and the Chebyshev distance. ApEn counts
/// self-matches; SampEn does not and is undefined when either count is 0.
pub fn entropy_features(x: &[f64], m: usize, r_fraction: f64) -> Result<(f64, f64)> {
    if x.len() < 100 {
        return Err(FeatureError::TooShort { len: x.len(), needed: 100 });
    }
    if m == 0 {
        return Err(FeatureError::UndefinedEntropy("embedding dimension must be positive"));
    }
    let r = r_fraction * sample_sd(x);
    let c = count_matches(x, m, r);
    let phi = |counts: &[u64]| {
        let total = counts.len() as f64;
        counts.iter().map(|&k| (k as f64 / total).ln()).sum::<f64>() / total
    };
    let apen = phi(&c.short) - phi(&c.long);
    if c.pairs_short == 0 || c.pairs_long == 0 {
        return Err(FeatureError::UndefinedEntropy("no template matches"));
    }
    let sampen = (c.pairs_short as f64 / c.pairs_long as f64).ln();
    Ok((apen, sampen))
}

/// `60 / mean(RR)` in beats per minute.
pub fn heart_rate(r_times: &[f64]) -> Result<f64> {
    if r_times.len() < 2 {
        return Err(FeatureError::TooFewPeaks(r_times.len()));
    }
    let mean_rr = (r_times[r_times.len() - 1] - r_times[0]) / (r_times.len() - 1) as f64;
    Ok(60.0 / mean_rr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn moments() {
        let (_, skew, _) = stat_features(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(skew, 0.0);
        let (sd, _, _) = stat_features(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((sd - 0.5).abs() < 1e-15);
        assert!(matches!(stat_features(&[2.0; 10]), Err(FeatureError::ConstantSegment)));
    }

    #[test]
    fn gaussian_kurtosis_is_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let (_, _, kurt) = stat_features(&x).unwrap();
        assert!((kurt - 3.0).abs() < 0.05, "{kurt}");
    }

    #[test]
    fn constant_sampen_is_zero() {
        let (apen, sampen) = entropy_features(&[1.5; 200], 2, 0.2).unwrap();
        assert_eq!(sampen, 0.0);
        assert!(apen.abs() < 1e-12);
    }

    #[test]
    fn noise_is_less_regular_than_a_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let sine: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin()).collect();
        let (_, s_noise) = entropy_features(&noise, 2, 0.2).unwrap();
        let (_, s_sine) = entropy_features(&sine, 2, 0.2).unwrap();
        assert!(s_noise > s_sine);
    }

    #[test]
    fn heart_rates() {
        let t: Vec<f64> = (0..8).map(|k| k as f64).collect();
        assert!((heart_rate(&t).unwrap() - 60.0).abs() < 1e-12);
        let alt = [0.0, 0.5, 1.5, 2.0, 3.0];
        assert!((heart_rate(&alt).unwrap() - 80.0).abs() < 1e-12);
        assert!(matches!(heart_rate(&[1.0]), Err(FeatureError::TooFewPeaks(1))));
    }
}

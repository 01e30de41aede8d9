use serde::{Deserialize, Serialize};

use super::{RegressError, Result, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// `None` resolves to `1 / (p * mean feature variance)` on the
    /// standardised training data.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// Iteration cap; `None` means `max(10^7, 100 * 2n)`.
    pub max_passes: Option<usize>,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 1e3,
            epsilon: 0.1,
            kernel: Kernel::Rbf,
            gamma: None,
            tol: 1e-3,
            max_passes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub standardizer: Standardizer,
    pub gamma: f64,
    /// Standardised support vectors and their `alpha - alpha*` coefficients.
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl SvrModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(self.gamma, s, &z))
            .sum::<f64>()
            - self.rho
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d2).exp()
}

/// Solution of the epsilon-SVR dual
/// `min 1/2 (a - a*)' K (a - a*) + eps * sum(a + a*) - y'(a - a*)`
/// subject to `sum(a - a*) = 0` and `0 <= a, a* <= C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Sequential minimal optimisation over the 2n-variable form with
/// second-order working-set selection; stops when the maximal KKT
/// violation falls below `tol`.
pub fn solve_dual(
    kernel: &[Vec<f64>],
    y: &[f64],
    c: f64,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SvrSolution> {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let k = |a: usize, b: usize| kernel[a % n][b % n];
    let linear: Vec<f64> = (0..l)
        .map(|t| if t < n { epsilon - y[t] } else { epsilon + y[t - n] })
        .collect();
    let mut beta = vec![0.0; l];
    let mut grad = linear.clone();

    let mut iterations = 0;
    loop {
        // i: most violating index moving "up"
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let v = -sign(t) * grad[t];
            let can_move = if sign(t) > 0.0 { beta[t] < c } else { beta[t] > 0.0 };
            if can_move && v >= g_max {
                g_max = v;
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..l {
            let (movable, grad_diff, v) = if sign(t) > 0.0 {
                (beta[t] > 0.0, g_max + grad[t], grad[t])
            } else {
                (beta[t] < c, g_max - grad[t], -grad[t])
            };
            if !movable {
                continue;
            }
            g_max2 = g_max2.max(v);
            if grad_diff > 0.0 {
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
        if g_max + g_max2 < tol {
            break;
        }
        let Some(j) = j_sel else { break };
        if iterations >= max_iter {
            return Err(RegressError::NoConvergence(max_iter));
        }
        iterations += 1;

        let q_ij = sign(i) * sign(j) * k(i, j);
        let (old_i, old_j) = (beta[i], beta[j]);
        if sign(i) != sign(j) {
            let quad = (k(i, i) + k(j, j) + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        let (si, sj) = (sign(i), sign(j));
        let (ki, kj) = (&kernel[i % n], &kernel[j % n]);
        for t in 0..l {
            let st = sign(t);
            grad[t] += st * (si * ki[t % n] * di + sj * kj[t % n] * dj);
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if beta[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if beta[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };
    let objective = 0.5 * (0..l).map(|t| beta[t] * (grad[t] + linear[t])).sum::<f64>();
    Ok(SvrSolution {
        alpha: beta[..n].to_vec(),
        alpha_star: beta[n..].to_vec(),
        rho,
        objective,
        iterations,
    })
}

pub fn train_svr(x: &[Vec<f64>], y: &[f64], cfg: &SvrConfig) -> Result<SvrModel> {
    super::check_xy(x, y)?;
    if y.len() < 2 {
        return Err(RegressError::InvalidConfig("SVR needs at least 2 rows".into()));
    }
    if !(cfg.c > 0.0 && cfg.epsilon >= 0.0 && cfg.gamma.is_none_or(|g| g > 0.0)) {
        return Err(RegressError::InvalidConfig(format!("{cfg:?}")));
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.transform(r)).collect();
    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(&z));
    let kernel: Vec<Vec<f64>> = z.iter().map(|a| z.iter().map(|b| rbf(gamma, a, b)).collect()).collect();
    let max_iter = cfg.max_passes.unwrap_or((100 * 2 * y.len()).max(10_000_000));
    let sol = solve_dual(&kernel, y, cfg.c, cfg.epsilon, cfg.tol, max_iter)?;
    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for (i, zi) in z.into_iter().enumerate() {
        let cf = sol.alpha[i] - sol.alpha_star[i];
        if cf != 0.0 {
            support.push(zi);
            coef.push(cf);
        }
    }
    Ok(SvrModel {
        standardizer,
        gamma,
        support,
        coef,
        rho: sol.rho,
    })
}

/// `1 / (p * mean column variance)`; 1 for degenerate inputs.
pub fn default_gamma(z: &[Vec<f64>]) -> f64 {
    let p = z.first().map_or(0, |r| r.len());
    let n = z.len() as f64;
    if p == 0 || z.len() < 2 {
        return 1.0;
    }
    let mean_var = (0..p)
        .map(|j| {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / p as f64;
    if mean_var > 0.0 {
        1.0 / (p as f64 * mean_var)
    } else {
        1.0
    }
}

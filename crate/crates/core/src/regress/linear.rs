use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{RegressError, Result, Standardizer};

/// Ordinary least squares with intercept, fitted on standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    /// Coefficients on the standardised features.
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Damping added to the normal equations when they were singular.
    pub ridge: Option<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        self.intercept + z.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `(coefficients, intercept)` in the original feature units.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let w: Vec<f64> = self.beta.iter().zip(&s.scale).map(|(b, sc)| b / sc).collect();
        let b0 = self.intercept - w.iter().zip(&s.mean).map(|(a, m)| a * m).sum::<f64>();
        (w, b0)
    }
}

fn well_conditioned(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let d = chol.l_dirty().diagonal();
    let max = d.iter().fold(0.0f64, |a, v| a.max(v * v));
    let min = d.iter().fold(f64::INFINITY, |a, v| a.min(v * v));
    max > 0.0 && min > 1e-12 * max
}

pub fn train_linear(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    super::check_xy(x, y)?;
    let standardizer = Standardizer::fit(x);
    let n = y.len();
    let p = x[0].len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(LinearModel {
            standardizer,
            beta: vec![],
            intercept: y_mean,
            ridge: None,
        });
    }
    let z = DMatrix::from_fn(n, p, |i, j| (x[i][j] - standardizer.mean[j]) / standardizer.scale[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
    let gram = z.transpose() * &z;
    let rhs = z.transpose() * yc;

    let mut ridge = None;
    let solution = match gram.clone().cholesky() {
        Some(ch) if n > p && well_conditioned(&ch) => ch.solve(&rhs),
        _ => {
            let scale = (gram.trace() / p as f64).max(1.0);
            let lambda = 1e-8 * scale;
            ridge = Some(lambda);
            let damped = &gram + DMatrix::identity(p, p) * lambda;
            damped
                .cholesky()
                .ok_or(RegressError::SingularDesign)?
                .solve(&rhs)
        }
    };
    Ok(LinearModel {
        standardizer,
        beta: solution.iter().copied().collect(),
        intercept: y_mean,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>() * 10.0, rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 5.0).collect();
        let m = train_linear(&x, &y).unwrap();
        let (w, b) = m.raw_coefficients();
        assert!((w[0] - 3.0).abs() < 1e-9 && (w[1] + 2.0).abs() < 1e-9 && (b - 5.0).abs() < 1e-9);
        assert!(m.ridge.is_none());
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = train_linear(&x, &[4.0; 10]).unwrap();
        let (w, b) = m.raw_coefficients();
        assert!(w.iter().all(|v| v.abs() < 1e-12));
        assert!((b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_falls_back_to_ridge() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let m = train_linear(&x, &y).unwrap();
        assert!(m.ridge.is_some());
        assert!((m.predict_row(&[3.0, 1.0]) - 6.0).abs() < 1e-6);
    }
}

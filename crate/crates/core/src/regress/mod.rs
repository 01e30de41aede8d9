//! Linear regression, CART, random forest and epsilon-SVR behind one
//! train/predict interface, with JSON persistence.

mod cart;
mod forest;
mod linear;
mod svr;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cart::{train_cart, Node, Tree, TreeConfig};
pub use forest::{bootstrap_counts, train_forest, tree_rng, Forest, ForestConfig};
pub use linear::{train_linear, LinearModel};
pub use svr::{default_gamma, rbf, solve_dual, train_svr, Kernel, SvrConfig, SvrModel, SvrSolution};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("empty training set")]
    EmptyTraining,
    #[error("rows have {got} columns, expected {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("{x_rows} feature rows but {y_len} targets")]
    LengthMismatch { x_rows: usize, y_len: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("design matrix is singular even with damping")]
    SingularDesign,
    #[error("SVR did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Persist(String),
}

pub type Result<T> = std::result::Result<T, RegressError>;

pub(crate) fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(RegressError::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(RegressError::LengthMismatch {
            x_rows: x.len(),
            y_len: y.len(),
        });
    }
    let p = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(RegressError::FeatureMismatch {
            expected: p,
            got: r.len(),
        });
    }
    if !y.iter().chain(x.iter().flatten()).all(|v| v.is_finite()) {
        return Err(RegressError::NonFinite);
    }
    Ok(())
}

/// Per-feature mean and sample SD; constant columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, |r| r.len());
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..p)
            .map(|j| {
                let ss: f64 = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                let sd = if x.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "SVR")]
    Svr,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lr => "LR",
            ModelKind::Dt => "DT",
            ModelKind::Rf => "RF",
            ModelKind::Svr => "SVR",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "LR" | "LINEAR" => Ok(ModelKind::Lr),
            "DT" | "CART" | "TREE" => Ok(ModelKind::Dt),
            "RF" | "FOREST" => Ok(ModelKind::Rf),
            "SVR" | "SVM" => Ok(ModelKind::Svr),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelConfig {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "DT")]
    Dt(TreeConfig),
    #[serde(rename = "RF")]
    Rf(ForestConfig),
    #[serde(rename = "SVR")]
    Svr(SvrConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Lr => ModelConfig::Lr,
            ModelKind::Dt => ModelConfig::Dt(TreeConfig::default()),
            ModelKind::Rf => ModelConfig::Rf(ForestConfig::default()),
            ModelKind::Svr => ModelConfig::Svr(SvrConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Lr => ModelKind::Lr,
            ModelConfig::Dt(_) => ModelKind::Dt,
            ModelConfig::Rf(_) => ModelKind::Rf,
            ModelConfig::Svr(_) => ModelKind::Svr,
        }
    }

    /// Same configuration with its seed replaced (only forests use one).
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ModelConfig::Rf(f) => ModelConfig::Rf(ForestConfig { seed, ..f }),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ModelParams {
    Linear(LinearModel),
    Tree(Tree),
    Forest(Forest),
    Svr(SvrModel),
}

/// A fitted model with the configuration and feature list it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub params: ModelParams,
}

pub fn train(config: &ModelConfig, x: &[Vec<f64>], y: &[f64], feature_names: &[String]) -> Result<TrainedModel> {
    check_xy(x, y)?;
    if !feature_names.is_empty() && feature_names.len() != x[0].len() {
        return Err(RegressError::FeatureMismatch {
            expected: x[0].len(),
            got: feature_names.len(),
        });
    }
    let params = match config {
        ModelConfig::Lr => ModelParams::Linear(train_linear(x, y)?),
        ModelConfig::Dt(c) => ModelParams::Tree(train_cart(x, y, c)?),
        ModelConfig::Rf(c) => ModelParams::Forest(train_forest(x, y, c)?),
        ModelConfig::Svr(c) => ModelParams::Svr(train_svr(x, y, c)?),
    };
    Ok(TrainedModel {
        kind: config.kind(),
        config: *config,
        feature_names: feature_names.to_vec(),
        params,
    })
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        match &self.params {
            ModelParams::Linear(m) => m.beta.len(),
            ModelParams::Tree(t) => t.n_features,
            ModelParams::Forest(f) => f.trees[0].n_features,
            ModelParams::Svr(m) => m.standardizer.mean.len(),
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Linear(m) => m.predict_row(x),
            ModelParams::Tree(t) => t.predict_row(x),
            ModelParams::Forest(f) => f.predict_row(x),
            ModelParams::Svr(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let p = self.n_features();
        if let Some(r) = x.iter().find(|r| r.len() != p) {
            return Err(RegressError::FeatureMismatch {
                expected: p,
                got: r.len(),
            });
        }
        Ok(x.par_iter().map(|r| self.predict_row(r)).collect())
    }

    /// Predicts rows whose columns are named `names`, reordering them to the
    /// training order.
    pub fn predict_named(&self, names: &[String], x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let idx: Vec<usize> = self
            .feature_names
            .iter()
            .map(|f| names.iter().position(|n| n == f))
            .collect::<Option<_>>()
            .ok_or(RegressError::FeatureMismatch {
                expected: self.feature_names.len(),
                got: names.len(),
            })?;
        let projected: Vec<Vec<f64>> = x.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect();
        self.predict(&projected)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| RegressError::Persist(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| RegressError::Persist(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| RegressError::Persist(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| RegressError::Persist(e.to_string()))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
        let y = x.iter().map(|r| r[0] * r[0] - r[1] + 0.1 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn every_model_round_trips_bit_exactly() {
        let (x, y) = data();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        for cfg in [
            ModelConfig::Lr,
            ModelConfig::Dt(TreeConfig::default()),
            ModelConfig::Rf(ForestConfig { n_trees: 5, ..ForestConfig::default() }),
            ModelConfig::Svr(SvrConfig::default()),
        ] {
            let m = train(&cfg, &x, &y, &names).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            let (a, b) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn column_count_is_checked() {
        let (x, y) = data();
        let m = train(&ModelConfig::Lr, &x, &y, &[]).unwrap();
        assert!(matches!(m.predict(&[vec![1.0]]), Err(RegressError::FeatureMismatch { .. })));
        assert!(matches!(train(&ModelConfig::Lr, &[], &[], &[]), Err(RegressError::EmptyTraining)));
    }

    #[test]
    fn named_prediction_reorders() {
        let (x, y) = data();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = train(&ModelConfig::Lr, &x, &y, &names).unwrap();
        let swapped_names: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let swapped: Vec<Vec<f64>> = x.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        assert_eq!(m.predict_named(&swapped_names, &swapped).unwrap(), m.predict(&x).unwrap());
    }
}

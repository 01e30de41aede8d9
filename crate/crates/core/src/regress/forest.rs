use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{grow, Presorted, Tree, TreeConfig};
use super::{RegressError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` resolves via [`ForestConfig::resolved_mtry`].
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            min_samples_leaf: 1,
            max_depth: None,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// All features for a 10-column table, otherwise `ceil(p / 3)`.
    pub fn resolved_mtry(&self, p: usize) -> usize {
        match self.mtry {
            Some(m) => m,
            None if p == 10 => p,
            None => p.div_ceil(3).max(1),
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(RegressError::InvalidConfig("n_trees must be at least 1".into()));
        }
        let m = self.resolved_mtry(p);
        if p > 0 && !(1..=p).contains(&m) {
            return Err(RegressError::InvalidConfig(format!("mtry {m} outside 1..={p}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub mtry: usize,
}

impl Forest {
    /// Mean of the trees' predictions.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Per-feature impurity decrease averaged over trees, normalised to sum
    /// to 1 (all zeros when no tree ever split).
    pub fn importances(&self) -> Vec<f64> {
        let p = self.trees[0].n_features;
        let mut acc = vec![0.0; p];
        for t in &self.trees {
            for (a, d) in acc.iter_mut().zip(t.impurity_decrease()) {
                *a += d;
            }
        }
        let d = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= d);
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        acc
    }
}

/// Random stream of tree `tree` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

/// How many times each row is drawn into the bootstrap sample of `tree`.
pub fn bootstrap_counts(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

pub fn train_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    super::check_xy(x, y)?;
    let p = x[0].len();
    cfg.validate(p)?;
    let mtry = cfg.resolved_mtry(p);
    let data = Presorted::new(x);
    let tree_cfg = TreeConfig {
        min_samples_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth,
    };
    let n = y.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let counts = if cfg.bootstrap {
                bootstrap_counts(&mut rng, n)
            } else {
                vec![1; n]
            };
            grow(&data, y, &counts, &tree_cfg, mtry, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest { trees, mtry })
}

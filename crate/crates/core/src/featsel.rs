//! Feature ranking by Pearson correlation, random-forest impurity and the
//! average of the two, plus top-k projection and k sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureTable, Target};
use crate::eval::{cross_validate, CvConfig, EvalError};
use crate::regress::{train_forest, ForestConfig, ModelConfig, RegressError};
use crate::util::pearson;

#[derive(Debug, Error)]
pub enum FeatselError {
    #[error("need at least 2 valid rows, got {0}")]
    TooFewRows(usize),
    #[error("target is constant; impurity is zero everywhere")]
    DegenerateTarget,
    #[error("rankings disagree: {0}")]
    MismatchedTargets(String),
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("export failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatselError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectionMethod {
    Pcc,
    RfImpurity,
    Combined,
}

impl SelectionMethod {
    /// k used when none is requested.
    pub fn default_k(self) -> usize {
        match self {
            SelectionMethod::Pcc => 20,
            SelectionMethod::RfImpurity => 10,
            SelectionMethod::Combined => 25,
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMethod::Pcc => "pcc",
            SelectionMethod::RfImpurity => "rf-impurity",
            SelectionMethod::Combined => "combined",
        })
    }
}

impl std::str::FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pcc" => Ok(SelectionMethod::Pcc),
            "rf-impurity" | "rf" | "impurity" => Ok(SelectionMethod::RfImpurity),
            "combined" => Ok(SelectionMethod::Combined),
            other => Err(format!("unknown selection method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatureSet {
    pub method: SelectionMethod,
    pub target: Target,
    pub feature_names: Vec<String>,
    /// Raw per-feature scores: r for PCC, normalised importance for
    /// impurity, averaged rank for the combination.
    pub scores: Vec<f64>,
    /// Feature indices, best first.
    pub order: Vec<usize>,
    pub k_selected: usize,
    pub seed: Option<u64>,
    /// Features with zero variance (PCC only); they score 0.
    pub flagged: Vec<usize>,
}

impl RankedFeatureSet {
    fn build(
        method: SelectionMethod,
        target: Target,
        feature_names: Vec<String>,
        scores: Vec<f64>,
        seed: Option<u64>,
        flagged: Vec<usize>,
    ) -> Self {
        let key = |i: usize| match method {
            SelectionMethod::Pcc => -scores[i].abs(),
            SelectionMethod::RfImpurity => -scores[i],
            SelectionMethod::Combined => scores[i],
        };
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        RankedFeatureSet {
            method,
            target,
            feature_names,
            scores,
            order,
            k_selected: method.default_k(),
            seed,
            flagged,
        }
    }

    /// Rank (0 = best) of every feature.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (pos, &f) in self.order.iter().enumerate() {
            r[f] = pos;
        }
        r
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_selected = k;
        self
    }

    pub fn top(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.order.len();
        if k == 0 || k > n {
            return Err(FeatselError::KOutOfRange { k, n });
        }
        Ok(self.order[..k].to_vec())
    }

    /// `feature,score,rank` rows in rank order (rank starts at 1).
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "feature,score,rank")?;
        for (pos, &f) in self.order.iter().enumerate() {
            writeln!(w, "{},{},{}", self.feature_names[f], self.scores[f], pos + 1)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn valid_xy(table: &FeatureTable, target: Target) -> Result<(FeatureTable, Vec<f64>)> {
    let t = table.valid_only();
    if t.len() < 2 {
        return Err(FeatselError::TooFewRows(t.len()));
    }
    let y = t.labels(target);
    Ok((t, y))
}

/// Pearson r of every feature against the label.
pub fn pcc_scores(table: &FeatureTable, target: Target) -> Result<RankedFeatureSet> {
    let (t, y) = valid_xy(table, target)?;
    let mut flagged = Vec::new();
    let scores = (0..t.n_features())
        .map(|j| {
            let col: Vec<f64> = t.rows.iter().map(|r| r.values[j]).collect();
            pearson(&col, &y).unwrap_or_else(|| {
                flagged.push(j);
                0.0
            })
        })
        .collect();
    Ok(RankedFeatureSet::build(
        SelectionMethod::Pcc,
        target,
        t.feature_names().to_vec(),
        scores,
        None,
        flagged,
    ))
}

/// Forest impurity importances, normalised to sum to 1.
pub fn impurity_scores(table: &FeatureTable, target: Target, forest: &ForestConfig, seed: u64) -> Result<RankedFeatureSet> {
    let (t, y) = valid_xy(table, target)?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(FeatselError::DegenerateTarget);
    }
    let cfg = ForestConfig { seed, ..*forest };
    let f = train_forest(&t.matrix(), &y, &cfg)?;
    Ok(RankedFeatureSet::build(
        SelectionMethod::RfImpurity,
        target,
        t.feature_names().to_vec(),
        f.importances(),
        Some(seed),
        Vec::new(),
    ))
}

/// Averages the two rankings' positions.
pub fn combined_ranking(pcc: &RankedFeatureSet, imp: &RankedFeatureSet) -> Result<RankedFeatureSet> {
    if pcc.target != imp.target {
        return Err(FeatselError::MismatchedTargets(format!("{} vs {}", pcc.target, imp.target)));
    }
    if pcc.feature_names != imp.feature_names {
        return Err(FeatselError::MismatchedTargets("different feature sets".into()));
    }
    let (a, b) = (pcc.ranks(), imp.ranks());
    let scores = a.iter().zip(&b).map(|(&x, &y)| (x + y) as f64 / 2.0).collect();
    Ok(RankedFeatureSet::build(
        SelectionMethod::Combined,
        pcc.target,
        pcc.feature_names.clone(),
        scores,
        imp.seed.or(pcc.seed),
        pcc.flagged.clone(),
    ))
}

/// Ranks with `method`; the forest-based methods use `forest` and `seed`.
pub fn rank_features(
    table: &FeatureTable,
    target: Target,
    method: SelectionMethod,
    forest: &ForestConfig,
    seed: u64,
) -> Result<RankedFeatureSet> {
    match method {
        SelectionMethod::Pcc => pcc_scores(table, target),
        SelectionMethod::RfImpurity => impurity_scores(table, target, forest, seed),
        SelectionMethod::Combined => {
            combined_ranking(&pcc_scores(table, target)?, &impurity_scores(table, target, forest, seed)?)
        }
    }
}

/// Projects `table` onto the ranking's top `k` columns in table order.
pub fn select_top_k(table: &FeatureTable, ranking: &RankedFeatureSet, k: usize) -> Result<FeatureTable> {
    if ranking.feature_names != table.feature_names() {
        return Err(FeatselError::MismatchedTargets("ranking was built on other features".into()));
    }
    Ok(table.project(&ranking.top(k)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// Cross-validated forest error on the top-k projection for every k.
pub fn sweep_top_k(
    table: &FeatureTable,
    ranking: &RankedFeatureSet,
    k_grid: &[usize],
    forest: &ForestConfig,
    cv: &CvConfig,
) -> Result<Vec<SweepPoint>> {
    let cv = CvConfig { target: ranking.target, ..*cv };
    k_grid
        .par_iter()
        .map(|&k| {
            let sub = select_top_k(table, ranking, k)?;
            let rep = cross_validate(&sub, &ModelConfig::Rf(*forest), &cv)?;
            Ok(SweepPoint {
                k,
                mae: rep.pooled.mae,
                rmse: rep.pooled.rmse,
            })
        })
        .collect()
}

/// `target,k,mae,rmse` rows.
pub fn save_sweep_csv(curves: &[(Target, Vec<SweepPoint>)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "target,k,mae_mmhg,rmse_mmhg")?;
    for (target, pts) in curves {
        for p in pts {
            writeln!(w, "{target},{},{},{}", p.k, p.mae, p.rmse)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureRow;
    use crate::features::FEATURE_NAMES;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(cols: &[Vec<f64>], y: &[f64]) -> FeatureTable {
        let names = FEATURE_NAMES[..cols.len()].iter().map(|s| s.to_string()).collect();
        let mut t = FeatureTable::with_features(names).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            t.push(FeatureRow {
                subject_id: "S".into(),
                trial_id: "T".into(),
                segment_index: i,
                values: cols.iter().map(|c| c[i]).collect(),
                sbp_mmhg: yi,
                dbp_mmhg: yi / 2.0,
                invalid_reason: None,
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn pcc_cases() {
        let y = vec![1.0, 3.0, 2.0, 4.0];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = y.iter().map(|v| -2.0 * v + 7.0).collect();
        let t = table(&[x, y.clone(), neg, vec![5.0; 4]], &y);
        let r = pcc_scores(&t, Target::Sbp).unwrap();
        assert!((r.scores[0] - 0.8).abs() < 1e-12);
        assert!((r.scores[1] - 1.0).abs() < 1e-12);
        assert!((r.scores[2] + 1.0).abs() < 1e-12);
        assert_eq!(r.scores[3], 0.0);
        assert_eq!(r.flagged, vec![3]);
        assert_eq!(r.order, vec![1, 2, 0, 3]);
    }

    #[test]
    fn combined_ties_break_by_index() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mk = |m, s: Vec<f64>| RankedFeatureSet::build(m, Target::Sbp, names.clone(), s, None, vec![]);
        let p = mk(SelectionMethod::Pcc, vec![0.9, 0.5, 0.1]);
        let i = mk(SelectionMethod::RfImpurity, vec![0.3, 0.6, 0.1]);
        let c = combined_ranking(&p, &i).unwrap();
        assert_eq!(c.scores, vec![0.5, 0.5, 2.0]);
        assert_eq!(c.order, vec![0, 1, 2]);
        let i = mk(SelectionMethod::RfImpurity, vec![0.1, 0.3, 0.6]);
        assert_eq!(combined_ranking(&p, &i).unwrap().order, vec![0, 1, 2]);
        assert_eq!(combined_ranking(&p, &p).unwrap().order, p.order);
        let mut d = i.clone();
        d.target = Target::Dbp;
        assert!(matches!(combined_ranking(&p, &d), Err(FeatselError::MismatchedTargets(_))));
    }

    #[test]
    fn impurity_finds_signal_and_guards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 300;
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let y = cols[0].clone();
        let t = table(&cols, &y);
        let cfg = ForestConfig { n_trees: 30, ..ForestConfig::default() };
        let r = impurity_scores(&t, Target::Sbp, &cfg, 4).unwrap();
        assert_eq!(r.order[0], 0);
        assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.scores.iter().all(|&s| s >= 0.0));
        let flat = table(&cols, &vec![3.0; n]);
        assert!(matches!(impurity_scores(&flat, Target::Sbp, &cfg, 4), Err(FeatselError::DegenerateTarget)));
    }

    #[test]
    fn top_k_projection() {
        let y = vec![1.0, 3.0, 2.0, 4.0];
        let t = table(&[vec![1.0, 2.0, 3.0, 4.0], y.clone(), vec![4.0, 1.0, 3.0, 2.0]], &y);
        let r = pcc_scores(&t, Target::Sbp).unwrap();
        let p = select_top_k(&t, &r, 2).unwrap();
        assert_eq!(p.feature_names(), &t.feature_names()[..2]);
        assert_eq!(select_top_k(&t, &r, 3).unwrap(), t);
        assert!(matches!(select_top_k(&t, &r, 0), Err(FeatselError::KOutOfRange { .. })));
    }
}

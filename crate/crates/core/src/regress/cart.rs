use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RegressError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        /// Squared-error decrease achieved by this split.
        decrease: f64,
    },
}

/// A regression tree; node 0 is the root. Rows with `x[feature] <=
/// threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Total squared-error decrease per feature over every split.
    pub fn impurity_decrease(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, decrease, .. } = node {
                out[*feature] += decrease;
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Column-major copy of the training matrix plus each column's row order.
pub(crate) struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, |r| r.len());
        let cols: Vec<Vec<f64>> = (0..p).map(|f| x.iter().map(|r| r[f]).collect()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..c.len() as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { cols, order }
    }

    /// Per-feature sorted sample lists where row `r` appears `counts[r]` times.
    fn expand(&self, counts: &[u32]) -> Vec<Vec<u32>> {
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        self.order
            .iter()
            .map(|ord| {
                let mut v = Vec::with_capacity(total);
                for &r in ord {
                    for _ in 0..counts[r as usize] {
                        v.push(r);
                    }
                }
                v
            })
            .collect()
    }
}

/// Grows one tree on the multiset of rows given by `counts`. With `mtry <
/// p`, each split considers a fresh random subset of that many features.
pub(crate) fn grow(
    data: &Presorted,
    y: &[f64],
    counts: &[u32],
    cfg: &TreeConfig,
    mtry: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tree> {
    let p = data.cols.len();
    let mut order = data.expand(counts);
    let n = order.first().map_or(counts.iter().sum::<u32>() as usize, |o| o.len());
    if n == 0 {
        return Err(RegressError::EmptyTraining);
    }
    let min_leaf = cfg.min_samples_leaf.max(1);
    let mut nodes = vec![Node::Leaf { value: 0.0, n }];
    let mut goes_left = vec![false; y.len()];
    let mut scratch: Vec<u32> = Vec::with_capacity(n);
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    // With no features every node is a leaf; keep a row list for the means.
    let rows_only: Vec<u32> = if p == 0 {
        counts
            .iter()
            .enumerate()
            .flat_map(|(r, &c)| std::iter::repeat_n(r as u32, c as usize))
            .collect()
    } else {
        Vec::new()
    };

    while let Some((id, start, end, depth)) = stack.pop() {
        let rows = if p == 0 { &rows_only[start..end] } else { &order[0][start..end] };
        let m = end - start;
        let mean = rows.iter().map(|&r| y[r as usize]).sum::<f64>() / m as f64;
        let sse: f64 = rows.iter().map(|&r| (y[r as usize] - mean).powi(2)).sum();
        nodes[id] = Node::Leaf { value: mean, n: m };
        let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
        if p == 0 || m < 2 * min_leaf || depth_capped || sse == 0.0 {
            continue;
        }

        let features: Vec<usize> = match rng.as_deref_mut() {
            Some(r) if mtry < p => {
                let mut f = sample(r, p, mtry).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let tol = 1e-12 * sse;
        let mut best: Option<(usize, usize, f64)> = None; // feature, split position, decrease
        for &f in &features {
            let col = &data.cols[f];
            let ord = &order[f][start..end];
            let mut left_sum = 0.0;
            for i in 0..m - 1 {
                left_sum += y[ord[i] as usize] - mean;
                let nl = i + 1;
                if nl < min_leaf {
                    continue;
                }
                if m - nl < min_leaf {
                    break;
                }
                if col[ord[i] as usize] == col[ord[i + 1] as usize] {
                    continue;
                }
                let dec = left_sum * left_sum * m as f64 / (nl * (m - nl)) as f64;
                if best.is_none_or(|(_, _, b)| dec > b + tol) {
                    best = Some((f, i, dec));
                }
            }
        }
        let Some((f, pos, dec)) = best else {
            continue;
        };
        let col = &data.cols[f];
        let ord = &order[f][start..end];
        let threshold = midpoint(col[ord[pos] as usize], col[ord[pos + 1] as usize]);
        for &r in ord {
            goes_left[r as usize] = col[r as usize] <= threshold;
        }
        let n_left = pos + 1;
        for o in order.iter_mut() {
            stable_partition(&mut o[start..end], &goes_left, &mut scratch);
        }
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0, n: n_left });
        nodes.push(Node::Leaf { value: 0.0, n: m - n_left });
        nodes[id] = Node::Split {
            feature: f,
            threshold,
            left,
            right,
            n: m,
            decrease: dec,
        };
        stack.push((right, start + n_left, end, depth + 1));
        stack.push((left, start, start + n_left, depth + 1));
    }
    Ok(Tree { nodes, n_features: p })
}

/// Midpoint of two consecutive distinct values that always separates them.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + 0.5 * (b - a);
    if m < b {
        m
    } else {
        a
    }
}

fn stable_partition(slice: &mut [u32], goes_left: &[bool], scratch: &mut Vec<u32>) {
    scratch.clear();
    let mut w = 0;
    for i in 0..slice.len() {
        let r = slice[i];
        if goes_left[r as usize] {
            slice[w] = r;
            w += 1;
        } else {
            scratch.push(r);
        }
    }
    slice[w..].copy_from_slice(scratch);
}

/// Single CART on every row once, considering all features at each split.
pub fn train_cart(x: &[Vec<f64>], y: &[f64], cfg: &TreeConfig) -> Result<Tree> {
    super::check_xy(x, y)?;
    let data = Presorted::new(x);
    grow(&data, y, &vec![1; y.len()], cfg, data.cols.len(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn one_row_is_a_leaf() {
        let t = train_cart(&[vec![1.0, 2.0]], &[7.5], &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 7.5, n: 1 }]);
    }

    #[test]
    fn interpolates_distinct_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..60).map(|_| rng.random::<f64>() * 10.0).collect();
        let t = train_cart(&x, &y, &TreeConfig::default()).unwrap();
        for (r, v) in x.iter().zip(&y) {
            assert_eq!(t.predict_row(r), *v);
        }
    }

    #[test]
    fn respects_leaf_size_and_depth() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i * i) as f64).collect();
        let t = train_cart(&x, &y, &TreeConfig { min_samples_leaf: 5, max_depth: None }).unwrap();
        assert!(t.nodes.iter().all(|n| match n {
            Node::Leaf { n, .. } => *n >= 5,
            _ => true,
        }));
        let t = train_cart(&x, &y, &TreeConfig { min_samples_leaf: 1, max_depth: Some(2) }).unwrap();
        assert!(t.depth() <= 2);
    }

    #[test]
    fn decrease_matches_hand_trace() {
        // Root splits x <= 2.5 : y {1, 2} vs {10, 11, 12, 20}.
        let x: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|&v| vec![v]).collect();
        let y = [1.0, 2.0, 10.0, 11.0, 12.0, 20.0];
        let t = train_cart(&x, &y, &TreeConfig::default()).unwrap();
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>()
        };
        match &t.nodes[0] {
            Node::Split { threshold, decrease, .. } => {
                assert_eq!(*threshold, 2.5);
                let expected = sse(&y) - sse(&y[..2]) - sse(&y[2..]);
                assert!((decrease - expected).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        // Every split's decrease sums to the root SSE for a fully grown tree.
        let total: f64 = t.impurity_decrease().iter().sum();
        assert!((total - sse(&y)).abs() < 1e-9);
    }
}

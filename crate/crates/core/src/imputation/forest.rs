//! Random-forest regression: bagged CART trees with random feature subsets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImputeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    /// Features tried at each split.
    pub mtry: usize,
    /// Minimum rows per leaf.
    pub min_node: usize,
    pub seed: u64,
    /// Grow each tree on a bootstrap resample; otherwise on every row.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 500, mtry: 7, min_node: 2, seed: 1, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag R^2; `None` without bootstrap, or when undefined.
    pub oob_r2: Option<f64>,
}

impl ForestModel {
    /// Mean of the tree outputs, accumulated in tree order.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ImputeError> {
        if x.len() != self.n_features {
            return Err(ImputeError::FeatureCount { expected: self.n_features, got: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

fn sse(idx: &[usize], y: &[f64]) -> f64 {
    let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - m) * (y[i] - m)).sum()
}

fn mean(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    min_node: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    /// Best split of `idx` over a random feature subset:
    /// `(feature, threshold, child sse)`.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let p = self.x[0].len();
        let features = sample(&mut self.rng, p, self.mtry);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        let n = idx.len();
        for f in features.iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let v = self.y[order[k]];
                s += v;
                sq += v * v;
                let nl = k + 1;
                let nr = n - nl;
                let (xl, xr) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if xl == xr || nl < self.min_node || nr < self.min_node {
                    continue;
                }
                let left = sq - s * s / nl as f64;
                let right = (total_sq - sq) - (total - s) * (total - s) / nr as f64;
                let cost = left + right;
                if best.is_none_or(|(_, _, c)| cost < c) {
                    let mid = xl + (xr - xl) / 2.0;
                    best = Some((f, if mid < xr { mid } else { xl }, cost));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean(&idx, self.y)));
        let parent = sse(&idx, self.y);
        if idx.len() < 2 * self.min_node || parent == 0.0 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        // exact re-evaluation; a split that does not reduce the error is refused
        if sse(&l, self.y) + sse(&r, self.y) >= parent {
            return id;
        }
        debug_assert!(l.len() >= self.min_node && r.len() >= self.min_node);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

/// Random source of tree `b`: the master seed on its own ChaCha stream.
fn tree_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Fits a forest on row-major features `x` and targets `y`.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<ForestModel, ImputeError> {
    let n = y.len();
    if n == 0 || x.len() != n {
        return Err(ImputeError::Shape { rows: x.len(), targets: n });
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(ImputeError::FeatureCount { expected: p, got: x.iter().map(Vec::len).find(|&l| l != p).unwrap_or(p) });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ImputeError::NonFinite);
    }
    if params.mtry == 0 || params.mtry > p {
        return Err(ImputeError::Mtry { mtry: params.mtry, features: p });
    }
    if params.trees == 0 || params.min_node == 0 {
        return Err(ImputeError::BadParams);
    }

    let grown: Vec<(Tree, Vec<bool>)> = (0..params.trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree_rng(params.seed, b);
            let idx: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            let mut in_bag = vec![false; n];
            idx.iter().for_each(|&i| in_bag[i] = true);
            let mut g = Grower { x, y, mtry: params.mtry, min_node: params.min_node, rng, nodes: Vec::new() };
            g.grow(idx);
            (Tree { nodes: g.nodes }, in_bag)
        })
        .collect();

    let oob_r2 = params.bootstrap.then(|| oob_r2(x, y, &grown)).flatten();
    Ok(ForestModel { params: *params, n_features: p, trees: grown.into_iter().map(|(t, _)| t).collect(), oob_r2 })
}

fn oob_r2(x: &[Vec<f64>], y: &[f64], grown: &[(Tree, Vec<bool>)]) -> Option<f64> {
    let mut pairs = Vec::new();
    for (i, row) in x.iter().enumerate() {
        let (s, k) = grown
            .iter()
            .filter(|(_, bag)| !bag[i])
            .fold((0.0, 0usize), |(s, k), (t, _)| (s + t.predict(row), k + 1));
        if k > 0 {
            pairs.push((y[i], s / k as f64));
        }
    }
    if pairs.len() < 2 {
        return None;
    }
    let m = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let tss: f64 = pairs.iter().map(|p| (p.0 - m).powi(2)).sum();
    let rss: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    (tss > 0.0).then(|| 1.0 - rss / tss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..3.0), rng.random_range(0.0..2.0)]).collect();
        let y = x.iter().map(|r| 10.0 * r[0].sin() * r[1]).collect();
        (x, y)
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = grid(40, 1);
        let y = vec![7.0; 40];
        let f = fit_forest(&x, &y, &ForestParams { trees: 20, mtry: 2, ..ForestParams::default() }).unwrap();
        assert!(x.iter().all(|r| f.predict(r).unwrap() == 7.0));
        assert!(f.trees.iter().all(|t| t.leaves() == 1));
    }

    #[test]
    fn single_leaf_predicts_mean() {
        let (x, y) = grid(10, 2);
        let params = ForestParams { trees: 1, mtry: 1, min_node: 10, seed: 0, bootstrap: false };
        let f = fit_forest(&x, &y, &params).unwrap();
        let m = y.iter().sum::<f64>() / 10.0;
        assert!(x.iter().all(|r| (f.predict(r).unwrap() - m).abs() < 1e-12));
    }

    #[test]
    fn predictions_stay_within_target_range() {
        let (x, y) = grid(100, 3);
        let f = fit_forest(&x, &y, &ForestParams { trees: 30, mtry: 2, ..ForestParams::default() }).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (xt, _) = grid(50, 4);
        assert!(xt.iter().all(|r| {
            let p = f.predict(r).unwrap();
            p >= lo && p <= hi
        }));
        assert!(f.oob_r2.unwrap() > 0.5);
    }

    #[test]
    fn leaves_respect_min_node() {
        let (x, y) = grid(60, 5);
        let params = ForestParams { trees: 5, mtry: 2, min_node: 4, seed: 9, bootstrap: false };
        let f = fit_forest(&x, &y, &params).unwrap();
        for t in &f.trees {
            let mut counts = vec![0usize; t.nodes.len()];
            for r in &x {
                let mut i = 0;
                while let Node::Split { feature, threshold, left, right } = t.nodes[i] {
                    i = if r[feature] <= threshold { left } else { right };
                }
                counts[i] += 1;
            }
            for (i, n) in t.nodes.iter().enumerate() {
                if matches!(n, Node::Leaf(_)) {
                    assert!(counts[i] >= 4);
                }
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let (x, y) = grid(10, 6);
        assert!(matches!(
            fit_forest(&x, &y, &ForestParams { mtry: 3, ..ForestParams::default() }),
            Err(ImputeError::Mtry { mtry: 3, features: 2 })
        ));
        let f = fit_forest(&x, &y, &ForestParams { trees: 2, mtry: 2, ..ForestParams::default() }).unwrap();
        assert!(matches!(f.predict(&[1.0]), Err(ImputeError::FeatureCount { expected: 2, got: 1 })));
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = grid(50, 7);
        let p = ForestParams { trees: 8, mtry: 1, ..ForestParams::default() };
        assert_eq!(fit_forest(&x, &y, &p).unwrap(), fit_forest(&x, &y, &p).unwrap());
        let other = fit_forest(&x, &y, &ForestParams { seed: 2, ..p }).unwrap();
        assert_ne!(fit_forest(&x, &y, &p).unwrap().trees, other.trees);
    }
}

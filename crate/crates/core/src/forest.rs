//! Regression trees and random forests.
//!
//! Trees are grown by exhaustive RSS-minimizing binary splits over a random
//! subset of `m` features per node. The forest grows unpruned trees on
//! bootstrap samples; [`Tree::prune`] implements cost-complexity pruning for
//! standalone CART diagnostics.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Parent RSS minus the summed child RSS.
    pub decrease: f64,
}

/// Every node keeps its training summary so a split node can be collapsed
/// into a leaf during pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub n: usize,
    pub value: f64,
    pub rss: f64,
    pub split: Option<Split>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// Arena-allocated binary tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Features tried per split.
    pub m: usize,
    /// Minimum rows in each child of a split.
    pub min_node: usize,
}

/// Grow a regression tree on `rows` of `(x, y)`.
///
/// At each node `m` features are drawn without replacement and every midpoint
/// between consecutive distinct values is tried; rows with `x ≤ threshold` go
/// left. Ties in RSS go to the lower feature index, then the lower threshold.
/// A node becomes a leaf when it has fewer than `2·min_node` rows, is pure,
/// or no admissible split lowers the RSS.
pub fn grow_tree<R: Rng + ?Sized>(x: ArrayView2<f64>, y: &[f64], rows: &[usize], params: TreeParams, rng: &mut R) -> Tree {
    assert!(!rows.is_empty(), "grow_tree needs at least one row");
    let p = x.ncols();
    let m = params.m.clamp(1, p.max(1));
    let min_node = params.min_node.max(1);
    let mut nodes = Vec::new();
    // Depth-first with an explicit stack; children get consecutive ids.
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
    nodes.push(summarize(y, rows));
    stack.push((0, rows.to_vec()));
    let mut order = Vec::with_capacity(rows.len());
    while let Some((id, idx)) = stack.pop() {
        let node = &nodes[id];
        let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if idx.len() < 2 * min_node || pure || p == 0 {
            continue;
        }
        let mean = node.value;
        let parent_rss = node.rss;
        let features = {
            let mut f = index::sample(rng, p, m).into_vec();
            f.sort_unstable();
            f
        };
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            order.clear();
            order.extend_from_slice(&idx);
            order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
            if let Some((gain, thr)) = best_threshold(x, y, &order, f, mean, min_node) {
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { continue };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[[i, feature]] <= threshold);
        let left = summarize(y, &left_rows);
        let right = summarize(y, &right_rows);
        let decrease = parent_rss - left.rss - right.rss;
        if !(decrease > 1e-12 * parent_rss) {
            continue;
        }
        let l = nodes.len();
        nodes.push(left);
        nodes.push(right);
        nodes[id].split = Some(Split {
            feature,
            threshold,
            left: l,
            right: l + 1,
            decrease,
        });
        stack.push((l + 1, right_rows));
        stack.push((l, left_rows));
    }
    Tree { nodes }
}

/// Mean and RSS of `y` over `rows`, summed in the given row order.
fn summarize(y: &[f64], rows: &[usize]) -> Node {
    let n = rows.len();
    let value = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let rss = rows.iter().map(|&i| (y[i] - value).powi(2)).sum();
    Node { n, value, rss, split: None }
}

/// Best threshold for one feature by a sorted sweep. Returns the between-group
/// sum of squares gain (larger is better) and the midpoint threshold.
fn best_threshold(x: ArrayView2<f64>, y: &[f64], sorted: &[usize], f: usize, mean: f64, min_node: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let total: f64 = sorted.iter().map(|&i| y[i] - mean).sum();
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        left_sum += y[sorted[k]] - mean;
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_node {
            continue;
        }
        if nr < min_node {
            break;
        }
        let (a, b) = (x[[sorted[k], f]], x[[sorted[k + 1], f]]);
        if a == b {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
        if best.is_none_or(|(g, _)| gain > g) {
            let mid = a + (b - a) / 2.0;
            best = Some((gain, if mid < b { mid } else { a }));
        }
    }
    best
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_for(row)].value
    }

    /// Index of the leaf a feature row is routed to.
    pub fn leaf_for(&self, row: &[f64]) -> usize {
        let mut id = 0;
        while let Some(s) = self.nodes[id].split {
            id = if row[s.feature] <= s.threshold { s.left } else { s.right };
        }
        id
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, id: usize) -> usize {
            match t.nodes[id].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    /// Sum of leaf RSS (training error of the tree).
    pub fn rss(&self) -> f64 {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.rss).sum()
    }

    /// `RSS(T) + α·|T|`.
    pub fn cost(&self, alpha: f64) -> f64 {
        self.rss() + alpha * self.n_leaves() as f64
    }

    /// Per-feature summed RSS decrease over this tree's splits.
    pub fn importance(&self, p: usize) -> Vec<f64> {
        let mut imp = vec![0.0; p];
        for s in self.nodes.iter().filter_map(|n| n.split) {
            imp[s.feature] += s.decrease;
        }
        imp
    }

    /// Copy of the tree with `collapsed` nodes turned into leaves. Ids are
    /// laid out exactly as [`grow_tree`] assigns them.
    fn rebuild(&self, collapsed: &[bool]) -> Tree {
        let mut root = self.nodes[0].clone();
        root.split = None;
        let mut nodes = vec![root];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((old, new)) = stack.pop() {
            let Some(s) = self.nodes[old].split.filter(|_| !collapsed[old]) else { continue };
            let l = nodes.len();
            for child in [s.left, s.right] {
                let mut c = self.nodes[child].clone();
                c.split = None;
                nodes.push(c);
            }
            nodes[new].split = Some(Split { left: l, right: l + 1, ..s });
            stack.push((s.right, l + 1));
            stack.push((s.left, l));
        }
        Tree { nodes }
    }

    /// Weakest-link pruning sequence `(α_k, T_k)`, starting at `(0, T)` and
    /// ending with the root-only tree. `T_k` minimizes `RSS(T) + α·|T|` for
    /// `α ∈ [α_k, α_{k+1})`.
    pub fn cost_complexity_path(&self) -> Vec<(f64, Tree)> {
        let mut collapsed = vec![false; self.nodes.len()];
        let mut path = vec![(0.0, self.rebuild(&collapsed))];
        loop {
            // (leaf rss sum, leaf count) per live subtree, then link strengths.
            let mut g = vec![f64::INFINITY; self.nodes.len()];
            fn walk(t: &Tree, id: usize, collapsed: &[bool], g: &mut [f64]) -> (f64, usize) {
                let node = &t.nodes[id];
                match node.split {
                    Some(s) if !collapsed[id] => {
                        let (rl, nl) = walk(t, s.left, collapsed, g);
                        let (rr, nr) = walk(t, s.right, collapsed, g);
                        let (r, leaves) = (rl + rr, nl + nr);
                        g[id] = (node.rss - r) / (leaves as f64 - 1.0);
                        (r, leaves)
                    }
                    _ => (node.rss, 1),
                }
            }
            walk(self, 0, &collapsed, &mut g);
            let min = g.iter().copied().fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                break;
            }
            let tol = 1e-12 * min.abs().max(1e-300);
            for (c, &gi) in collapsed.iter_mut().zip(&g) {
                if gi <= min + tol {
                    *c = true;
                }
            }
            path.push((min.max(0.0), self.rebuild(&collapsed)));
        }
        path
    }

    /// Subtree minimizing `RSS(T) + α·|T|` (the smallest one on ties).
    pub fn prune(&self, alpha: f64) -> Tree {
        self.cost_complexity_path()
            .into_iter()
            .take_while(|(a, _)| *a <= alpha)
            .last()
            .map(|(_, t)| t)
            .expect("path starts at alpha = 0")
    }

    /// Indented text rendering, one node per line.
    pub fn dump(&self, names: &[String]) -> String {
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize, "")];
        while let Some((id, depth, tag)) = stack.pop() {
            let node = &self.nodes[id];
            let pad = "  ".repeat(depth);
            let _ = write!(out, "{pad}{tag}n={} value={:.6} rss={:.6}", node.n, node.value, node.rss);
            match node.split {
                Some(s) => {
                    let name = names.get(s.feature).map_or_else(|| format!("x{}", s.feature), Clone::clone);
                    let _ = writeln!(out, " split {name} <= {}", s.threshold);
                    stack.push((s.right, depth + 1, "> "));
                    stack.push((s.left, depth + 1, "<= "));
                }
                None => out.push_str(" leaf\n"),
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features per split; `None` means `⌈√p⌉`.
    pub mtry: Option<usize>,
    pub min_node: usize,
    /// Draw an n-row bootstrap sample per tree. Disabling it (with
    /// `mtry = p`) grows the plain deterministic CART tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub m: usize,
    pub min_node: usize,
    pub bootstrap: bool,
    pub seed: u64,
    /// Mean over trees of each feature's summed RSS decrease.
    pub importance: Vec<f64>,
}

pub fn default_mtry(p: usize) -> usize {
    ((p as f64).sqrt().ceil() as usize).clamp(1, p.max(1))
}

/// Fit `n_trees` trees in parallel; tree `b` draws from stream `(seed, b)`.
pub fn fit_forest(names: &[String], x: ArrayView2<f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let (n, p) = x.dim();
    if names.len() != p {
        return Err(Error::SchemaMismatch(format!("{} names for {p} columns", names.len())));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: y.len() });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("forest needs at least 2 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("forest needs at least one feature".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let m = params.mtry.unwrap_or_else(|| default_mtry(p));
    if !(1..=p).contains(&m) {
        return Err(Error::InvalidArgument(format!("mtry must be in 1..={p}, got {m}")));
    }
    if params.min_node == 0 {
        return Err(Error::InvalidArgument("min_node must be at least 1".into()));
    }
    if let Some(j) = (0..p).find(|&j| x.column(j).iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!("feature `{}` has non-finite values", names[j])));
    }
    let tp = TreeParams { m, min_node: params.min_node };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(params.seed, b as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, &rows, tp, &mut r)
        })
        .collect();
    let mut importance = vec![0.0; p];
    for t in &trees {
        for (acc, v) in importance.iter_mut().zip(t.importance(p)) {
            *acc += v;
        }
    }
    for v in &mut importance {
        *v /= trees.len() as f64;
    }
    Ok(Forest {
        feature_names: names.to_vec(),
        trees,
        m,
        min_node: params.min_node,
        bootstrap: params.bootstrap,
        seed: params.seed,
        importance,
    })
}

/// Single CART tree on all rows with every feature tried at each split.
pub fn fit_cart(x: ArrayView2<f64>, y: &[f64], min_node: usize) -> Tree {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut unused = rng::stream(0, 0);
    grow_tree(x, y, &rows, TreeParams { m: x.ncols(), min_node }, &mut unused)
}

/// Per-row mean of the tree predictions.
pub fn predict_forest(forest: &Forest, names: &[String], x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if names != forest.feature_names.as_slice() || x.ncols() != names.len() {
        return Err(Error::SchemaMismatch(format!(
            "forest was fitted on {:?}, got {:?}",
            forest.feature_names, names
        )));
    }
    let b = forest.trees.len() as f64;
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i).to_vec();
            forest.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / b
        })
        .collect())
}

/// Features by importance, descending; ties by name.
pub fn forest_importance(forest: &Forest) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = forest.feature_names.iter().cloned().zip(forest.importance.iter().copied()).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_response_is_single_leaf() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let t = fit_cart(x.view(), &[4.0; 20], 1);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 4.0);
    }

    #[test]
    fn separable_step_gives_one_split() {
        let xs: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let x = Array2::from_shape_vec((12, 1), xs).unwrap();
        let t = fit_cart(x.view(), &y, 1);
        assert_eq!(t.depth(), 1);
        let s = t.nodes[0].split.unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!((t.nodes[s.left].value, t.nodes[s.right].value), (0.0, 1.0));
        assert_eq!(t.rss(), 0.0);
    }

    #[test]
    fn single_leaf_forest_predicts_bootstrap_mean() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let names = vec!["a".to_string()];
        let params = ForestParams { n_trees: 1, min_node: 10, seed: 3, ..Default::default() };
        let f = fit_forest(&names, x.view(), &y, &params).unwrap();
        let mut r = rng::stream(3, 0);
        let rows: Vec<usize> = (0..10).map(|_| r.random_range(0..10)).collect();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / 10.0;
        for v in predict_forest(&f, &names, x.view()).unwrap() {
            assert_eq!(v, mean);
        }
    }

    #[test]
    fn defaults_are_echoed() {
        let x = Array2::from_shape_fn((30, 9), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<f64> = (0..30).map(|i| (i % 5) as f64).collect();
        let names: Vec<String> = (0..9).map(|j| format!("f{j}")).collect();
        let params = ForestParams { n_trees: 4, ..Default::default() };
        let f = fit_forest(&names, x.view(), &y, &params).unwrap();
        assert_eq!(ForestParams::default().n_trees, 500);
        assert_eq!((f.m, f.min_node, f.trees.len()), (3, 5, 4));
        assert!(f.importance.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_feature_ranks_first() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| (i / 10) as f64).collect();
        let names = vec!["only".to_string()];
        let f = fit_forest(&names, x.view(), &y, &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
        assert_eq!(forest_importance(&f)[0].0, "only");
    }

    #[test]
    fn prune_extremes() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| ((i * (3 + j)) % 17) as f64);
        let y: Vec<f64> = (0..40).map(|i| ((i * 5) % 9) as f64).collect();
        let t = fit_cart(x.view(), &y, 2);
        assert_eq!(t.prune(0.0), t);
        let root = t.prune(1e9);
        assert_eq!(root.nodes.len(), 1);
        assert_eq!(root.nodes[0].rss, t.nodes[0].rss);
    }

    #[test]
    fn dump_lists_every_node() {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..12).map(|i| (i / 6) as f64).collect();
        let t = fit_cart(x.view(), &y, 1);
        let text = t.dump(&["dist".to_string()]);
        assert_eq!(text.lines().count(), t.nodes.len());
        assert!(text.starts_with("n=12"));
        assert!(text.contains("split dist <= 5.5"));
    }
}

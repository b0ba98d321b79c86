//! Independent reference implementations used by the integration and
//! acceptance tests. Each one takes a deliberately different route from the
//! library code (brute force, dense algebra, exhaustive enumeration).
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use ndarray_linalg::{Determinant, Solve};
use rand::Rng;
use riskgrid_core::geometry::{Point, Rect};
use riskgrid_core::Boundary;

/// Fraction of `rect` inside `boundary` by Monte-Carlo point sampling.
pub fn mc_coverage<R: Rng>(boundary: &Boundary, rect: &Rect, samples: usize, rng: &mut R) -> f64 {
    let hits = (0..samples)
        .filter(|_| {
            let p = Point::new(rng.random_range(rect.min.x..rect.max.x), rng.random_range(rect.min.y..rect.max.y));
            boundary.contains(p)
        })
        .count();
    hits as f64 / samples as f64
}

/// Point counts per half-open rectangle, scanning every (rect, point) pair.
pub fn brute_force_counts(rects: &[Rect], points: &[Point]) -> Vec<u64> {
    rects
        .iter()
        .map(|r| points.iter().filter(|p| p.x >= r.min.x && p.x < r.max.x && p.y >= r.min.y && p.y < r.max.y).count() as u64)
        .collect()
}

/// Mean of the `k` smallest distances, by full sort.
pub fn brute_force_knn_mean(from: Point, points: &[Point], k: usize) -> f64 {
    let mut d: Vec<f64> = points.iter().map(|p| ((p.x - from.x).powi(2) + (p.y - from.y).powi(2)).sqrt()).collect();
    d.sort_by(f64::total_cmp);
    d[..k].iter().sum::<f64>() / k as f64
}

/// Dense matrix-vector product.
pub fn dense_lag(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    w.dot(&Array1::from(x.to_vec())).to_vec()
}

/// `ln|det(I − ρW)|` from an LU factorization of the dense matrix.
pub fn lu_log_det(w: &Array2<f64>, rho: f64) -> f64 {
    let a = Array2::<f64>::eye(w.nrows()) - w * rho;
    let (_sign, ln) = a.sln_det().expect("LU factorization");
    ln
}

/// Least squares through the normal equations solved by LU.
pub fn ols(z: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let zy = z.t().dot(&Array1::from(y.to_vec()));
    z.t().dot(z).solve(&zy).expect("normal equations").to_vec()
}

/// Gaussian log-likelihood of OLS residuals at the ML variance.
pub fn ols_loglik(z: &Array2<f64>, y: &[f64]) -> f64 {
    let b = ols(z, y);
    let fitted = z.dot(&Array1::from(b));
    let n = y.len() as f64;
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, f)| (a - f).powi(2)).sum();
    let s2 = rss / n;
    -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * n
}

/// Manski likelihood with dense LU determinants and a dense transformed
/// regression: `B = I − δW`, `A = I − λW`, regress `ABy` on `AZ`.
pub fn dense_manski_loglik(w: &Array2<f64>, z: &Array2<f64>, y: &[f64], delta: f64, lambda: f64) -> f64 {
    let n = w.nrows();
    let id = Array2::<f64>::eye(n);
    let a = &id - &(w * lambda);
    let b = &id - &(w * delta);
    let aby = a.dot(&b.dot(&Array1::from(y.to_vec())));
    let az = a.dot(z);
    let g = az.t().dot(&az).solve(&az.t().dot(&aby)).unwrap();
    let r = &aby - &az.dot(&g);
    let s2 = r.dot(&r) / n as f64;
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln() + lu_log_det(w, delta) + lu_log_det(w, lambda) - 0.5 * n as f64
}

/// `(I − ρW)⁻¹ v` by a dense solve.
pub fn dense_inverse_apply(w: &Array2<f64>, rho: f64, v: &[f64]) -> Vec<f64> {
    let a = Array2::<f64>::eye(w.nrows()) - w * rho;
    a.solve(&Array1::from(v.to_vec())).unwrap().to_vec()
}

/// Reference CART tree.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf { n: usize, value: f64 },
    Split { n: usize, feature: usize, threshold: f64, left: Box<OracleNode>, right: Box<OracleNode> },
}

fn rss_of(y: &[f64], rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    rows.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

/// Exhaustive CART: every feature and every midpoint between distinct
/// values is scored by recomputing both child RSS from scratch.
pub fn exhaustive_cart(x: &Array2<f64>, y: &[f64], rows: &[usize], min_node: usize) -> OracleNode {
    let n = rows.len();
    let value = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let leaf = OracleNode::Leaf { n, value };
    if n < 2 * min_node || rows.iter().all(|&i| y[i] == y[rows[0]]) {
        return leaf;
    }
    let parent = rss_of(y, rows);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i, f]]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let thr = (pair[0] + pair[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= thr);
            if l.len() < min_node || r.len() < min_node {
                continue;
            }
            let total = rss_of(y, &l) + rss_of(y, &r);
            if best.is_none_or(|(b, _, _)| total < b) {
                best = Some((total, f, thr));
            }
        }
    }
    match best {
        Some((total, f, thr)) if parent - total > 1e-12 * parent => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= thr);
            OracleNode::Split {
                n,
                feature: f,
                threshold: thr,
                left: Box::new(exhaustive_cart(x, y, &l, min_node)),
                right: Box::new(exhaustive_cart(x, y, &r, min_node)),
            }
        }
        _ => leaf,
    }
}

/// Compare a library tree to the oracle node by node. Thresholds may differ
/// by rounding of the midpoint formula; everything else must be identical.
pub fn same_tree(t: &riskgrid_core::Tree, id: usize, o: &OracleNode) -> Result<(), String> {
    let node = &t.nodes[id];
    match (node.split, o) {
        (None, OracleNode::Leaf { n, value }) => {
            if node.n != *n || node.value != *value {
                return Err(format!("leaf {id}: ({}, {}) vs oracle ({n}, {value})", node.n, node.value));
            }
            Ok(())
        }
        (Some(s), OracleNode::Split { n, feature, threshold, left, right }) => {
            if node.n != *n || s.feature != *feature || (s.threshold - threshold).abs() > 1e-12 * threshold.abs().max(1.0) {
                return Err(format!(
                    "split {id}: (n {}, f {}, t {}) vs oracle (n {n}, f {feature}, t {threshold})",
                    node.n, s.feature, s.threshold
                ));
            }
            same_tree(t, s.left, left)?;
            same_tree(t, s.right, right)
        }
        _ => Err(format!("node {id}: leaf/split mismatch")),
    }
}

/// Minimum of `RSS + α·leaves` over every pruning of the tree, by
/// enumerating all of them.
pub fn enumerate_prunings(t: &riskgrid_core::Tree, id: usize) -> Vec<(f64, usize)> {
    let node = &t.nodes[id];
    let mut out = vec![(node.rss, 1)];
    if let Some(s) = node.split {
        let l = enumerate_prunings(t, s.left);
        let r = enumerate_prunings(t, s.right);
        for a in &l {
            for b in &r {
                out.push((a.0 + b.0, a.1 + b.1));
            }
        }
    }
    out
}

pub fn lattice(side: usize) -> Vec<Point> {
    (0..side * side).map(|i| Point::new((i % side) as f64 * 1000.0 + 500.0, (i / side) as f64 * 1000.0 + 500.0)).collect()
}

/// Standard normal draws by Box–Muller (independent of rand_distr).
pub fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Poisson draw by inversion of the CDF.
pub fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k as f64
}

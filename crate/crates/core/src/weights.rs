//! k-nearest-neighbor spatial weights.
//!
//! `W` is kept sparse (k entries per row) for lag products and densified once
//! for the eigendecomposition behind `ln|I − ρW|`.

use ndarray::Array2;
use ndarray_linalg::{EigVals, EigValsh, UPLO};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Exactly `k` neighbors per cell, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl NeighborGraph {
    pub fn from_lists(k: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut neighbors = Vec::with_capacity(n * k);
        for (i, list) in lists.into_iter().enumerate() {
            if list.len() != k {
                return Err(Error::InvalidArgument(format!("cell {i} has {} neighbors, expected {k}", list.len())));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != k || list.contains(&i) || list.iter().any(|&j| j >= n) {
                return Err(Error::InvalidArgument(format!(
                    "cell {i} neighbor list {list:?} must hold {k} distinct valid ids other than itself"
                )));
            }
            neighbors.extend(list);
        }
        Ok(Self { k, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// True when `j ∈ N(i)` implies `i ∈ N(j)` for every pair.
    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| self.neighbors(i).iter().all(|&j| self.neighbors(j).contains(&i)))
    }
}

/// Each cell's `k` nearest other centroids; exact distance ties go to the
/// smaller cell id.
pub fn knn_neighbors(centroids: &[Point], k: usize) -> Result<NeighborGraph> {
    let n = centroids.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::NotEnoughCells { n, k });
    }
    let lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<usize>> {
            let c = centroids[i];
            let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
            for (j, &p) in centroids.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = c.dist2(p);
                if d == 0.0 {
                    return Err(Error::InvalidArgument(format!("cells {i} and {j} share centroid {c:?}")));
                }
                cand.push((d, j));
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, order);
                cand.truncate(k);
            }
            cand.sort_unstable_by(order);
            Ok(cand.into_iter().map(|(_, j)| j).collect())
        })
        .collect::<Result<_>>()?;
    NeighborGraph::from_lists(k, lists)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStyle {
    /// Row-standardized ("W" style): each row sums to one.
    RowStandardized,
}

/// Sparse row-major weights matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    k: Option<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    style: WeightStyle,
}

/// Equal weights `1/k` on every neighbor.
pub fn row_standardize(graph: &NeighborGraph) -> SpatialWeights {
    let n = graph.len();
    let k = graph.k();
    let w = 1.0 / k as f64;
    SpatialWeights {
        n,
        k: Some(k),
        row_ptr: (0..=n).map(|i| i * k).collect(),
        cols: graph.neighbors.clone(),
        vals: vec![w; n * k],
        style: WeightStyle::RowStandardized,
    }
}

impl SpatialWeights {
    /// Build from `(i, j, w)` triples, e.g. an imported weights file. Rows must
    /// already be row-standardized.
    pub fn from_triples(n: usize, mut triples: Vec<(usize, usize, f64)>) -> Result<Self> {
        triples.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, j, w) in &triples {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!("invalid weight entry ({i}, {j}) for n = {n}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid weight {w} at ({i}, {j})")));
            }
            row_ptr[i + 1] += 1;
        }
        for w in triples.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidArgument(format!("duplicate weight entry ({}, {})", w[0].0, w[0].1)));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let vals: Vec<f64> = triples.iter().map(|t| t.2).collect();
        let mut ks = (0..n).map(|i| row_ptr[i + 1] - row_ptr[i]);
        let first = ks.next().unwrap_or(0);
        let k = if ks.all(|c| c == first) { Some(first) } else { None };
        let out = SpatialWeights {
            n,
            k,
            row_ptr,
            cols,
            vals,
            style: WeightStyle::RowStandardized,
        };
        for i in 0..n {
            let s: f64 = out.row(i).1.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}, expected 1")));
            }
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Common neighbor count, when every row has the same number.
    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn style(&self) -> WeightStyle {
        self.style
    }

    /// Neighbor ids and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// `S₀ = Σᵢⱼ wᵢⱼ`.
    pub fn total_weight(&self) -> f64 {
        (0..self.n).map(|i| self.row_sum(i)).sum()
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &w)| (i, j, w))
        })
    }

    /// Spatial lag `Wx`: the weighted mean of `x` over each cell's neighbors.
    pub fn lag(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        Ok(self.lag_unchecked(x))
    }

    pub(crate) fn lag_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &w)| w * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for (i, j, w) in self.triples() {
            m[[i, j]] = w;
        }
        m
    }
}

/// Free-function form of [`SpatialWeights::lag`].
pub fn spatial_lag(w: &SpatialWeights, x: &[f64]) -> Result<Vec<f64>> {
    w.lag(x)
}

/// Eigenvalues of the dense weights matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Smallest real part over all eigenvalues.
    pub min_real: f64,
    /// Largest real part over all eigenvalues.
    pub max_real: f64,
}

/// Imaginary parts at or below this are treated as round-off.
const IMAG_TOL: f64 = 1e-10;

pub fn spectrum(w: &SpatialWeights) -> Result<Spectrum> {
    let n = w.n();
    if n < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 cells".into()));
    }
    let dense = w.to_dense();
    let symmetric = w.triples().all(|(i, j, v)| dense[[j, i]] == v);
    let eigenvalues: Vec<Complex64> = if symmetric {
        dense
            .eigvalsh(UPLO::Lower)
            .map_err(|e| spectrum_failure(w, e))?
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect()
    } else {
        dense.eigvals().map_err(|e| spectrum_failure(w, e))?.to_vec()
    };
    Spectrum::from_eigenvalues(eigenvalues)
}

fn spectrum_failure(w: &SpatialWeights, e: ndarray_linalg::error::LinalgError) -> Error {
    Error::Numeric(format!(
        "eigendecomposition of the {n}x{n} weights matrix failed ({e}); nnz = {nnz}, S0 = {s0}",
        n = w.n(),
        nnz = w.triples().count(),
        s0 = w.total_weight()
    ))
}

impl Spectrum {
    pub fn from_eigenvalues(eigenvalues: Vec<Complex64>) -> Result<Self> {
        if eigenvalues.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
            return Err(Error::Numeric("non-finite eigenvalue in weights spectrum".into()));
        }
        let min_real = eigenvalues.iter().map(|e| e.re).fold(f64::INFINITY, f64::min);
        let max_real = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            eigenvalues,
            min_real,
            max_real,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvalues with a non-negligible imaginary part.
    pub fn complex_count(&self) -> usize {
        self.eigenvalues.iter().filter(|e| e.im.abs() > IMAG_TOL).count()
    }

    /// Open interval `(1/min_real, 1/max_real)` on which `I − ρW` is
    /// nonsingular with positive determinant.
    pub fn admissible_interval(&self) -> (f64, f64) {
        let lo = if self.min_real < 0.0 { 1.0 / self.min_real } else { f64::NEG_INFINITY };
        let hi = if self.max_real > 0.0 { 1.0 / self.max_real } else { f64::INFINITY };
        (lo, hi)
    }

    /// `ln|det(I − ρW)| = Σᵢ ln|1 − ρ·eigᵢ|`.
    ///
    /// A conjugate pair `a ± bi` contributes `ln((1 − ρa)² + (ρb)²)`, so the
    /// sum stays real.
    pub fn log_det(&self, rho: f64) -> f64 {
        if rho == 0.0 {
            return 0.0;
        }
        self.eigenvalues
            .iter()
            .map(|e| {
                if e.im.abs() <= IMAG_TOL {
                    (1.0 - rho * e.re).abs().ln()
                } else {
                    let re = 1.0 - rho * e.re;
                    let im = rho * e.im;
                    0.5 * (re * re + im * im).ln()
                }
            })
            .sum()
    }
}

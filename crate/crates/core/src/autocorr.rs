//! Global and local Moran's I.
//!
//! Global inference is a full-relabeling permutation test; local p-values use
//! the conditional-moment normal approximation by default, with a conditional
//! permutation mode for parity checks.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::two_sided_normal_p;
use crate::rng;
use crate::weights::SpatialWeights;

/// Centered values `y − ȳ`; errors when `y` is constant or too short.
fn centered(y: &[f64], w: &SpatialWeights) -> Result<Vec<f64>> {
    if y.len() != w.n() {
        return Err(Error::LengthMismatch {
            expected: w.n(),
            actual: y.len(),
        });
    }
    if y.len() < 3 {
        return Err(Error::InvalidArgument(format!("Moran's I needs n >= 3, got {}", y.len())));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::ZeroVariance("y".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok(y.iter().map(|v| v - mean).collect())
}

/// `Σᵢ zᵢ (Wz)ᵢ`.
fn cross_product(z: &[f64], w: &SpatialWeights) -> f64 {
    (0..w.n())
        .map(|i| {
            let (cols, vals) = w.row(i);
            z[i] * cols.iter().zip(vals).map(|(&j, &v)| v * z[j]).sum::<f64>()
        })
        .sum()
}

fn moran_from_centered(z: &[f64], w: &SpatialWeights, s0: f64, ss: f64) -> f64 {
    (z.len() as f64 / s0) * cross_product(z, w) / ss
}

/// `I = (n/S₀) · Σᵢⱼ wᵢⱼ zᵢ zⱼ / Σᵢ zᵢ²` with `z = y − ȳ`.
pub fn global_moran(y: &[f64], w: &SpatialWeights) -> Result<f64> {
    let z = centered(y, w)?;
    let ss: f64 = z.iter().map(|v| v * v).sum();
    Ok(moran_from_centered(&z, w, w.total_weight(), ss))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Positive autocorrelation (clustering).
    #[default]
    Greater,
    Less,
    TwoSided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMoranResult {
    pub statistic: f64,
    /// `−1/(n−1)`.
    pub expected: f64,
    pub pseudo_p: f64,
    /// Simulated statistics at least as extreme as the observed one (for the
    /// two-sided test, the smaller tail count).
    pub n_extreme: usize,
    pub n_sims: usize,
    pub seed: u64,
    pub alternative: Alternative,
    #[serde(skip)]
    pub simulated: Vec<f64>,
}

/// Permutation test for global Moran's I.
///
/// Each replicate relabels all `n` values uniformly at random on its own RNG
/// stream `(seed, replicate)`. The pseudo p-value is `(N_extreme + 1)/(N + 1)`
/// where a simulated value equal to the observed one counts as extreme.
pub fn moran_permutation_test(
    y: &[f64],
    w: &SpatialWeights,
    n_sims: usize,
    seed: u64,
    alternative: Alternative,
) -> Result<GlobalMoranResult> {
    if n_sims < 99 {
        return Err(Error::InvalidArgument(format!("n_sims must be at least 99, got {n_sims}")));
    }
    let z = centered(y, w)?;
    let ss: f64 = z.iter().map(|v| v * v).sum();
    let s0 = w.total_weight();
    let observed = moran_from_centered(&z, w, s0, ss);
    let simulated: Vec<f64> = (0..n_sims)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let mut perm = z.clone();
            perm.shuffle(&mut rng);
            moran_from_centered(&perm, w, s0, ss)
        })
        .collect();
    let n_ge = simulated.iter().filter(|&&s| s >= observed).count();
    let n_le = simulated.iter().filter(|&&s| s <= observed).count();
    let denom = (n_sims + 1) as f64;
    let (n_extreme, pseudo_p) = match alternative {
        Alternative::Greater => (n_ge, (n_ge + 1) as f64 / denom),
        Alternative::Less => (n_le, (n_le + 1) as f64 / denom),
        Alternative::TwoSided => {
            let m = n_ge.min(n_le);
            (m, (2.0 * (m + 1) as f64 / denom).min(1.0))
        }
    };
    Ok(GlobalMoranResult {
        statistic: observed,
        expected: -1.0 / (y.len() as f64 - 1.0),
        pseudo_p,
        n_extreme,
        n_sims,
        seed,
        alternative,
        simulated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    HighHigh,
    LowLow,
    HighLow,
    LowHigh,
    NotSignificant,
}

impl ClusterLabel {
    pub const ALL: [ClusterLabel; 5] = [
        ClusterLabel::HighHigh,
        ClusterLabel::LowLow,
        ClusterLabel::HighLow,
        ClusterLabel::LowHigh,
        ClusterLabel::NotSignificant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterLabel::HighHigh => "HighHigh",
            ClusterLabel::LowLow => "LowLow",
            ClusterLabel::HighLow => "HighLow",
            ClusterLabel::LowHigh => "LowHigh",
            ClusterLabel::NotSignificant => "NotSignificant",
        }
    }
}

impl std::fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalMoranResult {
    pub local_i: Vec<f64>,
    pub expected: Vec<f64>,
    /// Conditional variance under randomization; `NaN` in permutation mode.
    pub variance: Vec<f64>,
    pub z_score: Vec<f64>,
    pub p_value: Vec<f64>,
    /// Multiplicity-adjusted p-values; equal to `p_value` until
    /// [`LocalMoranResult::adjust`] is called.
    pub p_adjusted: Vec<f64>,
}

struct LocalParts {
    z: Vec<f64>,
    lag: Vec<f64>,
    m2: f64,
    local_i: Vec<f64>,
}

fn local_parts(y: &[f64], w: &SpatialWeights) -> Result<LocalParts> {
    let z = centered(y, w)?;
    let n = z.len() as f64;
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n;
    let lag = w.lag_unchecked(&z);
    let local_i = z.iter().zip(&lag).map(|(zi, li)| zi * li / m2).collect();
    Ok(LocalParts { z, lag, m2, local_i })
}

/// Local Moran's `Iᵢ = zᵢ Σⱼ wᵢⱼ zⱼ / (Σ z²/n)` with two-sided normal p-values.
///
/// Moments are conditional on `zᵢ` under randomization:
/// `E[Iᵢ] = −wᵢ./(n−1)` and
/// `Var[Iᵢ] = wᵢ⁽²⁾(n − b₂)/(n−1) + (wᵢ.² − wᵢ⁽²⁾)(2b₂ − n)/((n−1)(n−2)) − E[Iᵢ]²`
/// where `b₂ = m₄/m₂²`.
pub fn local_moran(y: &[f64], w: &SpatialWeights) -> Result<LocalMoranResult> {
    let parts = local_parts(y, w)?;
    let n = parts.z.len() as f64;
    let m4 = parts.z.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let b2 = m4 / (parts.m2 * parts.m2);
    let mut expected = Vec::with_capacity(parts.z.len());
    let mut variance = Vec::with_capacity(parts.z.len());
    for i in 0..w.n() {
        let (_, vals) = w.row(i);
        let wi: f64 = vals.iter().sum();
        let wi2: f64 = vals.iter().map(|v| v * v).sum();
        let e = -wi / (n - 1.0);
        let var = wi2 * (n - b2) / (n - 1.0) + (wi * wi - wi2) * (2.0 * b2 - n) / ((n - 1.0) * (n - 2.0)) - e * e;
        expected.push(e);
        variance.push(var);
    }
    let z_score: Vec<f64> = parts
        .local_i
        .iter()
        .zip(&expected)
        .zip(&variance)
        .map(|((ii, e), v)| if *v > 0.0 { (ii - e) / v.sqrt() } else { f64::NAN })
        .collect();
    let p_value: Vec<f64> = z_score
        .iter()
        .map(|&z| if z.is_nan() { 1.0 } else { two_sided_normal_p(z) })
        .collect();
    Ok(LocalMoranResult {
        local_i: parts.local_i,
        expected,
        variance,
        z_score,
        p_adjusted: p_value.clone(),
        p_value,
    })
}

/// Local Moran's I with conditional-permutation p-values.
///
/// For cell `i` the other `n − 1` values are resampled without replacement
/// into its neighbor slots; the two-sided pseudo p-value is
/// `min(1, 2·(min(N≥, N≤) + 1)/(N + 1))`.
pub fn local_moran_permutation(y: &[f64], w: &SpatialWeights, n_sims: usize, seed: u64) -> Result<LocalMoranResult> {
    if n_sims < 99 {
        return Err(Error::InvalidArgument(format!("n_sims must be at least 99, got {n_sims}")));
    }
    let parts = local_parts(y, w)?;
    let n = parts.z.len();
    let per_cell: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (_, vals) = w.row(i);
            let mut rng = rng::stream(seed, i as u64);
            let others: Vec<f64> = parts.z.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let observed = parts.local_i[i];
            let (mut n_ge, mut n_le, mut sum, mut sum2) = (0usize, 0usize, 0.0, 0.0);
            for _ in 0..n_sims {
                let picks = index::sample(&mut rng, others.len(), vals.len());
                let lag: f64 = picks.iter().zip(vals).map(|(j, v)| v * others[j]).sum();
                let sim = parts.z[i] * lag / parts.m2;
                n_ge += usize::from(sim >= observed);
                n_le += usize::from(sim <= observed);
                sum += sim;
                sum2 += sim * sim;
            }
            let mean = sum / n_sims as f64;
            let var = (sum2 / n_sims as f64 - mean * mean).max(0.0);
            let p = (2.0 * (n_ge.min(n_le) + 1) as f64 / (n_sims + 1) as f64).min(1.0);
            (mean, var, p)
        })
        .collect();
    let expected: Vec<f64> = per_cell.iter().map(|c| c.0).collect();
    let z_score = parts
        .local_i
        .iter()
        .zip(&per_cell)
        .map(|(ii, c)| if c.1 > 0.0 { (ii - c.0) / c.1.sqrt() } else { f64::NAN })
        .collect();
    let p_value: Vec<f64> = per_cell.iter().map(|c| c.2).collect();
    Ok(LocalMoranResult {
        local_i: parts.local_i,
        expected,
        variance: vec![f64::NAN; n],
        z_score,
        p_adjusted: p_value.clone(),
        p_value,
    })
}

/// `min(1, m·p)` element-wise.
pub fn bonferroni_adjust(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("Bonferroni multiplier must be at least 1".into()));
    }
    check_probabilities(p)?;
    Ok(p.iter().map(|&v| (v * m as f64).min(1.0)).collect())
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(bad) => Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "m")]
pub enum Adjustment {
    None,
    /// Multiply by the number of cells.
    #[default]
    Bonferroni,
    /// Multiply by a fixed `m`.
    BonferroniM(usize),
    /// Multiply cell `i` by its neighbor-set size plus one.
    NeighborhoodBonferroni,
}

impl LocalMoranResult {
    pub fn adjust(&mut self, w: &SpatialWeights, method: Adjustment) -> Result<()> {
        self.p_adjusted = match method {
            Adjustment::None => self.p_value.clone(),
            Adjustment::Bonferroni => bonferroni_adjust(&self.p_value, self.p_value.len())?,
            Adjustment::BonferroniM(m) => bonferroni_adjust(&self.p_value, m)?,
            Adjustment::NeighborhoodBonferroni => {
                check_probabilities(&self.p_value)?;
                self.p_value
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (p * (w.row(i).0.len() + 1) as f64).min(1.0))
                    .collect()
            }
        };
        Ok(())
    }
}

/// LISA quadrant labels for cells with `p_adjusted < alpha`.
pub fn classify_clusters(
    y: &[f64],
    w: &SpatialWeights,
    result: &LocalMoranResult,
    alpha: f64,
) -> Result<Vec<ClusterLabel>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let parts = local_parts(y, w)?;
    Ok((0..parts.z.len())
        .map(|i| {
            if !(result.p_adjusted[i] < alpha) {
                return ClusterLabel::NotSignificant;
            }
            match (parts.z[i] > 0.0, parts.lag[i] > 0.0) {
                (true, true) => ClusterLabel::HighHigh,
                (false, false) => ClusterLabel::LowLow,
                (true, false) => ClusterLabel::HighLow,
                (false, true) => ClusterLabel::LowHigh,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{knn_neighbors, row_standardize, NeighborGraph};
    use crate::geometry::Point;
    use approx::assert_abs_diff_eq;

    fn ring4() -> SpatialWeights {
        row_standardize(&NeighborGraph::from_lists(2, vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![2, 0]]).unwrap())
    }

    fn lattice_w(cols: usize, rows: usize, k: usize) -> SpatialWeights {
        let pts: Vec<Point> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| Point::new(c as f64, r as f64)))
            .collect();
        row_standardize(&knn_neighbors(&pts, k).unwrap())
    }

    #[test]
    fn ring_fixture() {
        let w = ring4();
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(global_moran(&y, &w).unwrap(), -0.2, epsilon = 1e-12);
        let local = local_moran(&y, &w).unwrap();
        for (a, b) in local.local_i.iter().zip([-0.6, 0.2, 0.2, -0.6]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(local.local_i.iter().sum::<f64>(), -0.8, epsilon = 1e-12);
    }

    #[test]
    fn constant_y_is_rejected() {
        assert!(matches!(global_moran(&[2.0; 4], &ring4()), Err(Error::ZeroVariance(_))));
        assert!(matches!(local_moran(&[2.0; 4], &ring4()), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn permutation_p_value_floor() {
        // Strong gradient: no relabeling of 100 cells beats the observed I.
        let w = lattice_w(10, 10, 8);
        let y: Vec<f64> = (0..100).map(|i| (i / 10) as f64 + (i % 10) as f64).collect();
        let res = moran_permutation_test(&y, &w, 999, 42, Alternative::Greater).unwrap();
        assert_eq!(res.n_extreme, 0);
        assert_abs_diff_eq!(res.pseudo_p, 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(res.expected, -1.0 / 99.0);
    }

    #[test]
    fn ties_count_as_extreme() {
        // With 4 cells there are only 24 labelings, so the observed one recurs.
        let w = ring4();
        let y = [1.0, 1.0, 0.0, 0.0];
        let res = moran_permutation_test(&y, &w, 99, 1, Alternative::Greater).unwrap();
        assert!(res.simulated.iter().any(|&s| s == res.statistic));
        assert!(res.pseudo_p > 1.0 / 100.0);
    }

    #[test]
    fn permutation_is_deterministic() {
        let w = lattice_w(6, 6, 4);
        let y: Vec<f64> = (0..36).map(|i| ((i * 7919) % 13) as f64).collect();
        let a = moran_permutation_test(&y, &w, 199, 9, Alternative::TwoSided).unwrap();
        let b = moran_permutation_test(&y, &w, 199, 9, Alternative::TwoSided).unwrap();
        assert_eq!(a, b);
        assert!(moran_permutation_test(&y, &w, 10, 9, Alternative::Greater).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert_abs_diff_eq!(bonferroni_adjust(&[0.001], 10).unwrap()[0], 0.01, epsilon = 1e-15);
        assert_eq!(bonferroni_adjust(&[0.5], 10).unwrap(), vec![1.0]);
        assert_eq!(bonferroni_adjust(&[0.2, 0.03], 1).unwrap(), vec![0.2, 0.03]);
        assert!(bonferroni_adjust(&[1.2], 3).is_err());
        assert!(bonferroni_adjust(&[0.1], 0).is_err());
    }

    #[test]
    fn neighborhood_adjustment() {
        let w = ring4();
        let mut res = local_moran(&[1.0, 2.0, 3.0, 4.0], &w).unwrap();
        res.adjust(&w, Adjustment::NeighborhoodBonferroni).unwrap();
        for (p, pa) in res.p_value.iter().zip(&res.p_adjusted) {
            assert_abs_diff_eq!(*pa, (p * 3.0).min(1.0));
        }
    }

    #[test]
    fn quadrant_rule() {
        let w = ring4();
        let y = [1.0, 2.0, 3.0, 4.0];
        let mut res = local_moran(&y, &w).unwrap();
        res.p_adjusted = vec![1.0; 4];
        assert!(classify_clusters(&y, &w, &res, 0.05).unwrap().iter().all(|l| *l == ClusterLabel::NotSignificant));
        res.p_adjusted = vec![0.0; 4];
        // z = (-1.5, -0.5, 0.5, 1.5), lag(z) = (0.5, -0.5, 0.5, -0.5)
        assert_eq!(
            classify_clusters(&y, &w, &res, 0.05).unwrap(),
            vec![ClusterLabel::LowHigh, ClusterLabel::LowLow, ClusterLabel::HighHigh, ClusterLabel::HighLow]
        );
        assert!(classify_clusters(&y, &w, &res, 1.5).is_err());
    }

    #[test]
    fn conditional_permutation_agrees_in_sign() {
        let w = lattice_w(8, 8, 8);
        let y: Vec<f64> = (0..64).map(|i| if (i % 8) < 3 && (i / 8) < 3 { 20.0 } else { (i % 3) as f64 }).collect();
        let perm = local_moran_permutation(&y, &w, 499, 3, ).unwrap();
        let analytic = local_moran(&y, &w).unwrap();
        assert_eq!(perm.local_i, analytic.local_i);
        // core of the block is significant under both
        assert!(perm.p_value[9] < 0.01 && analytic.p_value[9] < 0.01);
    }
}

//! Spatial Durbin error model and the Manski (general nesting) model.
//!
//! Both are estimated by maximizing the likelihood concentrated over the
//! spatial parameters: for fixed `(δ, λ)` the coefficients and error variance
//! have closed forms, so only a one- or two-dimensional search remains.
//!
//! ```text
//! SDEM:    y = Zγ + u,          u = λWu + ε
//! Manski:  y = δWy + Zγ + u,    u = λWu + ε       with Z = [1 | X | WX]
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Inverse, Solve};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coef::{Coefficient, INTERCEPT};
use crate::error::{Error, Result};
use crate::linalg::{dependent_columns, inverse_spd, solve_spd, symmetric_condition_number};
use crate::optim::{brent_max, nelder_mead_max, numerical_hessian};
use crate::weights::{SpatialWeights, Spectrum};

pub const LAG_PREFIX: &str = "lag_";

/// Design matrix `[1 | X | WX]` and its column names.
#[derive(Clone, Debug)]
pub struct SpatialDesign {
    pub z: Array2<f64>,
    pub names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Indices into the features whose lag is kept in `z`.
    pub lagged: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SpatialDesign {
    pub fn n_cols(&self) -> usize {
        self.z.ncols()
    }

    /// Build the same column layout for new feature rows on the same weights
    /// (e.g. a holdout epoch on the same grid).
    pub fn apply(&self, names: &[String], x: ArrayView2<f64>, w: &SpatialWeights) -> Result<Array2<f64>> {
        if names != self.feature_names.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "design was built on {:?}, got {:?}",
                self.feature_names, names
            )));
        }
        let (z, _) = stack_design(x, w, &self.lagged)?;
        Ok(z)
    }
}

fn stack_design(x: ArrayView2<f64>, w: &SpatialWeights, lagged: &[usize]) -> Result<(Array2<f64>, Vec<Vec<f64>>)> {
    let (n, p) = x.dim();
    if n != w.n() {
        return Err(Error::LengthMismatch { expected: w.n(), actual: n });
    }
    let lags: Vec<Vec<f64>> = lagged.iter().map(|&j| w.lag_unchecked(&x.column(j).to_vec())).collect();
    let mut z = Array2::ones((n, 1 + p + lags.len()));
    z.slice_mut(s![.., 1..=p]).assign(&x);
    for (c, lag) in lags.iter().enumerate() {
        z.column_mut(1 + p + c).assign(&Array1::from(lag.clone()));
    }
    Ok((z, lags))
}

fn same_column(a: &[f64], b: ndarray::ArrayView1<f64>) -> bool {
    let scale = a.iter().chain(b.iter()).fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() <= 1e-12 * scale)
}

/// `Z = [1 | X | WX]`, dropping any lag column that duplicates a column
/// already present (a constant feature is its own lag). No rank check.
pub fn augment_with_lags(names: &[String], x: ArrayView2<f64>, w: &SpatialWeights) -> Result<SpatialDesign> {
    let (n, p) = x.dim();
    if names.len() != p {
        return Err(Error::SchemaMismatch(format!("{} names for {p} columns", names.len())));
    }
    if n != w.n() {
        return Err(Error::LengthMismatch { expected: w.n(), actual: n });
    }
    if let Some(j) = (0..p).find(|&j| x.column(j).iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!("feature `{}` has non-finite values", names[j])));
    }
    let all: Vec<usize> = (0..p).collect();
    let (full, lags) = stack_design(x, w, &all)?;
    let mut lagged = Vec::new();
    let mut warnings = Vec::new();
    for (j, lag) in lags.iter().enumerate() {
        let kept = (0..=p + lagged.len()).map(|c| if c <= p { c } else { 1 + p + lagged[c - p - 1] });
        if let Some(c) = kept.into_iter().find(|&c| same_column(lag, full.column(c))) {
            let other = if c == 0 { INTERCEPT.to_string() } else if c <= p { names[c - 1].clone() } else { format!("{LAG_PREFIX}{}", names[c - p - 1]) };
            let msg = format!("dropped `{LAG_PREFIX}{}`: identical to `{other}`", names[j]);
            log::warn!("spatial design: {msg}");
            warnings.push(msg);
        } else {
            lagged.push(j);
        }
    }
    let (z, _) = stack_design(x, w, &lagged)?;
    let mut col_names = vec![INTERCEPT.to_string()];
    col_names.extend(names.iter().cloned());
    col_names.extend(lagged.iter().map(|&j| format!("{LAG_PREFIX}{}", names[j])));
    Ok(SpatialDesign {
        z,
        names: col_names,
        feature_names: names.to_vec(),
        lagged,
        warnings,
    })
}

/// [`augment_with_lags`] followed by a full-column-rank check.
pub fn build_spatial_design(names: &[String], x: ArrayView2<f64>, w: &SpatialWeights) -> Result<SpatialDesign> {
    let design = augment_with_lags(names, x, w)?;
    // Scale columns to unit norm first so the tolerance is unit-free.
    let mut zs = design.z.clone();
    for mut col in zs.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let dependent = dependent_columns(zs.view(), 1e-10);
    if !dependent.is_empty() {
        return Err(Error::Collinear(dependent.into_iter().map(|c| design.names[c].clone()).collect()));
    }
    Ok(design)
}

/// Admissible box for δ and λ: `(1/min_real + 1e-6, 1/max_real − 1e-6)`.
pub fn parameter_box(spectrum: &Spectrum) -> (f64, f64) {
    let (lo, hi) = spectrum.admissible_interval();
    let lo = if lo.is_finite() { lo } else { -1.0 };
    let hi = if hi.is_finite() { hi.min(1.0) } else { 1.0 };
    (lo + 1e-6, hi - 1e-6)
}

fn check_domain(name: &'static str, value: f64, bounds: (f64, f64)) -> Result<()> {
    if value >= bounds.0 && value <= bounds.1 {
        Ok(())
    } else {
        Err(Error::Domain { name, value, lower: bounds.0, upper: bounds.1 })
    }
}

/// Value of the concentrated likelihood and the closed-form estimates at
/// fixed spatial parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub loglik: f64,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

/// Cross-products of `Z`, `WZ`, `y`, `Wy`, `WWy`, precomputed once per fit so
/// each likelihood evaluation costs one small Cholesky solve plus one pass
/// over the residual.
struct Problem<'a> {
    n: usize,
    z: &'a Array2<f64>,
    wz: Array2<f64>,
    y: Array1<f64>,
    wy: Array1<f64>,
    wwy: Array1<f64>,
    zz: Array2<f64>,
    zwz_sym: Array2<f64>,
    wzwz: Array2<f64>,
    // Z' and (WZ)' times y, Wy, WWy.
    zy: [Array1<f64>; 3],
    wzy: [Array1<f64>; 3],
    spectrum: &'a Spectrum,
    bounds: (f64, f64),
}

impl<'a> Problem<'a> {
    fn new(design: &'a SpatialDesign, y: &[f64], w: &SpatialWeights, spectrum: &'a Spectrum) -> Result<Self> {
        let z = &design.z;
        let n = z.nrows();
        if y.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: y.len() });
        }
        if w.n() != n || spectrum.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: w.n().max(spectrum.len()) });
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("response has non-finite value {v}")));
        }
        let mut wz = Array2::zeros(z.dim());
        for (c, col) in z.axis_iter(Axis(1)).enumerate() {
            wz.column_mut(c).assign(&Array1::from(w.lag_unchecked(&col.to_vec())));
        }
        let wy = w.lag_unchecked(y);
        let wwy = w.lag_unchecked(&wy);
        let (y, wy, wwy) = (Array1::from(y.to_vec()), Array1::from(wy), Array1::from(wwy));
        let zwz = z.t().dot(&wz);
        let zwz_sym = &zwz + &zwz.t();
        Ok(Problem {
            n,
            zz: z.t().dot(z),
            wzwz: wz.t().dot(&wz),
            zy: [z.t().dot(&y), z.t().dot(&wy), z.t().dot(&wwy)],
            wzy: [wz.t().dot(&y), wz.t().dot(&wy), wz.t().dot(&wwy)],
            z,
            wz,
            y,
            wy,
            wwy,
            zwz_sym,
            spectrum,
            bounds: parameter_box(spectrum),
        })
    }

    /// `(I−λW)(I−δW)y − (I−λW)Zγ`.
    fn residual(&self, delta: f64, lambda: f64, gamma: &Array1<f64>) -> Array1<f64> {
        let (s, p) = (delta + lambda, delta * lambda);
        let fitted = self.z.dot(gamma) - self.wz.dot(gamma) * lambda;
        &self.y - &(&self.wy * s) + &(&self.wwy * p) - fitted
    }

    fn profile(&self, delta: f64, lambda: f64) -> Result<Profile> {
        let (s, p) = (delta + lambda, delta * lambda);
        let gram = &self.zz - &(&self.zwz_sym * lambda) + &(&self.wzwz * (lambda * lambda));
        let zr = &self.zy[0] - &(&self.zy[1] * s) + &(&self.zy[2] * p);
        let wzr = &self.wzy[0] - &(&self.wzy[1] * s) + &(&self.wzy[2] * p);
        let rhs = zr - wzr * lambda;
        let gamma = solve_spd(&gram, &rhs)?;
        let v = self.residual(delta, lambda, &gamma);
        let sigma2 = v.dot(&v) / self.n as f64;
        let n = self.n as f64;
        let loglik = -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + self.spectrum.log_det(delta) + self.spectrum.log_det(lambda)
            - 0.5 * n;
        Ok(Profile { loglik, gamma: gamma.to_vec(), sigma2 })
    }

    /// Concentrated likelihood, `-inf` outside the box or on solver failure.
    fn objective(&self, delta: f64, lambda: f64) -> f64 {
        let b = self.bounds;
        if !(delta >= b.0 && delta <= b.1 && lambda >= b.0 && lambda <= b.1) {
            return f64::NEG_INFINITY;
        }
        self.profile(delta, lambda).map_or(f64::NEG_INFINITY, |p| p.loglik)
    }

    /// Unconcentrated log-likelihood.
    fn full_loglik(&self, gamma: &[f64], delta: f64, lambda: f64, sigma2: f64) -> f64 {
        if !(sigma2 > 0.0) {
            return f64::NAN;
        }
        let v = self.residual(delta, lambda, &Array1::from(gamma.to_vec()));
        let n = self.n as f64;
        -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + self.spectrum.log_det(delta) + self.spectrum.log_det(lambda)
            - v.dot(&v) / (2.0 * sigma2)
    }

    /// Grid of multiples of `step` strictly inside `bounds`.
    fn grid(bounds: (f64, f64), step: f64) -> Vec<f64> {
        let lo = (bounds.0 / step).ceil() as i64;
        let hi = (bounds.1 / step).floor() as i64;
        let mut g: Vec<f64> = (lo..=hi).map(|i| i as f64 * step).filter(|v| *v >= bounds.0 && *v <= bounds.1).collect();
        if g.is_empty() {
            g.push(0.5 * (bounds.0 + bounds.1));
        }
        g
    }

    /// Maximize over λ with δ held fixed: grid, then Brent in the bracket
    /// around the best grid point.
    fn maximize_lambda(&self, delta: f64, tol: f64) -> (f64, f64, bool) {
        let grid = Self::grid(self.bounds, 0.05);
        let values: Vec<f64> = grid.par_iter().map(|&l| self.objective(delta, l)).collect();
        let best = argmax(&values);
        let a = if best == 0 { self.bounds.0 } else { grid[best - 1] };
        let b = if best + 1 == grid.len() { self.bounds.1 } else { grid[best + 1] };
        let m = brent_max(|l| self.objective(delta, l), a, b, tol, 500);
        if m.value >= values[best] {
            (m.arg, m.value, m.converged)
        } else {
            (grid[best], values[best], m.converged)
        }
    }

    fn at_boundary(&self, v: f64) -> bool {
        let width = self.bounds.1 - self.bounds.0;
        (v - self.bounds.0).abs() < 1e-6 * width.max(1.0) || (self.bounds.1 - v).abs() < 1e-6 * width.max(1.0)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// SDEM concentrated log-likelihood at `λ`.
pub fn sdem_loglik(lambda: f64, design: &SpatialDesign, y: &[f64], w: &SpatialWeights, spectrum: &Spectrum) -> Result<Profile> {
    let prob = Problem::new(design, y, w, spectrum)?;
    check_domain("lambda", lambda, prob.bounds)?;
    prob.profile(0.0, lambda)
}

/// Manski concentrated log-likelihood at `(δ, λ)`.
pub fn manski_loglik(
    delta: f64,
    lambda: f64,
    design: &SpatialDesign,
    y: &[f64],
    w: &SpatialWeights,
    spectrum: &Spectrum,
) -> Result<Profile> {
    let prob = Problem::new(design, y, w, spectrum)?;
    check_domain("delta", delta, prob.bounds)?;
    check_domain("lambda", lambda, prob.bounds)?;
    prob.profile(delta, lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialOptions {
    /// Optimizer tolerance in the spatial parameters.
    pub tol: f64,
    /// Hessian condition number above which weak identification is reported.
    pub max_condition: f64,
    /// Restrict δ to `[lo, hi]` (Manski only). `Some((0, 0))` reproduces SDEM.
    pub delta_bounds: Option<(f64, f64)>,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_condition: 1e8, delta_bounds: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdemFit {
    pub names: Vec<String>,
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
    pub loglik: f64,
    /// One row per design column, then `lambda`.
    pub coefficients: Vec<Coefficient>,
    pub sigma2_se: Option<f64>,
    pub hessian_condition: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManskiFit {
    pub names: Vec<String>,
    pub gamma: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub loglik: f64,
    /// One row per design column, then `delta` and `lambda`.
    pub coefficients: Vec<Coefficient>,
    pub sigma2_se: Option<f64>,
    pub hessian_condition: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Inference {
    se: Vec<Option<f64>>,
    condition: f64,
}

/// Standard errors from the inverse negative Hessian of the full likelihood
/// in `θ = (γ, spatial..., σ²)`.
fn inference<F: FnMut(&[f64]) -> f64>(f: F, theta: &[f64]) -> Inference {
    let d = theta.len();
    let h: Vec<f64> = theta
        .iter()
        .enumerate()
        .map(|(i, &t)| if i + 1 == d { 1e-5 * t.abs().max(f64::MIN_POSITIVE) } else { 1e-5 * t.abs().max(1.0) })
        .collect();
    let hess = numerical_hessian(f, theta, &h);
    let neg = Array2::from_shape_fn((d, d), |(i, j)| -hess[i][j]);
    if neg.iter().any(|v| !v.is_finite()) {
        return Inference { se: vec![None; d], condition: f64::INFINITY };
    }
    // Condition of the unit-diagonal rescaling, so feature units do not count
    // as weak identification.
    let diag: Vec<f64> = (0..d).map(|i| neg[[i, i]]).collect();
    let condition = if diag.iter().all(|&v| v > 0.0) {
        let scaled = Array2::from_shape_fn((d, d), |(i, j)| neg[[i, j]] / (diag[i] * diag[j]).sqrt());
        symmetric_condition_number(&scaled).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    let cov = inverse_spd(&neg).or_else(|_| neg.inv().map_err(|e| Error::Numeric(e.to_string())));
    let se = match cov {
        Ok(c) => c.diag().iter().map(|&v| (v > 0.0 && v.is_finite()).then(|| v.sqrt())).collect(),
        Err(_) => vec![None; d],
    };
    Inference { se, condition }
}

fn attach_coefficients(names: &[String], gamma: &[f64], extra: &[(&str, f64)], se: &[Option<f64>]) -> Vec<Coefficient> {
    names
        .iter()
        .map(String::as_str)
        .zip(gamma.iter().copied())
        .chain(extra.iter().copied())
        .zip(se)
        .map(|((t, est), &s)| Coefficient::wald(t, est, s))
        .collect()
}

/// Maximum-likelihood SDEM fit.
pub fn fit_sdem(design: &SpatialDesign, y: &[f64], w: &SpatialWeights, spectrum: &Spectrum, opts: &SpatialOptions) -> Result<SdemFit> {
    let prob = Problem::new(design, y, w, spectrum)?;
    let (lambda, _, brent_ok) = prob.maximize_lambda(0.0, opts.tol);
    let prof = prob.profile(0.0, lambda)?;
    let mut warnings = Vec::new();
    let mut converged = brent_ok;
    if !brent_ok {
        warnings.push("lambda search did not reach the requested tolerance".to_string());
    }
    if prob.at_boundary(lambda) {
        converged = false;
        warnings.push(format!("lambda = {lambda} is on the admissible boundary {:?}", prob.bounds));
    }
    let k = prof.gamma.len();
    let mut theta = prof.gamma.clone();
    theta.extend([lambda, prof.sigma2]);
    let inf = inference(|t| prob.full_loglik(&t[..k], 0.0, t[k], t[k + 1]), &theta);
    if inf.condition > opts.max_condition {
        warnings.push(format!("Hessian condition number {:.3e} exceeds {:.0e}: weakly identified", inf.condition, opts.max_condition));
    }
    for msg in &warnings {
        log::warn!("sdem: {msg}");
    }
    Ok(SdemFit {
        names: design.names.clone(),
        coefficients: attach_coefficients(&design.names, &prof.gamma, &[("lambda", lambda)], &inf.se[..k + 1]),
        sigma2_se: inf.se[k + 1],
        gamma: prof.gamma,
        lambda,
        sigma2: prof.sigma2,
        loglik: prof.loglik,
        hessian_condition: inf.condition,
        converged,
        warnings,
    })
}

/// Maximum-likelihood Manski fit: 0.05 grid over the `(δ, λ)` box, then
/// Nelder–Mead from the best grid point.
pub fn fit_manski(design: &SpatialDesign, y: &[f64], w: &SpatialWeights, spectrum: &Spectrum, opts: &SpatialOptions) -> Result<ManskiFit> {
    let prob = Problem::new(design, y, w, spectrum)?;
    let dbox = match opts.delta_bounds {
        Some((lo, hi)) => {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("delta bounds ({lo}, {hi}) are empty")));
            }
            check_domain("delta", lo, prob.bounds)?;
            check_domain("delta", hi, prob.bounds)?;
            (lo, hi)
        }
        None => prob.bounds,
    };
    let mut warnings = Vec::new();
    let (delta, lambda, search_ok) = if dbox.1 - dbox.0 <= 0.0 {
        let (l, _, ok) = prob.maximize_lambda(dbox.0, opts.tol);
        (dbox.0, l, ok)
    } else {
        let dg = Problem::grid(dbox, 0.05);
        let lg = Problem::grid(prob.bounds, 0.05);
        let pts: Vec<(f64, f64)> = dg.iter().flat_map(|&d| lg.iter().map(move |&l| (d, l))).collect();
        let values: Vec<f64> = pts.par_iter().map(|&(d, l)| prob.objective(d, l)).collect();
        let start = pts[argmax(&values)];
        let obj = |p: &[f64]| {
            if p[0] < dbox.0 || p[0] > dbox.1 {
                f64::NEG_INFINITY
            } else {
                prob.objective(p[0], p[1])
            }
        };
        let m = nelder_mead_max(obj, &[start.0, start.1], &[0.05, 0.05], opts.tol, 5000);
        (m.arg[0], m.arg[1], m.converged)
    };
    let prof = prob.profile(delta, lambda)?;
    let mut converged = search_ok;
    if !search_ok {
        warnings.push("(delta, lambda) search did not reach the requested tolerance".to_string());
    }
    let free_delta = dbox.1 > dbox.0;
    let on_delta_edge = free_delta && ((delta - dbox.0).abs() < 1e-6 || (dbox.1 - delta).abs() < 1e-6) && opts.delta_bounds.is_none();
    if prob.at_boundary(lambda) || on_delta_edge || (opts.delta_bounds.is_none() && prob.at_boundary(delta)) {
        converged = false;
        warnings.push(format!("estimate (delta = {delta}, lambda = {lambda}) is on the admissible boundary"));
    }
    let k = prof.gamma.len();
    let mut theta = prof.gamma.clone();
    let (coef_se, sigma2_se, condition);
    if free_delta {
        theta.extend([delta, lambda, prof.sigma2]);
        let inf = inference(|t| prob.full_loglik(&t[..k], t[k], t[k + 1], t[k + 2]), &theta);
        coef_se = inf.se[..k + 2].to_vec();
        sigma2_se = inf.se[k + 2];
        condition = inf.condition;
    } else {
        theta.extend([lambda, prof.sigma2]);
        let inf = inference(|t| prob.full_loglik(&t[..k], delta, t[k], t[k + 1]), &theta);
        let mut se = inf.se[..k].to_vec();
        se.push(None);
        se.push(inf.se[k]);
        coef_se = se;
        sigma2_se = inf.se[k + 1];
        condition = inf.condition;
    }
    if condition > opts.max_condition {
        warnings.push(format!("Hessian condition number {condition:.3e} exceeds {:.0e}: weakly identified", opts.max_condition));
    }
    for msg in &warnings {
        log::warn!("manski: {msg}");
    }
    Ok(ManskiFit {
        names: design.names.clone(),
        coefficients: attach_coefficients(&design.names, &prof.gamma, &[("delta", delta), ("lambda", lambda)], &coef_se),
        sigma2_se,
        gamma: prof.gamma,
        delta,
        lambda,
        sigma2: prof.sigma2,
        loglik: prof.loglik,
        hessian_condition: condition,
        converged,
        warnings,
    })
}

/// A fitted spatial model, for prediction.
#[derive(Clone, Copy, Debug)]
pub enum SpatialFit<'a> {
    Sdem(&'a SdemFit),
    Manski(&'a ManskiFit),
}

/// SDEM: the trend `Zγ̂` (the error process has mean zero).
/// Manski: the reduced form `(I − δ̂W)⁻¹ Zγ̂`, by a dense LU solve.
pub fn predict_spatial(fit: SpatialFit<'_>, z: ArrayView2<f64>, w: &SpatialWeights) -> Result<Vec<f64>> {
    let gamma = match fit {
        SpatialFit::Sdem(f) => &f.gamma,
        SpatialFit::Manski(f) => &f.gamma,
    };
    if z.ncols() != gamma.len() {
        return Err(Error::SchemaMismatch(format!("design has {} columns, model has {}", z.ncols(), gamma.len())));
    }
    let trend = z.dot(&Array1::from(gamma.clone()));
    match fit {
        SpatialFit::Sdem(_) => Ok(trend.to_vec()),
        SpatialFit::Manski(f) if f.delta == 0.0 => Ok(trend.to_vec()),
        SpatialFit::Manski(f) => {
            if z.nrows() != w.n() {
                return Err(Error::LengthMismatch { expected: w.n(), actual: z.nrows() });
            }
            let a = Array2::<f64>::eye(w.n()) - w.to_dense() * f.delta;
            let yhat = a
                .solve(&trend)
                .map_err(|e| Error::Numeric(format!("I - delta W is singular at delta = {} ({e})", f.delta)))?;
            let resid = a.dot(&yhat) - &trend;
            let worst = resid.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let scale = trend.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if !(worst < 1e-8 * scale) {
                return Err(Error::Numeric(format!("reduced-form solve residual {worst:e} too large")));
            }
            Ok(yhat.to_vec())
        }
    }
}

//! Poisson regression with log link, fitted by IRLS.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use statrs::function::gamma::ln_gamma;

use crate::coef::{Coefficient, INTERCEPT};
use crate::error::{Error, Result};
use crate::linalg::{dependent_columns, inverse_spd, solve_spd, weighted_gram};

#[derive(Clone, Debug)]
pub struct PoissonOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change `|Δℓ|/(|ℓ| + 0.1)` for convergence.
    pub tol: f64,
    /// Max absolute score `Xᵀ(y − μ)` on the standardized scale.
    pub score_tol: f64,
    pub max_halvings: usize,
    /// Exposure offset added to the linear predictor. Off by default: cells
    /// have equal area.
    pub offset: Option<Vec<f64>>,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            score_tol: 1e-6,
            max_halvings: 10,
            offset: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonFit {
    pub feature_names: Vec<String>,
    /// Intercept first, then one coefficient per feature, on the original scale.
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub loglik: f64,
    /// Log-likelihood after each accepted IRLS step (index 0 = start).
    pub loglik_trace: Vec<f64>,
    /// Max |score| on the standardized scale at the returned estimate.
    pub max_score: f64,
    pub warnings: Vec<String>,
}

impl PoissonFit {
    pub fn terms(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string()).chain(self.feature_names.iter().cloned()).collect()
    }

    pub fn coefficients(&self) -> Vec<Coefficient> {
        self.terms()
            .into_iter()
            .zip(self.beta.iter().zip(&self.se))
            .map(|(t, (&b, &s))| Coefficient::wald(t, b, Some(s)))
            .collect()
    }
}

pub fn poisson_loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &ei)| yi * ei - ei.exp() - ln_gamma(yi + 1.0))
        .sum()
}

struct Standardized {
    x: Array2<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

/// `[1 | (x − mean)/sd]`, rejecting constant or linearly dependent columns.
fn standardize(names: &[String], x: ArrayView2<f64>) -> Result<Standardized> {
    let (n, p) = x.dim();
    let mut out = Array2::ones((n, p + 1));
    let mut mean = Vec::with_capacity(p);
    let mut sd = Vec::with_capacity(p);
    let mut constant = Vec::new();
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        if !(s > 0.0) {
            constant.push(names[j].clone());
        }
        for (i, v) in col.iter().enumerate() {
            out[[i, j + 1]] = (v - m) / s;
        }
        mean.push(m);
        sd.push(s);
    }
    if !constant.is_empty() {
        return Err(Error::Collinear(constant));
    }
    let dependent = dependent_columns(out.view(), 1e-10);
    if !dependent.is_empty() {
        return Err(Error::Collinear(dependent.into_iter().map(|j| names[j - 1].clone()).collect()));
    }
    Ok(Standardized { x: out, mean, sd })
}

/// Log-likelihood change treated as round-off when accepting a step.
fn round_off(ll: f64) -> f64 {
    1e-12 * ll.abs().max(1.0)
}

/// Maximum-likelihood Poisson regression `log μ = β₀ + xᵀβ` by IRLS.
///
/// Columns are standardized internally and coefficients back-transformed.
/// Each Newton step is halved (up to `max_halvings` times) until the
/// log-likelihood does not decrease by more than round-off.
pub fn fit_poisson(names: &[String], x: ArrayView2<f64>, y: &[f64], opts: &PoissonOptions) -> Result<PoissonFit> {
    let (n, p) = x.dim();
    if names.len() != p {
        return Err(Error::SchemaMismatch(format!("{} names for {p} columns", names.len())));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: y.len() });
    }
    if n < p + 1 {
        return Err(Error::InvalidArgument(format!("{n} observations cannot identify {} coefficients", p + 1)));
    }
    if let Some(bad) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::InvalidArgument(format!("Poisson response must be non-negative integers, found {bad}")));
    }
    let offset = match &opts.offset {
        Some(o) if o.len() != n => return Err(Error::LengthMismatch { expected: n, actual: o.len() }),
        Some(o) => o.clone(),
        None => vec![0.0; n],
    };
    let std = standardize(names, x)?;
    let xs = &std.x;
    let yv = Array1::from(y.to_vec());
    let linear = |b: &Array1<f64>| -> Vec<f64> { xs.dot(b).iter().zip(&offset).map(|(e, o)| e + o).collect() };

    let mut warnings = Vec::new();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let off_mean = offset.iter().sum::<f64>() / n as f64;
    let mut b = Array1::zeros(p + 1);
    b[0] = ybar.max(1e-10).ln() - off_mean;
    let mut eta = linear(&b);
    let mut ll = poisson_loglik(y, &eta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_score = f64::INFINITY;

    for it in 1..=opts.max_iter {
        iterations = it;
        let mu = Array1::from_iter(eta.iter().map(|e| e.exp()));
        let info = weighted_gram(xs.view(), mu.view());
        let score = xs.t().dot(&(&yv - &mu));
        let step = solve_spd(&info, &score)?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &b + &(&step * t);
            let cand_eta = linear(&cand);
            let cand_ll = poisson_loglik(y, &cand_eta);
            if cand_ll >= ll - round_off(ll) {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, neta, nll)) = accepted else {
            warnings.push(format!("iteration {it}: no step-halved update increased the log-likelihood"));
            break;
        };
        let rel = (nll - ll).abs() / (nll.abs() + 0.1);
        b = nb;
        eta = neta;
        ll = nll;
        trace.push(ll);
        let mu: Array1<f64> = eta.iter().map(|e| e.exp()).collect();
        max_score = xs.t().dot(&(&yv - &mu)).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if rel < opts.tol && max_score < opts.score_tol {
            converged = true;
            // One more full Newton step: quadratic convergence takes the
            // estimate to round-off, so it no longer depends on where the
            // stopping rule happened to trigger.
            let info = weighted_gram(xs.view(), mu.view());
            if let Ok(step) = solve_spd(&info, &xs.t().dot(&(&yv - &mu))) {
                let cand = &b + &step;
                let cand_eta = linear(&cand);
                let cand_ll = poisson_loglik(y, &cand_eta);
                if cand_ll >= ll - round_off(ll) {
                    b = cand;
                    eta = cand_eta;
                    ll = cand_ll;
                    trace.push(ll);
                    let mu: Array1<f64> = eta.iter().map(|e| e.exp()).collect();
                    max_score = xs.t().dot(&(&yv - &mu)).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                }
            }
            break;
        }
    }
    if !max_score.is_finite() {
        let mu: Array1<f64> = eta.iter().map(|e| e.exp()).collect();
        max_score = xs.t().dot(&(&yv - &mu)).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }

    if y.iter().all(|&v| v == 0.0) {
        converged = false;
        warnings.push("all responses are zero: the intercept MLE is at the boundary (-inf)".into());
    } else if !converged {
        warnings.push(format!("IRLS did not converge in {iterations} iterations (max |score| = {max_score:e})"));
    }
    if converged && b.iter().skip(1).any(|v| v.abs() > 30.0) {
        warnings.push("very large standardized coefficient: possible separation".into());
    }
    for w in &warnings {
        log::warn!("poisson: {w}");
    }

    // Back-transform: beta_j = b_j / sd_j, beta_0 = b_0 - sum_j b_j mean_j / sd_j.
    let mut t = Array2::<f64>::zeros((p + 1, p + 1));
    t[[0, 0]] = 1.0;
    for j in 0..p {
        t[[0, j + 1]] = -std.mean[j] / std.sd[j];
        t[[j + 1, j + 1]] = 1.0 / std.sd[j];
    }
    let beta = t.dot(&b);
    let mu: Array1<f64> = eta.iter().map(|e| e.exp()).collect();
    let se = match inverse_spd(&weighted_gram(xs.view(), mu.view())) {
        Ok(cov_std) => {
            let cov = t.dot(&cov_std).dot(&t.t());
            cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect()
        }
        Err(e) => {
            warnings.push(format!("information matrix not invertible at the estimate: {e}"));
            vec![f64::NAN; p + 1]
        }
    };

    Ok(PoissonFit {
        feature_names: names.to_vec(),
        beta: beta.to_vec(),
        se,
        iterations,
        converged,
        loglik: ll,
        loglik_trace: trace,
        max_score,
        warnings,
    })
}

/// Predicted rates `exp(β₀ + xᵀβ)`.
pub fn predict_poisson(fit: &PoissonFit, names: &[String], x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if names != fit.feature_names.as_slice() {
        return Err(Error::SchemaMismatch(format!(
            "model was fitted on {:?}, got {:?}",
            fit.feature_names, names
        )));
    }
    if x.ncols() != names.len() {
        return Err(Error::SchemaMismatch(format!("{} names for {} columns", names.len(), x.ncols())));
    }
    Ok(x
        .axis_iter(Axis(0))
        .map(|row| {
            let eta = fit.beta[0] + row.iter().zip(&fit.beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            eta.exp()
        })
        .collect())
}

/// `2·Φ(−|β̂/se|)` per coefficient; `None` where the standard error is zero
/// or undefined.
pub fn wald_pvalues(fit: &PoissonFit) -> Vec<Option<f64>> {
    let out: Vec<Option<f64>> = fit.coefficients().into_iter().map(|c| c.p).collect();
    for (term, p) in fit.terms().iter().zip(&out) {
        if p.is_none() {
            log::warn!("poisson: p-value for `{term}` is undefined (zero or missing standard error)");
        }
    }
    out
}

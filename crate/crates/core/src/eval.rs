//! Error and goodness-of-fit metrics, k-fold cross-validation and the
//! cross-model importance ranking.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::coef::Coefficient;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, forest_importance, predict_forest, Forest, ForestParams};
use crate::geometry::Point;
use crate::glm::{fit_poisson, predict_poisson, PoissonOptions};
use crate::grid::FeatureMatrix;
use crate::rng;

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::LengthMismatch { expected: actual.len(), actual: forecast.len() });
    }
    if actual.is_empty() {
        return Err(Error::UndefinedMetric("no observations".into()));
    }
    Ok(())
}

/// Mean absolute percentage error over cells with a nonzero actual, ×100.
/// Returns the value and the number of zero-actual cells skipped.
pub fn mape(actual: &[f64], forecast: &[f64]) -> Result<(f64, usize)> {
    check_pair(actual, forecast)?;
    let (mut sum, mut used) = (0.0, 0usize);
    for (a, f) in actual.iter().zip(forecast) {
        if *a != 0.0 {
            sum += ((a - f) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("MAPE: every actual value is zero".into()));
    }
    Ok((100.0 * sum / used as f64, actual.len() - used))
}

pub fn mae(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    Ok(actual.iter().zip(forecast).map(|(a, f)| (a - f).abs()).sum::<f64>() / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    Ok((actual.iter().zip(forecast).map(|(a, f)| (a - f).powi(2)).sum::<f64>() / actual.len() as f64).sqrt())
}

/// `1 − SS_res/SS_tot`; may be negative.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R²: actual values have zero variance".into()));
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean Poisson negative log-likelihood `ŷ − y·ln ŷ + ln y!`. Rates below
/// 1e-10 are clamped with a warning.
pub fn log_deviance(actual: &[f64], rate: &[f64]) -> Result<f64> {
    check_pair(actual, rate)?;
    if let Some(bad) = actual.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::InvalidArgument(format!("log deviance needs non-negative integer actuals, found {bad}")));
    }
    let mut clamped = 0usize;
    let total: f64 = actual
        .iter()
        .zip(rate)
        .map(|(&y, &r)| {
            let r = if r >= 1e-10 {
                r
            } else {
                clamped += 1;
                1e-10
            };
            r - y * r.ln() + ln_gamma(y + 1.0)
        })
        .sum();
    if clamped > 0 {
        log::warn!("log deviance: clamped {clamped} non-positive predicted rates to 1e-10");
    }
    Ok(total / actual.len() as f64)
}

/// All five metrics on one prediction vector. Undefined MAPE or R² (all-zero
/// or constant actuals) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub log_dev: f64,
    pub n_used: usize,
    pub n_skipped_mape: usize,
}

impl MetricSet {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self> {
        let (mape, n_skipped_mape) = match mape(actual, predicted) {
            Ok((v, s)) => (Some(v), s),
            Err(Error::UndefinedMetric(_)) => (None, actual.len()),
            Err(e) => return Err(e),
        };
        let r2 = match r_squared(actual, predicted) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricSet {
            mape,
            mae: mae(actual, predicted)?,
            rmse: rmse(actual, predicted)?,
            r2,
            log_dev: log_deviance(actual, predicted)?,
            n_used: actual.len(),
            n_skipped_mape,
        })
    }
}

/// Uniformly random fold label per observation; fold sizes differ by at most
/// one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} folds for {n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// Spatially blocked folds: cells ordered by centroid `(x, y)` and cut into
/// `k` contiguous runs of column blocks.
pub fn make_blocked_folds(centroids: &[Point], k: usize) -> Result<Vec<usize>> {
    let n = centroids.len();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("{k} folds for {n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| centroids[a].x.total_cmp(&centroids[b].x).then(centroids[a].y.total_cmp(&centroids[b].y)));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos * k / n;
    }
    Ok(folds)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    #[default]
    Random,
    Blocked,
}

/// Model trained inside each fold.
#[derive(Clone, Debug)]
pub enum CvModel {
    Poisson(PoissonOptions),
    Forest(ForestParams),
    /// Predicts the training-fold mean; a baseline.
    TrainMean,
}

impl CvModel {
    pub fn label(&self) -> &'static str {
        match self {
            CvModel::Poisson(_) => "poisson",
            CvModel::Forest(_) => "forest",
            CvModel::TrainMean => "train_mean",
        }
    }
}

/// Mean or SD per metric; `None` where undefined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mape: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub log_dev: Option<f64>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

/// Mean and sample SD across metric sets; SD is `None` with fewer than two
/// defined values.
pub fn summarize(sets: &[MetricSet]) -> (MetricSummary, MetricSummary) {
    let pick = |f: &dyn Fn(&MetricSet) -> Option<f64>| mean_sd(&sets.iter().filter_map(f).collect::<Vec<_>>());
    let (mape_m, mape_s) = pick(&|m| m.mape);
    let (mae_m, mae_s) = pick(&|m| Some(m.mae));
    let (rmse_m, rmse_s) = pick(&|m| Some(m.rmse));
    let (r2_m, r2_s) = pick(&|m| m.r2);
    let (ld_m, ld_s) = pick(&|m| Some(m.log_dev));
    (
        MetricSummary { mape: mape_m, mae: mae_m, rmse: rmse_m, r2: r2_m, log_dev: ld_m },
        MetricSummary { mape: mape_s, mae: mae_s, rmse: rmse_s, r2: r2_s, log_dev: ld_s },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub scheme: FoldScheme,
    /// Fold label per cell.
    pub folds: Vec<usize>,
    pub per_fold: Vec<MetricSet>,
    pub mean: MetricSummary,
    pub sd: MetricSummary,
    /// Out-of-fold prediction for every cell.
    pub predictions: Vec<f64>,
    /// Checked per fold: no held-out cell appears in the training rows.
    pub disjoint: bool,
    pub notes: Vec<String>,
}

fn select_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// k-fold cross-validation of a count model on the feature matrix.
///
/// Features that are constant on a training fold are dropped for that fold.
/// Folds are trained in parallel and reduced in fold order.
pub fn cross_validate(model: &CvModel, data: &FeatureMatrix, k: usize, seed: u64, scheme: FoldScheme) -> Result<CvReport> {
    let n = data.n();
    let folds = match scheme {
        FoldScheme::Random => make_folds(n, k, seed)?,
        FoldScheme::Blocked => make_blocked_folds(&data.centroids(), k)?,
    };
    let x = data.design();
    let names = data.names();
    let y = &data.response;

    struct FoldOut {
        test: Vec<usize>,
        pred: Vec<f64>,
        metrics: MetricSet,
        disjoint: bool,
        notes: Vec<String>,
    }
    let outs: Vec<FoldOut> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldOut> {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let held: BTreeSet<usize> = test.iter().copied().collect();
            let disjoint = train.iter().all(|i| !held.contains(i));
            let xtr = select_rows(&x, &train);
            let xte = select_rows(&x, &test);
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let mut notes = Vec::new();
            let keep: Vec<usize> = (0..names.len())
                .filter(|&j| {
                    let c = xtr.column(j);
                    let varies = c.iter().any(|v| *v != c[0]);
                    if !varies {
                        notes.push(format!("fold {f}: dropped `{}` (constant on training rows)", names[j]));
                    }
                    varies
                })
                .collect();
            let kn: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
            let xtr = xtr.select(Axis(1), &keep);
            let xte = xte.select(Axis(1), &keep);
            let pred = match model {
                CvModel::Poisson(opts) => {
                    let fit = fit_poisson(&kn, xtr.view(), &ytr, opts)?;
                    if !fit.converged {
                        notes.push(format!("fold {f}: Poisson fit did not converge"));
                    }
                    predict_poisson(&fit, &kn, xte.view())?
                }
                CvModel::Forest(params) => {
                    let params = ForestParams { seed: rng::derive_seed(params.seed, &format!("fold{f}")), ..params.clone() };
                    let fit = fit_forest(&kn, xtr.view(), &ytr, &params)?;
                    predict_forest(&fit, &kn, xte.view())?
                }
                CvModel::TrainMean => {
                    let m = ytr.iter().sum::<f64>() / ytr.len() as f64;
                    vec![m; test.len()]
                }
            };
            let metrics = MetricSet::compute(&yte, &pred)?;
            if metrics.r2.is_none() {
                notes.push(format!("fold {f}: R² undefined (held-out responses are constant)"));
            }
            if metrics.mape.is_none() {
                notes.push(format!("fold {f}: MAPE undefined (all held-out responses are zero)"));
            }
            Ok(FoldOut { test, pred, metrics, disjoint, notes })
        })
        .collect::<Result<_>>()?;

    let mut predictions = vec![0.0; n];
    let mut notes = Vec::new();
    let mut per_fold = Vec::with_capacity(k);
    let mut disjoint = true;
    for o in outs {
        for (&i, &p) in o.test.iter().zip(&o.pred) {
            predictions[i] = p;
        }
        per_fold.push(o.metrics);
        disjoint &= o.disjoint;
        notes.extend(o.notes);
    }
    let (mean, sd) = summarize(&per_fold);
    Ok(CvReport {
        model: model.label().to_string(),
        k,
        seed,
        scheme,
        folds,
        per_fold,
        mean,
        sd,
        predictions,
        disjoint,
        notes,
    })
}

/// Model rows of the accuracy and goodness-of-fit tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub mean: MetricSummary,
    pub sd: MetricSummary,
}

impl TableRow {
    pub fn from_cv(label: impl Into<String>, cv: &CvReport) -> Self {
        TableRow { model: label.into(), mean: cv.mean.clone(), sd: cv.sd.clone() }
    }

    /// A single fit: the SD columns are NA.
    pub fn single(label: impl Into<String>, m: &MetricSet) -> Self {
        let (mean, _) = summarize(std::slice::from_ref(m));
        TableRow { model: label.into(), mean, sd: MetricSummary::default() }
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `model,mape_mean,mape_sd,mae_mean,mae_sd,rmse_mean,rmse_sd`.
pub fn accuracy_table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("model,mape_mean,mape_sd,mae_mean,mae_sd,rmse_mean,rmse_sd\n");
    for r in rows {
        let cells = [r.mean.mape, r.sd.mape, r.mean.mae, r.sd.mae, r.mean.rmse, r.sd.rmse];
        out.push_str(&quote(&r.model));
        for c in cells {
            out.push(',');
            out.push_str(&fmt_opt(c));
        }
        out.push('\n');
    }
    out
}

/// `model,r2_mean,r2_sd,logdev_mean,logdev_sd`.
pub fn fit_table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("model,r2_mean,r2_sd,logdev_mean,logdev_sd\n");
    for r in rows {
        out.push_str(&quote(&r.model));
        for c in [r.mean.r2, r.sd.r2, r.mean.log_dev, r.sd.log_dev] {
            out.push(',');
            out.push_str(&fmt_opt(c));
        }
        out.push('\n');
    }
    out
}

/// Terms ranked by `−log₁₀ p`, descending, ties by name. The intercept, the
/// spatial parameters and terms without a p-value are left out.
pub fn rank_by_significance(coefs: &[Coefficient]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = coefs
        .iter()
        .filter(|c| !c.is_intercept() && c.term != "lambda" && c.term != "delta")
        .filter_map(|c| c.p.map(|p| (c.term.clone(), -p.log10())))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Forest features ranked by impurity importance.
pub fn rank_forest(forest: &Forest) -> Vec<(String, f64)> {
    forest_importance(forest)
}

/// Top-k features per model plus the features common to every list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub k: usize,
    /// `(model key, ranked (feature, score))`, truncated to `k`.
    pub models: Vec<(String, Vec<(String, f64)>)>,
    pub common: Vec<String>,
}

pub fn importance_table(rankings: &[(String, Vec<(String, f64)>)], k: usize) -> ImportanceTable {
    let models: Vec<(String, Vec<(String, f64)>)> =
        rankings.iter().map(|(m, r)| (m.clone(), r.iter().take(k).cloned().collect())).collect();
    let common = match models.split_first() {
        None => Vec::new(),
        Some(((_, first), rest)) => first
            .iter()
            .map(|(f, _)| f.clone())
            .filter(|f| rest.iter().all(|(_, r)| r.iter().any(|(g, _)| g == f)))
            .collect(),
    };
    ImportanceTable { k, models, common }
}

impl ImportanceTable {
    /// `rank,<model>,...` with one column per model, blank where a model has
    /// fewer than `rank` features.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank");
        for (m, _) in &self.models {
            out.push(',');
            out.push_str(&quote(m));
        }
        out.push('\n');
        let rows = self.models.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
        for i in 0..rows {
            out.push_str(&(i + 1).to_string());
            for (_, r) in &self.models {
                out.push(',');
                if let Some((f, _)) = r.get(i) {
                    out.push_str(&quote(f));
                }
            }
            out.push('\n');
        }
        out
    }
}

//! Acceptance suite: one test per criterion, each printing a single
//! `[PASS]` / `[FAIL]` line with the measured quantities.
//!
//! Run with `cargo test -p riskgrid-cli --test acceptance -- --nocapture`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use riskgrid_core::autocorr::{classify_clusters, global_moran, local_moran, moran_permutation_test, Adjustment, Alternative};
use riskgrid_core::eval::{log_deviance, mae, mape, r_squared, rmse};
use riskgrid_core::forest::{fit_forest, forest_importance, ForestParams};
use riskgrid_core::glm::{fit_poisson, PoissonOptions};
use riskgrid_core::grid::{aggregate_points, build_fishnet};
use riskgrid_core::rng::stream;
use riskgrid_core::spatial_econ::{build_spatial_design, fit_manski, fit_sdem, manski_loglik, parameter_box, sdem_loglik, SpatialOptions};
use riskgrid_core::synth::{generate, hotspot_mask, SyntheticConfig};
use riskgrid_core::weights::{knn_neighbors, row_standardize, spectrum, NeighborGraph};
use riskgrid_core::{ClusterLabel, SpatialWeights};
use sha2::{Digest, Sha256};

fn report(id: u32, title: &str, ok: bool, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id}: {title} -- {detail}");
    assert!(ok, "criterion {id} failed: {detail}");
}

fn lattice_w(side: usize, k: usize) -> SpatialWeights {
    row_standardize(&knn_neighbors(&oracles::lattice(side), k).unwrap())
}

#[test]
fn criterion_1_moran_correctness() {
    let t = Instant::now();
    let ring = row_standardize(&NeighborGraph::from_lists(2, vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![2, 0]]).unwrap());
    let y = [1.0, 2.0, 3.0, 4.0];
    let gi = global_moran(&y, &ring).unwrap();
    let li = local_moran(&y, &ring).unwrap().local_i;
    let fixture_err = (gi + 0.2).abs().max(li.iter().zip([-0.6, 0.2, 0.2, -0.6]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

    // Additivity on random graphs with random (not necessarily symmetric) row-standardized weights.
    let mut worst = 0.0_f64;
    for seed in 0..100u64 {
        let mut r = stream(seed, 7);
        let n = r.random_range(5..60);
        let triples: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| {
                let deg = r.random_range(1..5.min(n - 1) + 1);
                let mut js: Vec<usize> = rand::seq::index::sample(&mut r, n - 1, deg).into_vec();
                for j in &mut js {
                    if *j >= i {
                        *j += 1;
                    }
                }
                let raw: Vec<f64> = js.iter().map(|_| r.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                js.into_iter().zip(raw).map(move |(j, v)| (i, j, v / s)).collect::<Vec<_>>()
            })
            .collect();
        let w = SpatialWeights::from_triples(n, triples).unwrap();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let sum: f64 = local_moran(&y, &w).unwrap().local_i.iter().sum();
        let g = global_moran(&y, &w).unwrap();
        worst = worst.max((sum - w.total_weight() * g).abs());
    }
    let el = t.elapsed();
    report(
        1,
        "Moran correctness",
        fixture_err <= 1e-12 && worst <= 1e-10 && el < Duration::from_secs(1),
        format!("ring fixture max err {fixture_err:.1e}, additivity max err {worst:.1e} over 100 instances, {el:.2?}"),
    );
}

#[test]
fn criterion_2_permutation_inference() {
    let t = Instant::now();
    let city = generate(&SyntheticConfig::default(), 2024).unwrap();
    let fishnet = build_fishnet(&city.boundary, 1000.0).unwrap();
    let counts: Vec<f64> = aggregate_points(&fishnet, &city.events).counts.iter().map(|&c| c as f64).collect();
    let w = row_standardize(&knn_neighbors(&fishnet.centroids(), 8).unwrap());
    let clustered = moran_permutation_test(&counts, &w, 999, 1, Alternative::Greater).unwrap();

    let wl = lattice_w(20, 8);
    let reps = 500u64;
    let rejections = (0..reps)
        .filter(|&s| {
            let mut r = stream(s, 99);
            let y: Vec<f64> = (0..400).map(|_| oracles::poisson(&mut r, 4.0)).collect();
            moran_permutation_test(&y, &wl, 999, 10_000 + s, Alternative::Greater).unwrap().pseudo_p <= 0.05
        })
        .count();
    let rate = rejections as f64 / reps as f64;
    let el = t.elapsed();
    report(
        2,
        "permutation inference",
        clustered.pseudo_p == 0.001 && rate <= 0.08 && el < Duration::from_secs(30),
        format!("clustered pseudo_p = {}, null rejection rate {rate:.3} over {reps} replicates, {el:.2?}", clustered.pseudo_p),
    );
}

#[test]
fn criterion_3_glm_oracle() {
    let t = Instant::now();
    let y = [1.0, 2.0, 3.0, 7.0, 0.0];
    let fit0 = fit_poisson(&[], Array2::zeros((5, 0)).view(), &y, &PoissonOptions::default()).unwrap();
    let intercept_err = (fit0.beta[0] - (13.0f64 / 5.0).ln()).abs();

    let names = vec!["x1".to_string(), "x2".to_string()];
    let truth = [0.5f64, 0.4, -0.3];
    let mut covered = 0;
    let mut worst_score = 0.0_f64;
    for seed in 0..100u64 {
        let mut r = stream(seed, 3);
        let n = 2000;
        let x: Array2<f64> = Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { r.random_range(-1.0..1.0) } else { r.random_range(0.0..2.0) });
        let y: Vec<f64> = (0..n)
            .map(|i| oracles::poisson(&mut r, (truth[0] + truth[1] * x[[i, 0]] + truth[2] * x[[i, 1]]).exp()))
            .collect();
        let fit = fit_poisson(&names, x.view(), &y, &PoissonOptions::default()).unwrap();
        let mu: Vec<f64> = (0..n).map(|i| (fit.beta[0] + fit.beta[1] * x[[i, 0]] + fit.beta[2] * x[[i, 1]]).exp()).collect();
        for j in 0..3 {
            let s: f64 = (0..n).map(|i| (if j == 0 { 1.0 } else { x[[i, j - 1]] }) * (y[i] - mu[i])).sum();
            worst_score = worst_score.max(s.abs());
        }
        if (0..3).all(|j| (fit.beta[j] - truth[j]).abs() <= 3.0 * fit.se[j]) {
            covered += 1;
        }
    }
    let el = t.elapsed();
    report(
        3,
        "GLM oracle",
        intercept_err <= 1e-10 && worst_score <= 1e-6 && covered >= 95 && el < Duration::from_secs(30),
        format!("intercept err {intercept_err:.1e}, max |score| {worst_score:.1e}, within 3 se in {covered}/100 seeds, {el:.2?}"),
    );
}

#[test]
fn criterion_4_forest_oracle() {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..20u64 {
        let mut r = stream(seed, 4);
        let p = 1 + (seed as usize % 4);
        let x = Array2::from_shape_fn((30, p), |_| r.random_range(0.0f64..10.0));
        let y: Vec<f64> = (0..30).map(|i| x[[i, 0]].sin() * 3.0 + r.random_range(0.0..1.0)).collect();
        let min_node = 1 + (seed as usize % 3) * 2;
        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let params = ForestParams { n_trees: 1, mtry: Some(p), min_node, bootstrap: false, seed };
        let forest = fit_forest(&names, x.view(), &y, &params).unwrap();
        let rows: Vec<usize> = (0..30).collect();
        let oracle = oracles::exhaustive_cart(&x, &y, &rows, min_node);
        if let Err(e) = oracles::same_tree(&forest.trees[0], 0, &oracle) {
            mismatches.push(format!("seed {seed}: {e}"));
        }
    }
    let mut top = 0;
    for seed in 0..50u64 {
        let mut r = stream(seed, 44);
        let (n, p) = (300, 6);
        let x = Array2::from_shape_fn((n, p), |_| r.random_range(0.0..1.0));
        let noise = oracles::normals(&mut r, n);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[[i, 3]] + 0.5 * noise[i]).collect();
        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let f = fit_forest(&names, x.view(), &y, &ForestParams { n_trees: 100, seed, ..Default::default() }).unwrap();
        if forest_importance(&f)[0].0 == "f3" {
            top += 1;
        }
    }
    let el = t.elapsed();
    report(
        4,
        "forest oracle",
        mismatches.is_empty() && top >= 48 && el < Duration::from_secs(60),
        format!("{}/20 trees match the exhaustive oracle {mismatches:?}, planted feature first in {top}/50 seeds, {el:.2?}", 20 - mismatches.len()),
    );
}

fn sdem_data(w: &SpatialWeights, wd: &Array2<f64>, seed: u64, delta: f64, lambda: f64) -> (Array2<f64>, Vec<f64>) {
    let n = w.n();
    let mut r = stream(seed, 6);
    let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
    let wx1 = oracles::dense_lag(wd, &x.column(0).to_vec());
    let wx2 = oracles::dense_lag(wd, &x.column(1).to_vec());
    let eps = oracles::normals(&mut r, n);
    let u = oracles::dense_inverse_apply(wd, lambda, &eps);
    let trend: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * x[[i, 0]] - 0.3 * x[[i, 1]] + 0.2 * wx1[i] + 0.1 * wx2[i] + u[i]).collect();
    let y = if delta == 0.0 { trend } else { oracles::dense_inverse_apply(wd, delta, &trend) };
    (x, y)
}

#[test]
fn criterion_5_spatial_likelihood_oracle() {
    let w = lattice_w(20, 8);
    let wd = w.to_dense();
    let sp = spectrum(&w).unwrap();
    let (lo, hi) = parameter_box(&sp);
    let mut worst_ld = 0.0_f64;
    for i in 0..25 {
        let rho = lo + (hi - lo) * (i as f64 + 0.5) / 25.0;
        worst_ld = worst_ld.max((sp.log_det(rho) - oracles::lu_log_det(&wd, rho)).abs());
    }
    let names = vec!["x1".to_string(), "x2".to_string()];
    let (x, y) = sdem_data(&w, &wd, 5, 0.0, 0.5);
    let design = build_spatial_design(&names, x.view(), &w).unwrap();
    let ll0 = manski_loglik(0.0, 0.0, &design, &y, &w, &sp).unwrap().loglik;
    let ols = oracles::ols_loglik(&design.z, &y);
    let ols_err = (ll0 - ols).abs() / ols.abs();
    let s0 = sdem_loglik(0.0, &design, &y, &w, &sp).unwrap().loglik;

    let opts = SpatialOptions::default();
    let sdem = fit_sdem(&design, &y, &w, &sp, &opts).unwrap();
    let clamped = fit_manski(&design, &y, &w, &sp, &SpatialOptions { delta_bounds: Some((0.0, 0.0)), ..opts }).unwrap();
    let nest_err = (sdem.lambda - clamped.lambda)
        .abs()
        .max((sdem.loglik - clamped.loglik).abs())
        .max(sdem.gamma.iter().zip(&clamped.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    report(
        5,
        "spatial likelihood oracle",
        worst_ld <= 1e-8 && ols_err <= 1e-12 && ll0 == s0 && nest_err <= 1e-6,
        format!("log-det max err {worst_ld:.1e} at 25 points (n=400), OLS rel err {ols_err:.1e}, clamped-Manski vs SDEM max diff {nest_err:.1e}"),
    );
}

#[test]
fn criterion_6_spatial_recovery() {
    let t = Instant::now();
    let w = lattice_w(30, 8);
    let wd = w.to_dense();
    let sp = spectrum(&w).unwrap();
    let names = vec!["x1".to_string(), "x2".to_string()];
    let opts = SpatialOptions::default();
    let mut hits = 0;
    let mut below = 0;
    for seed in 0..100u64 {
        let (x, y) = sdem_data(&w, &wd, seed, 0.0, 0.6);
        let d = build_spatial_design(&names, x.view(), &w).unwrap();
        let fit = fit_sdem(&d, &y, &w, &sp, &opts).unwrap();
        if (fit.lambda - 0.6).abs() <= 0.15 {
            hits += 1;
        }
        let (x, y) = sdem_data(&w, &wd, 1000 + seed, 0.0, 0.4);
        let d = build_spatial_design(&names, x.view(), &w).unwrap();
        let s = fit_sdem(&d, &y, &w, &sp, &opts).unwrap();
        let m = fit_manski(&d, &y, &w, &sp, &opts).unwrap();
        if 2.0 * (m.loglik - s.loglik) < 3.84 {
            below += 1;
        }
    }
    let el = t.elapsed();
    report(
        6,
        "spatial parameter recovery",
        hits >= 90 && below >= 90 && el < Duration::from_secs(300),
        format!("SDEM lambda within 0.15 in {hits}/100 seeds, Manski LR < 3.84 in {below}/100 null seeds, {el:.2?}"),
    );
}

#[test]
fn criterion_7_metric_fixtures() {
    let (a, f) = ([1.0, 2.0, 4.0], [1.0, 1.0, 5.0]);
    let checks = [
        mape(&a, &f).unwrap().0 - 25.0,
        mae(&a, &f).unwrap() - 2.0 / 3.0,
        rmse(&a, &f).unwrap() - (2.0f64 / 3.0).sqrt(),
        mape(&[0.0, 1.0], &[5.0, 1.0]).unwrap().0,
        (mape(&[0.0, 1.0], &[5.0, 1.0]).unwrap().1 as f64) - 1.0,
        r_squared(&a, &a).unwrap() - 1.0,
        r_squared(&a, &[7.0 / 3.0; 3]).unwrap(),
        log_deviance(&[0.0], &[1.0]).unwrap() - 1.0,
        log_deviance(&[1.0], &[1.0]).unwrap() - 1.0,
        log_deviance(&[2.0], &[2.0]).unwrap() - (2.0 - 2.0 * 2f64.ln() + 2f64.ln()),
    ];
    let worst = checks.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut violations = 0;
    for seed in 0..1000u64 {
        let mut r = stream(seed, 77);
        let n = r.random_range(1..50);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        if mae(&a, &b).unwrap() > rmse(&a, &b).unwrap() {
            violations += 1;
        }
    }
    report(
        7,
        "metric fixtures",
        worst <= 1e-10 && violations == 0,
        format!("max fixture error {worst:.1e}, mae > rmse in {violations}/1000 random vectors"),
    );
}

fn riskgrid(dir: &Path, threads: usize, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_riskgrid"))
        .current_dir(dir)
        .env("RISKGRID_THREADS", threads.to_string())
        .args(args)
        .output()
        .expect("riskgrid binary runs");
    assert!(out.status.success(), "riskgrid {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn criterion_8_report_parity() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::copy(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic_city.json"), dir.join("city.json")).unwrap();
    riskgrid(dir, 8, &["generate", "--config", "city.json"]);
    let runs = [(1usize, "out_a"), (8, "out_b"), (8, "out_c")];
    for (threads, out) in runs {
        riskgrid(dir, threads, &["run", "--config", "city.json", "--reproducible", "--output-dir", out]);
    }
    let trees: Vec<_> = runs.iter().map(|(_, o)| tree_bytes(&dir.join(o))).collect();
    let mut mismatched: Vec<String> = Vec::new();
    for other in &trees[1..] {
        if other.keys().ne(trees[0].keys()) {
            mismatched.push("file set".into());
        }
        for (name, bytes) in &trees[0] {
            if other.get(name) != Some(bytes) {
                mismatched.push(name.clone());
            }
        }
    }
    let files = &trees[0];
    let text = |name: &str| String::from_utf8(files.get(name).unwrap_or_else(|| panic!("missing {name}")).clone()).unwrap();

    let labels = ["Poisson GLM", "Random Forest", "Manski Model", "Spatial Durbin"];
    let mut shape_errors = Vec::new();
    for (name, header, sd_cols) in [
        ("table1_accuracy.csv", "model,mape_mean,mape_sd,mae_mean,mae_sd,rmse_mean,rmse_sd", vec![2, 4, 6]),
        ("table2_goodness_of_fit.csv", "model,r2_mean,r2_sd,logdev_mean,logdev_sd", vec![2, 4]),
    ] {
        let rows = csv_rows(&text(name));
        if rows[0].join(",") != header || rows.len() != 5 {
            shape_errors.push(format!("{name}: header/row count"));
            continue;
        }
        for (row, label) in rows[1..].iter().zip(labels) {
            let spatial = label == "Manski Model" || label == "Spatial Durbin";
            let na = sd_cols.iter().all(|&c| row[c] == "NA");
            let all_numeric = sd_cols.iter().all(|&c| row[c].parse::<f64>().is_ok());
            if row[0] != label || (spatial && !na) || (!spatial && !all_numeric) {
                shape_errors.push(format!("{name}: row {row:?}"));
            }
        }
    }
    let t4 = csv_rows(&text("table4_importance.csv"));
    if t4[0].join(",") != "rank,poisson,forest,sdem,manski" || t4.len() != 11 || t4[1..].iter().any(|r| r.len() != 5 || r.iter().any(String::is_empty)) {
        shape_errors.push(format!("table4 shape: {} rows", t4.len()));
    }

    let manifest: serde_json::Value = serde_json::from_str(&text("run_report.json")).unwrap();
    let listed: BTreeMap<String, String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect();
    let provenance_ok = files.iter().filter(|(n, _)| n.as_str() != "run_report.json").all(|(n, b)| {
        listed.get(n).is_some_and(|h| *h == hex::encode(Sha256::digest(b)))
    }) && listed.len() + 1 == files.len();

    report(
        8,
        "report parity",
        mismatched.is_empty() && shape_errors.is_empty() && provenance_ok,
        format!(
            "{} files identical across 3 runs (1, 8, 8 threads) [mismatches: {mismatched:?}]; table shapes [{}]; manifest covers every file: {provenance_ok}; {:.1} s",
            files.len(),
            if shape_errors.is_empty() { "ok".to_string() } else { shape_errors.join("; ") },
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_9_cluster_recall() {
    let cfg = SyntheticConfig::default();
    let (mut recall, mut fp) = (0.0, 0.0);
    let seeds = 20u64;
    for seed in 0..seeds {
        let city = generate(&cfg, seed).unwrap();
        let fishnet = build_fishnet(&city.boundary, 1000.0).unwrap();
        let y: Vec<f64> = aggregate_points(&fishnet, &city.events).counts.iter().map(|&c| c as f64).collect();
        let w = row_standardize(&knn_neighbors(&fishnet.centroids(), 8).unwrap());
        let mut local = local_moran(&y, &w).unwrap();
        local.adjust(&w, Adjustment::Bonferroni).unwrap();
        let labels = classify_clusters(&y, &w, &local, 0.05).unwrap();
        let mask = hotspot_mask(&fishnet, &city.parents, cfg.mask_radius_sd * cfg.hotspot_sd);
        let hh: Vec<bool> = labels.iter().map(|l| *l == ClusterLabel::HighHigh).collect();
        let in_mask = mask.iter().filter(|&&m| m).count() as f64;
        let outside = mask.len() as f64 - in_mask;
        recall += hh.iter().zip(&mask).filter(|(h, m)| **h && **m).count() as f64 / in_mask;
        fp += hh.iter().zip(&mask).filter(|(h, m)| **h && !**m).count() as f64 / outside;
    }
    let (recall, fp) = (recall / seeds as f64, fp / seeds as f64);
    report(
        9,
        "cluster-detection recall",
        recall >= 0.9 && fp <= 0.05,
        format!("mean HighHigh recall {recall:.3}, mean false-positive rate {fp:.4} over {seeds} seeds"),
    );
}


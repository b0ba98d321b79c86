//! Pipeline stages. Each stage reads the previous stage's files from the
//! output directory, so `moran`, `fit` and `report` can run standalone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use riskgrid_core::autocorr::{classify_clusters, local_moran, local_moran_permutation, moran_permutation_test, Alternative};
use riskgrid_core::eval::{
    accuracy_table_csv, cross_validate, fit_table_csv, importance_table, rank_by_significance, rank_forest, CvModel, TableRow,
};
use riskgrid_core::forest::{fit_forest, predict_forest, ForestParams};
use riskgrid_core::glm::{fit_poisson, predict_poisson, PoissonOptions};
use riskgrid_core::grid::{aggregate_points, assemble_feature_matrix, build_fishnet, FeatureLayers, Fishnet};
use riskgrid_core::io;
use riskgrid_core::rng::{derive_seed, stream};
use riskgrid_core::spatial_econ::{build_spatial_design, fit_manski, fit_sdem, predict_spatial, SpatialFit, SpatialOptions};
use riskgrid_core::synth::{self, hotspot_mask};
use riskgrid_core::weights::{knn_neighbors, row_standardize, spectrum};
use riskgrid_core::{Boundary, ClusterLabel, CvReport, FeatureMatrix, MetricSet, PointLayer, SpatialWeights};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Family, ModelKind, Resolved};
use crate::error::{PipelineError, Stage, StageExt};
use crate::svg;

pub const FEATURE_MATRIX: &str = "feature_matrix.csv";
pub const HOLDOUT_RESPONSE: &str = "holdout_response.csv";
pub const WEIGHTS_CSV: &str = "weights.csv";
pub const CLUSTER_MAP_CSV: &str = "cluster_map.csv";
pub const MORAN_JSON: &str = "moran_global.json";
pub const RUN_REPORT: &str = "run_report.json";

fn write(dir: &Path, name: &str, contents: &str, stage: Stage) -> Result<(), PipelineError> {
    io::write_text(&dir.join(name), contents).at(stage)
}

fn read_json(path: &Path, stage: Stage) -> Result<Value, PipelineError> {
    let text = io::read_text(path).at(stage)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::input(stage, format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

/// Files written by `generate`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GenerateSummary {
    pub seed: u64,
    pub files: Vec<PathBuf>,
}

/// Write a synthetic city to the input paths named in the config, plus
/// `parents.csv` and `hotspot_mask.csv` next to the boundary.
pub fn generate(cfg: &Resolved, seed: Option<u64>) -> Result<GenerateSummary, PipelineError> {
    let c = &cfg.config;
    let syn = c
        .synthetic
        .as_ref()
        .ok_or_else(|| PipelineError::input(Stage::Config, "config has no `synthetic` block"))?;
    let seed = seed.unwrap_or(cfg.seeds.synthetic);
    let city = synth::generate(syn, seed).at(Stage::Generate)?;
    let mut files = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<(), PipelineError> {
        io::write_text(&path, &text).at(Stage::Generate)?;
        files.push(path);
        Ok(())
    };
    put(c.boundary.clone(), io::boundary_to_geojson(&city.boundary))?;
    put(c.events.clone(), io::points_to_csv(&city.events.points))?;
    match &c.holdout_events {
        Some(p) => put(p.clone(), io::points_to_csv(&city.holdout_events.points))?,
        None => log::warn!("no `holdout_events` path configured; the second epoch is not written"),
    }
    if !city.layers.is_empty() {
        let dir = match (&c.layer_dir, c.layers.is_empty()) {
            (Some(d), true) => d.clone(),
            _ => return Err(PipelineError::input(Stage::Config, "synthetic layers need `layer_dir` (and no explicit `layers` list)")),
        };
        for layer in &city.layers {
            put(dir.join(format!("{}.csv", layer.name)), io::points_to_csv(&layer.points))?;
        }
    }
    let truth_dir = c.boundary.parent().map(Path::to_path_buf).unwrap_or_default();
    put(truth_dir.join("parents.csv"), io::points_to_csv(&city.parents))?;
    let fishnet = build_fishnet(&city.boundary, c.cell_size).at(Stage::Grid)?;
    let mask = hotspot_mask(&fishnet, &city.parents, syn.mask_radius_sd * syn.hotspot_sd);
    let mut text = String::from("cell_id,in_hotspot\n");
    for (cell, m) in fishnet.cells.iter().zip(&mask) {
        text.push_str(&format!("{},{}\n", cell.id, u8::from(*m)));
    }
    put(truth_dir.join("hotspot_mask.csv"), text)?;
    Ok(GenerateSummary { seed, files })
}

/// A point layer plus the feature families built from it.
struct LoadedLayer {
    layer: PointLayer,
    families: Vec<Family>,
    nn_k: usize,
}

fn layer_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| PipelineError::input(Stage::Ingest, format!("cannot list layer directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("csv" | "geojson" | "json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_layers(cfg: &Resolved) -> Result<Vec<LoadedLayer>, PipelineError> {
    let c = &cfg.config;
    if !c.layers.is_empty() {
        return c
            .layers
            .iter()
            .map(|l| {
                let mut layer = io::read_points(&l.path).at(Stage::Ingest)?;
                if let Some(name) = &l.name {
                    layer.name = name.clone();
                }
                Ok(LoadedLayer { layer, families: l.families.clone(), nn_k: l.nn_k.unwrap_or(c.nn_k) })
            })
            .collect();
    }
    let Some(dir) = &c.layer_dir else {
        return Err(PipelineError::input(Stage::Config, "no feature layers: set `layer_dir` or `layers`"));
    };
    layer_files(dir)?
        .iter()
        .map(|p| {
            Ok(LoadedLayer {
                layer: io::read_points(p).at(Stage::Ingest)?,
                families: vec![Family::Agg, Family::Nn, Family::Ed],
                nn_k: c.nn_k,
            })
        })
        .collect()
}

/// Inputs, grid, features and weights, shared by `moran` and `report`.
struct Prepared {
    boundary: Boundary,
    fishnet: Fishnet,
}

fn prepare_grid(cfg: &Resolved) -> Result<Prepared, PipelineError> {
    let boundary = io::read_boundary(&cfg.config.boundary).at(Stage::Ingest)?;
    let fishnet = build_fishnet(&boundary, cfg.config.cell_size).at(Stage::Grid)?;
    Ok(Prepared { boundary, fishnet })
}

#[derive(Clone, Debug, Serialize)]
pub struct MoranSummary {
    pub n_cells: usize,
    pub features: Vec<String>,
    pub dropped_features: Vec<String>,
    pub statistic: f64,
    pub pseudo_p: f64,
    pub n_significant: usize,
    pub warnings: Vec<String>,
}

/// Ingest, fishnet, features, weights and global/local Moran's I.
pub fn moran_stage(cfg: &Resolved) -> Result<MoranSummary, PipelineError> {
    let c = &cfg.config;
    let out = &c.output_dir;
    let Prepared { fishnet, .. } = prepare_grid(cfg)?;
    let events = io::read_points(&c.events).at(Stage::Ingest)?;
    let holdout = c.holdout_events.as_deref().map(io::read_points).transpose().at(Stage::Ingest)?;
    let loaded = load_layers(cfg)?;

    let mut layers = FeatureLayers::default();
    for l in &loaded {
        for f in &l.families {
            match f {
                Family::Agg => layers.agg.push(&l.layer),
                Family::Nn => layers.nn.push((&l.layer, l.nn_k)),
                Family::Ed => layers.ed.push(&l.layer),
            }
        }
    }
    let assembly = assemble_feature_matrix(&fishnet, &layers, &events).at(Stage::Features)?;
    let fm = assembly.matrix;
    let mut warnings = assembly.warnings;
    write(out, FEATURE_MATRIX, &io::feature_matrix_to_csv(&fm), Stage::Features)?;
    if let Some(h) = &holdout {
        let counts = aggregate_points(&fishnet, h);
        if counts.dropped > 0 {
            warnings.push(format!("{} of {} holdout points fall outside the fishnet", counts.dropped, h.len()));
        }
        let mut text = String::from("cell_id,response\n");
        for (cell, n) in fishnet.cells.iter().zip(&counts.counts) {
            text.push_str(&format!("{},{n}\n", cell.id));
        }
        write(out, HOLDOUT_RESPONSE, &text, Stage::Features)?;
    }

    let w = row_standardize(&knn_neighbors(&fm.centroids(), c.k_neighbors).at(Stage::Weights)?);
    write(out, WEIGHTS_CSV, &io::weights_to_csv(&w), Stage::Weights)?;
    write(out, "weights.json", &io::weights_to_json(&w), Stage::Weights)?;

    let y = &fm.response;
    let global = moran_permutation_test(y, &w, c.n_sims, cfg.seeds.permutation, Alternative::Greater).at(Stage::Moran)?;
    write(out, MORAN_JSON, &to_json(&global), Stage::Moran)?;
    write(
        out,
        "moran_global.csv",
        &format!(
            "statistic,expected,pseudo_p,n_extreme,n_sims,seed\n{},{},{},{},{},{}\n",
            global.statistic, global.expected, global.pseudo_p, global.n_extreme, global.n_sims, global.seed
        ),
        Stage::Moran,
    )?;
    let mut local = if c.local_permutation {
        local_moran_permutation(y, &w, c.n_sims, derive_seed(cfg.seeds.permutation, "local")).at(Stage::Moran)?
    } else {
        local_moran(y, &w).at(Stage::Moran)?
    };
    local.adjust(&w, c.local_adjustment).at(Stage::Moran)?;
    let labels = classify_clusters(y, &w, &local, c.alpha).at(Stage::Moran)?;
    write(out, CLUSTER_MAP_CSV, &io::cluster_map_to_csv(&fm, &local, &labels), Stage::Moran)?;
    write(out, "cluster_map.geojson", &io::cluster_map_to_geojson(&fishnet, &fm, &local, &labels), Stage::Moran)?;

    Ok(MoranSummary {
        n_cells: fm.n(),
        features: fm.names(),
        dropped_features: assembly.dropped_columns,
        statistic: global.statistic,
        pseudo_p: global.pseudo_p,
        n_significant: labels.iter().filter(|l| **l != ClusterLabel::NotSignificant).count(),
        warnings,
    })
}

fn read_holdout(path: &Path, fm: &FeatureMatrix) -> Result<Vec<f64>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::input(Stage::Fit, format!("{}: {e}", path.display())))?;
    let mut by_id = BTreeMap::new();
    for rec in rdr.deserialize::<(usize, f64)>() {
        let (id, v) = rec.map_err(|e| PipelineError::input(Stage::Fit, format!("{}: {e}", path.display())))?;
        by_id.insert(id, v);
    }
    fm.cells
        .iter()
        .map(|c| {
            by_id
                .get(&c.id)
                .copied()
                .ok_or_else(|| PipelineError::input(Stage::Fit, format!("{}: no row for cell {}", path.display(), c.id)))
        })
        .collect()
}

/// Predictions and summaries of one model.
struct ModelRun {
    kind: ModelKind,
    fitted: Vec<f64>,
    cv: Option<CvReport>,
    ranking: Vec<(String, f64)>,
    summary: Value,
}

impl ModelRun {
    /// The prediction the headline tables use: out-of-fold where CV ran,
    /// in-sample otherwise.
    fn headline(&self) -> &[f64] {
        self.cv.as_ref().map_or(&self.fitted, |cv| &cv.predictions)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub models: Vec<ModelKind>,
    pub accuracy: Vec<TableRow>,
    pub common_features: Vec<String>,
}

fn poisson_run(cfg: &Resolved, fm: &FeatureMatrix) -> Result<ModelRun, PipelineError> {
    let names = fm.names();
    let x = fm.design();
    let opts = PoissonOptions::default();
    let fit = fit_poisson(&names, x.view(), &fm.response, &opts).at(Stage::Fit)?;
    let fitted = predict_poisson(&fit, &names, x.view()).at(Stage::Fit)?;
    let cv = cross_validate(&CvModel::Poisson(opts), fm, cfg.config.cv_folds, cfg.seeds.cv, cfg.config.fold_scheme).at(Stage::Eval)?;
    let coefs = fit.coefficients();
    write(&cfg.config.output_dir, "coefficients_poisson.csv", &io::coefficients_to_csv(&coefs), Stage::Fit)?;
    Ok(ModelRun {
        kind: ModelKind::Poisson,
        fitted,
        cv: Some(cv),
        ranking: rank_by_significance(&coefs),
        summary: json!({
            "converged": fit.converged,
            "iterations": fit.iterations,
            "loglik": fit.loglik,
            "max_score": fit.max_score,
            "coefficients": coefs,
            "warnings": fit.warnings,
        }),
    })
}

fn forest_params(cfg: &Resolved) -> ForestParams {
    let f = &cfg.config.forest;
    ForestParams { n_trees: f.n_trees, mtry: f.mtry, min_node: f.min_node, bootstrap: true, seed: cfg.seeds.forest }
}

fn forest_run(cfg: &Resolved, fm: &FeatureMatrix) -> Result<ModelRun, PipelineError> {
    let names = fm.names();
    let x = fm.design();
    let params = forest_params(cfg);
    let forest = fit_forest(&names, x.view(), &fm.response, &params).at(Stage::Fit)?;
    let fitted = predict_forest(&forest, &names, x.view()).at(Stage::Fit)?;
    let cv = cross_validate(&CvModel::Forest(params), fm, cfg.config.cv_folds, cfg.seeds.cv, cfg.config.fold_scheme).at(Stage::Eval)?;
    let ranking = rank_forest(&forest);
    write(&cfg.config.output_dir, "importance_forest.csv", &io::importance_to_csv(&ranking), Stage::Fit)?;
    Ok(ModelRun {
        kind: ModelKind::Forest,
        fitted,
        cv: Some(cv),
        summary: json!({
            "n_trees": forest.trees.len(),
            "mtry": forest.m,
            "min_node": forest.min_node,
            "seed": forest.seed,
            "importance": ranking,
        }),
        ranking,
    })
}

fn spatial_runs(cfg: &Resolved, fm: &FeatureMatrix, w: &SpatialWeights) -> Result<Vec<ModelRun>, PipelineError> {
    let c = &cfg.config;
    let names = fm.names();
    let x = fm.design();
    let y = &fm.response;
    let design = build_spatial_design(&names, x.view(), w).at(Stage::Fit)?;
    let sp = spectrum(w).at(Stage::Fit)?;
    let opts = SpatialOptions::default();
    let mut runs = Vec::new();
    if c.has(ModelKind::Sdem) {
        let fit = fit_sdem(&design, y, w, &sp, &opts).at(Stage::Fit)?;
        let fitted = predict_spatial(SpatialFit::Sdem(&fit), design.z.view(), w).at(Stage::Fit)?;
        write(&c.output_dir, "coefficients_sdem.csv", &io::coefficients_to_csv(&fit.coefficients), Stage::Fit)?;
        runs.push(ModelRun {
            kind: ModelKind::Sdem,
            fitted,
            cv: None,
            ranking: rank_by_significance(&fit.coefficients),
            summary: json!({"fit": fit, "design_warnings": design.warnings}),
        });
    }
    if c.has(ModelKind::Manski) {
        let fit = fit_manski(&design, y, w, &sp, &opts).at(Stage::Fit)?;
        let fitted = predict_spatial(SpatialFit::Manski(&fit), design.z.view(), w).at(Stage::Fit)?;
        write(&c.output_dir, "coefficients_manski.csv", &io::coefficients_to_csv(&fit.coefficients), Stage::Fit)?;
        runs.push(ModelRun {
            kind: ModelKind::Manski,
            fitted,
            cv: None,
            ranking: rank_by_significance(&fit.coefficients),
            summary: json!({"fit": fit, "design_warnings": design.warnings}),
        });
    }
    Ok(runs)
}

fn metrics(actual: &[f64], pred: &[f64]) -> Result<MetricSet, PipelineError> {
    MetricSet::compute(actual, pred).at(Stage::Eval)
}

/// Models, cross-validation, tables and importance rankings.
pub fn fit_stage(cfg: &Resolved) -> Result<FitSummary, PipelineError> {
    let c = &cfg.config;
    let out = &c.output_dir;
    let fm = io::read_feature_matrix(&out.join(FEATURE_MATRIX)).at(Stage::Fit)?;
    let holdout_path = out.join(HOLDOUT_RESPONSE);
    let holdout = if holdout_path.exists() { Some(read_holdout(&holdout_path, &fm)?) } else { None };

    let mut runs = Vec::new();
    if c.has(ModelKind::Poisson) {
        runs.push(poisson_run(cfg, &fm)?);
    }
    if c.has(ModelKind::Forest) {
        runs.push(forest_run(cfg, &fm)?);
    }
    if c.has(ModelKind::Sdem) || c.has(ModelKind::Manski) {
        let w = io::read_weights_csv(&out.join(WEIGHTS_CSV), fm.n()).at(Stage::Fit)?;
        runs.extend(spatial_runs(cfg, &fm, &w)?);
    }
    runs.sort_by_key(|r| ModelKind::ALL.iter().position(|k| *k == r.kind));

    let y = &fm.response;
    let mut headline = Vec::new();
    let mut insample = Vec::new();
    let mut holdout_rows = Vec::new();
    let mut table_order: Vec<&ModelRun> = runs.iter().collect();
    table_order.sort_by_key(|r| r.kind.table_rank());
    for r in table_order {
        headline.push(match &r.cv {
            Some(cv) => TableRow::from_cv(r.kind.label(), cv),
            None => TableRow::single(r.kind.label(), &metrics(y, &r.fitted)?),
        });
        insample.push(TableRow::single(r.kind.label(), &metrics(y, &r.fitted)?));
        if let Some(h) = &holdout {
            holdout_rows.push(TableRow::single(r.kind.label(), &metrics(h, &r.fitted)?));
        }
    }
    write(out, "table1_accuracy.csv", &accuracy_table_csv(&headline), Stage::Eval)?;
    write(out, "table2_goodness_of_fit.csv", &fit_table_csv(&headline), Stage::Eval)?;
    write(out, "table1_accuracy_insample.csv", &accuracy_table_csv(&insample), Stage::Eval)?;
    write(out, "table2_goodness_of_fit_insample.csv", &fit_table_csv(&insample), Stage::Eval)?;
    if holdout.is_some() {
        write(out, "table1_accuracy_holdout.csv", &accuracy_table_csv(&holdout_rows), Stage::Eval)?;
        write(out, "table2_goodness_of_fit_holdout.csv", &fit_table_csv(&holdout_rows), Stage::Eval)?;
    }

    let rankings: Vec<(String, Vec<(String, f64)>)> = runs.iter().map(|r| (r.kind.key().to_string(), r.ranking.clone())).collect();
    let table4 = importance_table(&rankings, c.top_k);
    write(out, "table4_importance.csv", &table4.to_csv(), Stage::Eval)?;

    let mut pred = String::from("cell_id,observed");
    if holdout.is_some() {
        pred.push_str(",holdout");
    }
    for r in &runs {
        pred.push_str(&format!(",{}_fitted", r.kind.key()));
        if r.cv.is_some() {
            pred.push_str(&format!(",{}_cv", r.kind.key()));
        }
    }
    pred.push('\n');
    for (i, cell) in fm.cells.iter().enumerate() {
        pred.push_str(&format!("{},{}", cell.id, y[i]));
        if let Some(h) = &holdout {
            pred.push_str(&format!(",{}", h[i]));
        }
        for r in &runs {
            pred.push_str(&format!(",{}", r.fitted[i]));
            if let Some(cv) = &r.cv {
                pred.push_str(&format!(",{}", cv.predictions[i]));
            }
        }
        pred.push('\n');
    }
    write(out, "predictions.csv", &pred, Stage::Eval)?;
    for r in &runs {
        let mut s = String::from("cell_id,observed,predicted\n");
        for (i, cell) in fm.cells.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", cell.id, y[i], r.headline()[i]));
        }
        write(out, &format!("scatter_{}.csv", r.kind.key()), &s, Stage::Eval)?;
    }

    let fits: BTreeMap<&str, &Value> = runs.iter().map(|r| (r.kind.key(), &r.summary)).collect();
    write(out, "fits.json", &to_json(&json!({"models": fits, "importance": table4})), Stage::Fit)?;
    let cvs: BTreeMap<&str, &CvReport> = runs.iter().filter_map(|r| r.cv.as_ref().map(|cv| (r.kind.key(), cv))).collect();
    write(out, "cv_report.json", &to_json(&cvs), Stage::Eval)?;

    Ok(FitSummary { models: runs.iter().map(|r| r.kind).collect(), accuracy: headline, common_features: table4.common })
}

#[derive(Deserialize)]
struct ClusterRow {
    cell_id: usize,
    count: f64,
    local_i: f64,
    label: ClusterLabel,
}

fn read_cluster_map(path: &Path) -> Result<Vec<ClusterRow>, PipelineError> {
    let err = |e: csv::Error| PipelineError::input(Stage::Report, format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    rdr.deserialize().collect::<Result<Vec<ClusterRow>, _>>().map_err(err)
}

fn read_scatter(path: &Path) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
    let err = |e: csv::Error| PipelineError::input(Stage::Report, format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut obs = Vec::new();
    let mut pred = Vec::new();
    for rec in rdr.deserialize::<(usize, f64, f64)>() {
        let (_, o, p) = rec.map_err(err)?;
        obs.push(o);
        pred.push(p);
    }
    Ok((obs, pred))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// `run_report.json`: provenance plus a digest of every other output file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub seeds: crate::config::ResolvedSeeds,
    pub models: Vec<ModelKind>,
    pub moran_global: Value,
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<(), PipelineError> {
    let io_err = |e: std::io::Error| PipelineError::input(Stage::Report, format!("{}: {e}", dir.display()));
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).map_err(io_err)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).expect("walk stays under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == RUN_REPORT {
            continue;
        }
        let bytes = fs::read(&p).map_err(|e| PipelineError::input(Stage::Report, format!("{}: {e}", p.display())))?;
        out.push(FileEntry { path: rel, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    Ok(())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// SVG figures and the run manifest.
pub fn report_stage(cfg: &Resolved, reproducible: bool) -> Result<RunReport, PipelineError> {
    let c = &cfg.config;
    let out = &c.output_dir;
    let stamp = (!reproducible).then(unix_now);
    let Prepared { boundary, fishnet } = prepare_grid(cfg)?;

    let rows = read_cluster_map(&out.join(CLUSTER_MAP_CSV))?;
    let rects = rows
        .iter()
        .map(|r| {
            fishnet.cells.get(r.cell_id).map(|cell| fishnet.cell_rect(cell)).ok_or_else(|| {
                PipelineError::input(Stage::Report, format!("cluster map cell {} is not on the configured fishnet", r.cell_id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let counts: Vec<f64> = rows.iter().map(|r| r.count).collect();
    let local_i: Vec<f64> = rows.iter().map(|r| r.local_i).collect();
    let labels: Vec<ClusterLabel> = rows.iter().map(|r| r.label).collect();
    write(out, "cluster_panels.svg", &svg::cluster_panels(&rects, &counts, &local_i, &labels, stamp), Stage::Report)?;

    let events = io::read_points(&c.events).at(Stage::Ingest)?;
    let mut rng = stream(derive_seed(cfg.seeds.global, "dotmap"), 0);
    let simulated = synth::uniform_points(&boundary, events.len(), &mut rng).at(Stage::Report)?;
    let outline: Vec<Vec<_>> = boundary
        .polygons()
        .iter()
        .flat_map(|p| std::iter::once(&p.exterior).chain(&p.holes))
        .map(|r| r.points().to_vec())
        .collect();
    write(out, "incidents_dotmap.svg", &svg::dot_maps(&outline, &events.points, &simulated, stamp), Stage::Report)?;

    let mut models = Vec::new();
    for m in &c.models {
        let path = out.join(format!("scatter_{}.csv", m.key()));
        if !path.exists() {
            continue;
        }
        let (obs, pred) = read_scatter(&path)?;
        let title = format!("{}: predicted vs observed", m.label());
        write(out, &format!("scatter_{}.svg", m.key()), &svg::scatter(&title, &obs, &pred, stamp), Stage::Report)?;
        models.push(*m);
    }

    let moran_global = read_json(&out.join(MORAN_JSON), Stage::Report)?;
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash.clone(),
        seeds: cfg.seeds,
        models,
        moran_global,
        files,
        generated_at: stamp,
    };
    write(out, RUN_REPORT, &to_json(&report), Stage::Report)?;
    Ok(report)
}

/// `moran`, `fit` and `report` in sequence.
pub fn run(cfg: &Resolved, reproducible: bool) -> Result<(MoranSummary, FitSummary, RunReport), PipelineError> {
    let m = moran_stage(cfg)?;
    let f = fit_stage(cfg)?;
    let r = report_stage(cfg, reproducible)?;
    Ok((m, f, r))
}

//! Pipeline configuration: one JSON document, every field defaulted.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::path::{Path, PathBuf};

use riskgrid_core::autocorr::Adjustment;
use riskgrid_core::eval::FoldScheme;
use riskgrid_core::rng::derive_seed;
use riskgrid_core::synth::SyntheticConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Poisson,
    Forest,
    Sdem,
    Manski,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Poisson, ModelKind::Forest, ModelKind::Sdem, ModelKind::Manski];

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Poisson => "poisson",
            ModelKind::Forest => "forest",
            ModelKind::Sdem => "sdem",
            ModelKind::Manski => "manski",
        }
    }

    /// Row position in the accuracy and goodness-of-fit tables.
    pub fn table_rank(self) -> usize {
        match self {
            ModelKind::Poisson => 0,
            ModelKind::Forest => 1,
            ModelKind::Manski => 2,
            ModelKind::Sdem => 3,
        }
    }

    /// Row label in the accuracy and goodness-of-fit tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Poisson => "Poisson GLM",
            ModelKind::Forest => "Random Forest",
            ModelKind::Sdem => "Spatial Durbin",
            ModelKind::Manski => "Manski Model",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Some(ModelKind::Poisson),
            "forest" | "rf" => Some(ModelKind::Forest),
            "sdem" => Some(ModelKind::Sdem),
            "manski" => Some(ModelKind::Manski),
            _ => None,
        }
    }
}

/// Seeds; unset ones are derived from `global`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub global: u64,
    pub cv: Option<u64>,
    pub forest: Option<u64>,
    pub permutation: Option<u64>,
    pub synthetic: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub global: u64,
    pub cv: u64,
    pub forest: u64,
    pub permutation: u64,
    pub synthetic: u64,
}

impl Seeds {
    pub fn resolve(&self) -> ResolvedSeeds {
        let g = self.global;
        ResolvedSeeds {
            global: g,
            cv: self.cv.unwrap_or_else(|| derive_seed(g, "cv")),
            forest: self.forest.unwrap_or_else(|| derive_seed(g, "forest")),
            permutation: self.permutation.unwrap_or_else(|| derive_seed(g, "permutation")),
            synthetic: self.synthetic.unwrap_or_else(|| derive_seed(g, "synthetic")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_node: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_node: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Agg,
    Nn,
    Ed,
}

/// One feature layer file and the families built from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub path: PathBuf,
    /// Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "all_families")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub nn_k: Option<usize>,
}

fn all_families() -> Vec<Family> {
    vec![Family::Agg, Family::Nn, Family::Ed]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub boundary: PathBuf,
    pub events: PathBuf,
    /// Second-epoch events on the same study area; enables the holdout tables.
    pub holdout_events: Option<PathBuf>,
    /// Every `.csv` / `.geojson` in this directory becomes a layer with all
    /// three families, unless `layers` is given.
    pub layer_dir: Option<PathBuf>,
    pub layers: Vec<LayerConfig>,
    pub output_dir: PathBuf,
    pub cell_size: f64,
    pub k_neighbors: usize,
    /// `k` of the `NN_` average-distance features.
    pub nn_k: usize,
    pub n_sims: usize,
    pub alpha: f64,
    pub local_adjustment: Adjustment,
    /// Local p-values by conditional permutation (`n_sims` draws) instead of
    /// the analytical normal approximation.
    pub local_permutation: bool,
    pub cv_folds: usize,
    pub fold_scheme: FoldScheme,
    pub models: Vec<ModelKind>,
    pub top_k: usize,
    pub seeds: Seeds,
    pub forest: ForestConfig,
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            boundary: "data/boundary.geojson".into(),
            events: "data/events.csv".into(),
            holdout_events: None,
            layer_dir: None,
            layers: Vec::new(),
            output_dir: "out".into(),
            cell_size: 1000.0,
            k_neighbors: 8,
            nn_k: 3,
            n_sims: 999,
            alpha: 0.05,
            local_adjustment: Adjustment::Bonferroni,
            local_permutation: false,
            cv_folds: 5,
            fold_scheme: FoldScheme::Random,
            models: ModelKind::ALL.to_vec(),
            top_k: 10,
            seeds: Seeds { global: 1, ..Default::default() },
            forest: ForestConfig::default(),
            synthetic: None,
        }
    }
}

/// Command-line overrides; `None` leaves the config value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub cell_size: Option<f64>,
    pub k_neighbors: Option<usize>,
    pub n_sims: Option<usize>,
    pub alpha: Option<f64>,
    pub cv_folds: Option<usize>,
    pub models: Option<Vec<ModelKind>>,
    pub seed: Option<u64>,
    pub n_trees: Option<usize>,
}

/// A validated config with absolute paths.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: PipelineConfig,
    pub seeds: ResolvedSeeds,
    /// SHA-256 of the effective config (paths as written, `output_dir`
    /// excluded so the digest only covers what affects results).
    pub hash: String,
}

fn cfg_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::input(Stage::Config, msg)
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<(Self, PathBuf), PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let base = std::path::absolute(&base).unwrap_or(base);
        Ok((cfg, base))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.cell_size {
            self.cell_size = v;
        }
        if let Some(v) = o.k_neighbors {
            self.k_neighbors = v;
        }
        if let Some(v) = o.n_sims {
            self.n_sims = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.cv_folds {
            self.cv_folds = v;
        }
        if let Some(v) = &o.models {
            self.models = v.clone();
        }
        if let Some(v) = o.seed {
            self.seeds.global = v;
        }
        if let Some(v) = o.n_trees {
            self.forest.n_trees = v;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(cfg_err(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        if self.k_neighbors == 0 || self.nn_k == 0 || self.cv_folds == 0 || self.top_k == 0 {
            return Err(cfg_err("k_neighbors, nn_k, cv_folds and top_k must be positive"));
        }
        if self.n_sims < 99 {
            return Err(cfg_err(format!("n_sims must be at least 99, got {}", self.n_sims)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(cfg_err(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.models.is_empty() {
            return Err(cfg_err("models list is empty"));
        }
        if self.forest.n_trees == 0 || self.forest.min_node == 0 {
            return Err(cfg_err("forest.n_trees and forest.min_node must be positive"));
        }
        Ok(())
    }

    /// Validate, resolve relative paths against `base`, dedupe and order the
    /// model list, and hash.
    pub fn resolve(mut self, base: &Path) -> Result<Resolved, PipelineError> {
        self.validate()?;
        let mut models = self.models.clone();
        models.sort_by_key(|m| ModelKind::ALL.iter().position(|a| a == m));
        models.dedup();
        self.models = models;
        let mut hashed = self.clone();
        hashed.output_dir = PathBuf::new();
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&hashed).expect("config serializes")));
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.boundary = abs(&self.boundary);
        self.events = abs(&self.events);
        self.holdout_events = self.holdout_events.as_deref().map(abs);
        self.layer_dir = self.layer_dir.as_deref().map(abs);
        for l in &mut self.layers {
            l.path = abs(&l.path);
        }
        self.output_dir = abs(&self.output_dir);
        let seeds = self.seeds.resolve();
        Ok(Resolved { config: self, seeds, hash })
    }

    pub fn has(&self, m: ModelKind) -> bool {
        self.models.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_study_setup() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.cell_size, 1000.0);
        assert_eq!(c.k_neighbors, 8);
        assert_eq!(c.n_sims, 999);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.cv_folds, 5);
        assert_eq!(c.models.len(), 4);
    }

    #[test]
    fn paths_resolve_against_config_dir_and_hash_ignores_output() {
        let c: PipelineConfig = serde_json::from_str(r#"{"boundary": "b.geojson", "output_dir": "o1"}"#).unwrap();
        let r1 = c.clone().resolve(Path::new("/tmp/x")).unwrap();
        assert_eq!(r1.config.boundary, PathBuf::from("/tmp/x/b.geojson"));
        let mut c2 = c.clone();
        c2.apply(&Overrides { output_dir: Some("o2".into()), ..Default::default() });
        assert_eq!(c2.resolve(Path::new("/tmp/x")).unwrap().hash, r1.hash);
        let mut c3 = c;
        c3.apply(&Overrides { k_neighbors: Some(4), ..Default::default() });
        assert_ne!(c3.resolve(Path::new("/tmp/x")).unwrap().hash, r1.hash);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [r#"{"alpha": 1.5}"#, r#"{"n_sims": 10}"#, r#"{"models": []}"#, r#"{"cell_size": 0}"#] {
            let c: PipelineConfig = serde_json::from_str(bad).unwrap();
            assert!(c.validate().is_err(), "{bad}");
        }
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"unknown_field": 1}"#).is_err());
    }

    #[test]
    fn model_order_is_canonical() {
        let c: PipelineConfig = serde_json::from_str(r#"{"models": ["sdem", "poisson", "sdem"]}"#).unwrap();
        let r = c.resolve(Path::new("/")).unwrap();
        assert_eq!(r.config.models, vec![ModelKind::Poisson, ModelKind::Sdem]);
    }
}

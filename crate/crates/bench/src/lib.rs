//! Shared fixtures for the criterion benches.

use riskgrid_core::grid::{assemble_feature_matrix, build_fishnet, FeatureLayers};
use riskgrid_core::synth::{generate, LayerKind, LayerSpec, SyntheticConfig};
use riskgrid_core::weights::{knn_neighbors, row_standardize};
use riskgrid_core::{FeatureMatrix, Fishnet, SpatialWeights};

pub struct City {
    pub fishnet: Fishnet,
    pub features: FeatureMatrix,
    pub weights: SpatialWeights,
}

/// Square synthetic city of `side × side` one-kilometre cells with three
/// layers in all three feature families and k = 8 weights.
pub fn city(side: usize, seed: u64) -> City {
    let extent = side as f64 * 1000.0;
    let layer = |name: &str, n_points, kind| LayerSpec { name: name.into(), n_points, kind };
    let cfg = SyntheticConfig {
        width: extent,
        height: extent,
        n_events: 6 * side * side,
        n_holdout_events: 0,
        n_hotspots: 3,
        layers: vec![
            layer("bars", 2 * side * side / 3, LayerKind::Hotspot { share: 0.9, sd_scale: 1.5 }),
            layer("bus_stops", side * side / 2, LayerKind::Hotspot { share: 0.4, sd_scale: 2.5 }),
            layer("parks", side * side / 20 + 3, LayerKind::Uniform),
        ],
        ..SyntheticConfig::default()
    };
    let synth = generate(&cfg, seed).expect("valid synthetic config");
    let fishnet = build_fishnet(&synth.boundary, 1000.0).expect("fishnet");
    let refs: Vec<_> = synth.layers.iter().collect();
    let layers = FeatureLayers { agg: refs.clone(), nn: refs.iter().map(|&l| (l, 3)).collect(), ed: refs };
    let features = assemble_feature_matrix(&fishnet, &layers, &synth.events).expect("features").matrix;
    let weights = row_standardize(&knn_neighbors(&fishnet.centroids(), 8).expect("knn"));
    City { fishnet, features, weights }
}

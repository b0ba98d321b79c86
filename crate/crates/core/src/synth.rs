//! Synthetic cities: a rectangular study area, incident events (uniform or
//! clustered around hotspot parents) and environmental point layers.
//!
//! Two event epochs share the same hotspot parents, standing in for a
//! training period and a later holdout period.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Boundary, Point};
use crate::grid::{Fishnet, PointLayer};
use crate::rng::{self, StreamRng};

/// Rejections allowed per sampling call before giving up.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventMode {
    Uniform,
    #[default]
    Clustered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Uniform,
    /// `share` of the points cluster around the hotspot parents with spread
    /// `sd_scale · hotspot_sd`; the rest are uniform.
    Hotspot {
        share: f64,
        #[serde(default = "default_sd_scale")]
        sd_scale: f64,
    },
}

fn default_sd_scale() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub n_points: usize,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Study-area size in meters.
    pub width: f64,
    pub height: f64,
    /// Lower-left corner, in projected meters.
    pub origin: (f64, f64),
    pub n_events: usize,
    pub n_holdout_events: usize,
    pub mode: EventMode,
    pub n_hotspots: usize,
    pub hotspot_sd: f64,
    /// Fraction of clustered-mode events drawn uniformly instead.
    pub background_share: f64,
    /// Cells with a centroid within `mask_radius_sd · hotspot_sd` of a parent
    /// form the ground-truth hotspot mask.
    pub mask_radius_sd: f64,
    pub layers: Vec<LayerSpec>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 30_000.0,
            height: 30_000.0,
            origin: (500_000.0, 3_800_000.0),
            n_events: 5000,
            n_holdout_events: 5000,
            mode: EventMode::Clustered,
            n_hotspots: 1,
            hotspot_sd: 1500.0,
            background_share: 0.2,
            mask_radius_sd: 2.0,
            layers: Vec::new(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("city size {}x{} must be positive", self.width, self.height));
        }
        if self.mode == EventMode::Clustered && self.n_hotspots == 0 {
            return bad("clustered mode needs at least one hotspot".into());
        }
        if !(self.hotspot_sd >= 0.0 && self.hotspot_sd.is_finite()) {
            return bad(format!("hotspot_sd must be finite and non-negative, got {}", self.hotspot_sd));
        }
        if !(0.0..=1.0).contains(&self.background_share) {
            return bad(format!("background_share must be in [0, 1], got {}", self.background_share));
        }
        for l in &self.layers {
            if let LayerKind::Hotspot { share, sd_scale } = l.kind {
                if !(0.0..=1.0).contains(&share) || !(sd_scale >= 0.0) {
                    return bad(format!("layer `{}`: share must be in [0, 1] and sd_scale non-negative", l.name));
                }
                if self.n_hotspots == 0 {
                    return bad(format!("layer `{}` is hotspot-correlated but n_hotspots = 0", l.name));
                }
            }
        }
        Ok(())
    }

    pub fn boundary(&self) -> Result<Boundary> {
        let (x0, y0) = self.origin;
        Boundary::rectangle(Point::new(x0, y0), Point::new(x0 + self.width, y0 + self.height))
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCity {
    pub boundary: Boundary,
    pub parents: Vec<Point>,
    /// Training-epoch events.
    pub events: PointLayer,
    pub holdout_events: PointLayer,
    pub layers: Vec<PointLayer>,
}

/// `n` i.i.d. points uniform on the boundary, by rejection from its bounding box.
pub fn uniform_points<R: Rng + ?Sized>(boundary: &Boundary, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    let bb = boundary.bbox();
    let mut out = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while out.len() < n {
        let p = Point::new(rng.random_range(bb.min.x..bb.max.x), rng.random_range(bb.min.y..bb.max.y));
        if boundary.contains(p) {
            out.push(p);
        } else {
            rejected += 1;
            if rejected > MAX_REJECTIONS {
                return Err(Error::InvalidArgument(format!(
                    "uniform sampling rejected {MAX_REJECTIONS} points; the boundary covers almost none of its bounding box"
                )));
            }
        }
    }
    Ok(out)
}

/// Parent–offspring process: each point is an isotropic Gaussian draw around
/// a uniformly chosen parent, rejection-sampled into the boundary.
pub fn clustered_points<R: Rng + ?Sized>(boundary: &Boundary, parents: &[Point], sd: f64, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    if parents.is_empty() {
        return Err(Error::InvalidArgument("clustered sampling needs at least one parent".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while out.len() < n {
        let c = parents[rng.random_range(0..parents.len())];
        let p = Point::new(c.x + sd * normal.sample(rng), c.y + sd * normal.sample(rng));
        if boundary.contains(p) {
            out.push(p);
        } else {
            rejected += 1;
            if rejected > MAX_REJECTIONS {
                return Err(Error::InvalidArgument(format!(
                    "clustered sampling rejected {MAX_REJECTIONS} points; hotspot_sd = {sd} is too large for the study area"
                )));
            }
        }
    }
    Ok(out)
}

fn mixed_points(
    boundary: &Boundary,
    parents: &[Point],
    sd: f64,
    n: usize,
    share: f64,
    rng: &mut StreamRng,
) -> Result<Vec<Point>> {
    let n_clustered = (share * n as f64).round() as usize;
    let mut pts = clustered_points(boundary, parents, sd, n_clustered, rng)?;
    pts.extend(uniform_points(boundary, n - n_clustered, rng)?);
    Ok(pts)
}

/// Generate a city. Streams: 0 parents, 1 training events, 2 holdout events,
/// `100 + i` layer `i`.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCity> {
    config.validate()?;
    let boundary = config.boundary()?;
    let parents = uniform_points(&boundary, config.n_hotspots, &mut rng::stream(seed, 0))?;
    let epoch = |n: usize, stream: u64| -> Result<Vec<Point>> {
        let mut r = rng::stream(seed, stream);
        match config.mode {
            EventMode::Uniform => uniform_points(&boundary, n, &mut r),
            EventMode::Clustered => mixed_points(&boundary, &parents, config.hotspot_sd, n, 1.0 - config.background_share, &mut r),
        }
    };
    let events = PointLayer::new("events", epoch(config.n_events, 1)?)?;
    let holdout_events = PointLayer::new("events_holdout", epoch(config.n_holdout_events, 2)?)?;
    let layers = config
        .layers
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut r = rng::stream(seed, 100 + i as u64);
            let pts = match spec.kind {
                LayerKind::Uniform => uniform_points(&boundary, spec.n_points, &mut r)?,
                LayerKind::Hotspot { share, sd_scale } => {
                    mixed_points(&boundary, &parents, sd_scale * config.hotspot_sd, spec.n_points, share, &mut r)?
                }
            };
            PointLayer::new(spec.name.clone(), pts)
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticCity { boundary, parents, events, holdout_events, layers })
}

/// Ground-truth hotspot mask: cells whose centroid lies within `radius` of a
/// parent.
pub fn hotspot_mask(fishnet: &Fishnet, parents: &[Point], radius: f64) -> Vec<bool> {
    fishnet
        .cells
        .iter()
        .map(|c| parents.iter().any(|p| c.centroid.dist(*p) <= radius))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mode_count_and_containment() {
        let cfg = SyntheticConfig { mode: EventMode::Uniform, n_events: 777, ..Default::default() };
        let city = generate(&cfg, 4).unwrap();
        assert_eq!(city.events.len(), 777);
        assert!(city.events.points.iter().all(|p| city.boundary.contains(*p)));
    }

    #[test]
    fn zero_sd_collapses_onto_parents() {
        let cfg = SyntheticConfig { n_hotspots: 3, hotspot_sd: 0.0, background_share: 0.0, n_events: 200, ..Default::default() };
        let city = generate(&cfg, 8).unwrap();
        assert!(city.events.points.iter().all(|p| city.parents.contains(p)));
    }

    #[test]
    fn impossible_rejection_fails() {
        let b = Boundary::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0)).unwrap();
        let parents = [Point::new(0.5, 0.5)];
        let err = clustered_points(&b, &parents, 1e9, 10, &mut rng::stream(0, 0)).unwrap_err();
        assert!(err.to_string().contains("rejected"));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig {
            layers: vec![LayerSpec { name: "bars".into(), n_points: 50, kind: LayerKind::Hotspot { share: 0.5, sd_scale: 1.0 } }],
            ..Default::default()
        };
        let a = generate(&cfg, 11).unwrap();
        let b = generate(&cfg, 11).unwrap();
        assert_eq!(a.events.points, b.events.points);
        assert_eq!(a.layers[0].points, b.layers[0].points);
        assert_ne!(a.events.points, generate(&cfg, 12).unwrap().events.points);
    }
}

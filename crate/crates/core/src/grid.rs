//! Fishnet construction and the `agg_` / `NN_` / `ed_` feature families.

use std::collections::HashSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Boundary, Point, Rect};

/// Cells whose clipped area fraction is at or below this are treated as
/// touching the boundary only along an edge.
const MIN_COVERAGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub col: usize,
    pub row: usize,
    pub centroid: Point,
    /// Fraction of the cell square inside the boundary, in `[0, 1]`.
    pub coverage: f64,
}

/// Regular lattice of square cells clipped to a study area.
///
/// Cell `(col, row)` covers `[x0 + col·s, x0 + (col+1)·s) × [y0 + row·s, y0 + (row+1)·s)`
/// where `(x0, y0)` is the lower-left corner of the boundary's bounding box.
/// Cell ids run row-major from the bottom-left and skip squares that miss the
/// boundary.
#[derive(Clone, Debug)]
pub struct Fishnet {
    pub cell_size: f64,
    pub origin: Point,
    pub n_cols: usize,
    pub n_rows: usize,
    pub cells: Vec<Cell>,
    lookup: Vec<Option<usize>>,
}

impl Fishnet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn centroids(&self) -> Vec<Point> {
        self.cells.iter().map(|c| c.centroid).collect()
    }

    pub fn cell_rect(&self, cell: &Cell) -> Rect {
        square(self.origin, self.cell_size, cell.col, cell.row)
    }

    /// Cell whose half-open square contains `p`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (col, row) = (fx as usize, fy as usize);
        if col >= self.n_cols || row >= self.n_rows {
            return None;
        }
        self.lookup[row * self.n_cols + col]
    }
}

fn square(origin: Point, s: f64, col: usize, row: usize) -> Rect {
    let min = Point::new(origin.x + col as f64 * s, origin.y + row as f64 * s);
    Rect {
        min,
        max: Point::new(min.x + s, min.y + s),
    }
}

/// Number of cells of side `s` needed to span `extent`, snapping exact
/// multiples that floating division leaves a hair above an integer.
fn span(extent: f64, s: f64) -> usize {
    let r = extent / s;
    let nearest = r.round();
    let n = if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { r.ceil() };
    (n as usize).max(1)
}

pub fn build_fishnet(boundary: &Boundary, cell_size: f64) -> Result<Fishnet> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidArgument(format!("cell_size must be positive, got {cell_size}")));
    }
    if boundary.area() <= 0.0 {
        return Err(Error::InvalidGeometry("boundary has zero area".into()));
    }
    let bb = boundary.bbox();
    let origin = bb.min;
    let n_cols = span(bb.width(), cell_size);
    let n_rows = span(bb.height(), cell_size);
    let cell_area = cell_size * cell_size;

    let coverage: Vec<f64> = (0..n_rows * n_cols)
        .into_par_iter()
        .map(|idx| {
            let rect = square(origin, cell_size, idx % n_cols, idx / n_cols);
            (boundary.clipped_area(&rect) / cell_area).clamp(0.0, 1.0)
        })
        .collect();

    let mut cells = Vec::new();
    let mut lookup = vec![None; n_rows * n_cols];
    for (idx, &cov) in coverage.iter().enumerate() {
        if cov <= MIN_COVERAGE {
            continue;
        }
        let (col, row) = (idx % n_cols, idx / n_cols);
        let id = cells.len();
        lookup[idx] = Some(id);
        cells.push(Cell {
            id,
            col,
            row,
            centroid: Point::new(
                origin.x + (col as f64 + 0.5) * cell_size,
                origin.y + (row as f64 + 0.5) * cell_size,
            ),
            coverage: cov,
        });
    }
    if cells.is_empty() {
        return Err(Error::InvalidGeometry("no lattice cell intersects the boundary".into()));
    }
    Ok(Fishnet {
        cell_size,
        origin,
        n_cols,
        n_rows,
        cells,
        lookup,
    })
}

/// Named set of points (bus stops, liquor stores, incidents, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct PointLayer {
    pub name: String,
    pub points: Vec<Point>,
}

impl PointLayer {
    pub fn new(name: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument("point layer name is empty".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("layer `{name}` has non-finite point {p:?}")));
        }
        Ok(Self { name, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-cell counts of a layer plus the number of points that fell in no cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCounts {
    pub counts: Vec<u64>,
    pub dropped: usize,
}

pub fn aggregate_points(fishnet: &Fishnet, layer: &PointLayer) -> PointCounts {
    let mut counts = vec![0u64; fishnet.len()];
    let mut dropped = 0;
    for &p in &layer.points {
        match fishnet.locate(p) {
            Some(id) => counts[id] += 1,
            None => dropped += 1,
        }
    }
    PointCounts { counts, dropped }
}

/// Mean distance from each cell centroid to its `k` nearest layer points.
pub fn nn_average_distance(fishnet: &Fishnet, layer: &PointLayer, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if layer.len() < k {
        return Err(Error::InsufficientPoints {
            layer: layer.name.clone(),
            available: layer.len(),
            required: k,
        });
    }
    Ok(fishnet
        .cells
        .par_iter()
        .map(|cell| {
            let mut d: Vec<f64> = layer.points.iter().map(|p| cell.centroid.dist(*p)).collect();
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
            }
            let nearest = &mut d[..k];
            nearest.sort_unstable_by(f64::total_cmp);
            nearest.iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// Distance from each cell centroid to the closest layer point.
pub fn euclidean_nearest_distance(fishnet: &Fishnet, layer: &PointLayer) -> Result<Vec<f64>> {
    if layer.is_empty() {
        return Err(Error::InsufficientPoints {
            layer: layer.name.clone(),
            available: 0,
            required: 1,
        });
    }
    Ok(fishnet
        .cells
        .par_iter()
        .map(|cell| {
            layer
                .points
                .iter()
                .map(|p| cell.centroid.dist(*p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Agg,
    Nn,
    Ed,
}

impl FeatureFamily {
    pub fn prefix(self) -> &'static str {
        match self {
            FeatureFamily::Agg => "agg_",
            FeatureFamily::Nn => "NN_",
            FeatureFamily::Ed => "ed_",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Per-cell design matrix with the event counts as response.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub cells: Vec<Cell>,
    pub columns: Vec<Column>,
    pub response: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(cells: Vec<Cell>, columns: Vec<Column>, response: Vec<f64>) -> Result<Self> {
        let n = cells.len();
        if response.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: response.len(),
            });
        }
        if let Some(bad) = response.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::InvalidArgument(format!("response must be non-negative integer counts, found {bad}")));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.values.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: c.values.len(),
                });
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::NamingConflict(c.name.clone()));
            }
        }
        Ok(Self {
            cells,
            columns,
            response,
        })
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    pub fn centroids(&self) -> Vec<Point> {
        self.cells.iter().map(|c| c.centroid).collect()
    }

    /// `n × p` matrix of the feature columns, in column order.
    pub fn design(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.n(), self.columns.len()));
        for (j, col) in self.columns.iter().enumerate() {
            for (i, v) in col.values.iter().enumerate() {
                x[[i, j]] = *v;
            }
        }
        x
    }
}

/// Which layers feed which feature family.
#[derive(Clone, Debug, Default)]
pub struct FeatureLayers<'a> {
    pub agg: Vec<&'a PointLayer>,
    /// Layer plus its `k` for the average-distance feature.
    pub nn: Vec<(&'a PointLayer, usize)>,
    pub ed: Vec<&'a PointLayer>,
}

#[derive(Clone, Debug)]
pub struct FeatureAssembly {
    pub matrix: FeatureMatrix,
    pub dropped_columns: Vec<String>,
    /// Response points outside every cell.
    pub response_dropped: usize,
    pub warnings: Vec<String>,
}

pub fn assemble_feature_matrix(
    fishnet: &Fishnet,
    layers: &FeatureLayers<'_>,
    response: &PointLayer,
) -> Result<FeatureAssembly> {
    if layers.agg.is_empty() && layers.nn.is_empty() && layers.ed.is_empty() {
        return Err(Error::InvalidArgument("at least one feature layer is required".into()));
    }
    for (family, names) in [
        (FeatureFamily::Agg, layers.agg.iter().map(|l| &l.name).collect::<Vec<_>>()),
        (FeatureFamily::Nn, layers.nn.iter().map(|(l, _)| &l.name).collect()),
        (FeatureFamily::Ed, layers.ed.iter().map(|l| &l.name).collect()),
    ] {
        let mut seen = HashSet::new();
        for name in names {
            if !seen.insert(name) {
                return Err(Error::NamingConflict(format!("{}{name}", family.prefix())));
            }
        }
    }

    let mut candidates = Vec::new();
    for layer in &layers.agg {
        let counts = aggregate_points(fishnet, layer);
        candidates.push(Column {
            name: format!("agg_{}", layer.name),
            values: counts.counts.iter().map(|&c| c as f64).collect(),
        });
    }
    for (layer, k) in &layers.nn {
        candidates.push(Column {
            name: format!("NN_{}", layer.name),
            values: nn_average_distance(fishnet, layer, *k)?,
        });
    }
    for layer in &layers.ed {
        candidates.push(Column {
            name: format!("ed_{}", layer.name),
            values: euclidean_nearest_distance(fishnet, layer)?,
        });
    }

    let mut columns = Vec::new();
    let mut dropped_columns = Vec::new();
    let mut warnings = Vec::new();
    for col in candidates {
        let first = col.values.first().copied().unwrap_or(0.0);
        if col.values.iter().all(|&v| v == first) {
            let msg = format!("dropping zero-variance column `{}` (constant {first})", col.name);
            log::warn!("{msg}");
            warnings.push(msg);
            dropped_columns.push(col.name);
        } else {
            columns.push(col);
        }
    }

    let events = aggregate_points(fishnet, response);
    if events.dropped > 0 {
        let msg = format!("{} of {} `{}` points fall outside the fishnet", events.dropped, response.len(), response.name);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let matrix = FeatureMatrix::new(
        fishnet.cells.clone(),
        columns,
        events.counts.iter().map(|&c| c as f64).collect(),
    )?;
    Ok(FeatureAssembly {
        matrix,
        dropped_columns,
        response_dropped: events.dropped,
        warnings,
    })
}

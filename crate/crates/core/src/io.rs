//! File formats: GeoJSON boundaries and point layers, point CSVs, the
//! feature-matrix CSV, weights (CSV triples + JSON neighbor lists),
//! coefficient and importance tables, and the cluster map.

use std::fs;
use std::path::Path;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, Value};
use serde::{Deserialize, Serialize};

use crate::autocorr::{ClusterLabel, LocalMoranResult};
use crate::coef::Coefficient;
use crate::error::{Error, Result};
use crate::eval::fmt_opt;
use crate::geometry::{Boundary, Point, Polygon, Ring};
use crate::grid::{Cell, Column, Fishnet, FeatureMatrix, PointLayer};
use crate::weights::SpatialWeights;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ring_from(path: &Path, coords: &[Vec<f64>]) -> Result<Ring> {
    let pts = coords
        .iter()
        .map(|c| match c.as_slice() {
            [x, y, ..] => Ok(Point::new(*x, *y)),
            _ => Err(Error::parse(path, "position with fewer than 2 coordinates")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ring::new(pts)
}

fn polygon_from(path: &Path, rings: &[Vec<Vec<f64>>]) -> Result<Polygon> {
    let (ext, holes) = rings.split_first().ok_or_else(|| Error::InvalidGeometry("polygon without rings".into()))?;
    Ok(Polygon::new(
        ring_from(path, ext)?,
        holes.iter().map(|h| ring_from(path, h)).collect::<Result<_>>()?,
    ))
}

fn geometries(gj: GeoJson) -> Vec<Geometry> {
    match gj {
        GeoJson::Geometry(g) => vec![g],
        GeoJson::Feature(f) => f.geometry.into_iter().collect(),
        GeoJson::FeatureCollection(fc) => fc.features.into_iter().filter_map(|f| f.geometry).collect(),
    }
}

fn parse_geojson(path: &Path) -> Result<GeoJson> {
    read_text(path)?.parse::<GeoJson>().map_err(|e| Error::parse(path, e))
}

/// Study-area boundary from Polygon / MultiPolygon GeoJSON in projected
/// meters.
pub fn read_boundary(path: &Path) -> Result<Boundary> {
    let mut polys = Vec::new();
    for g in geometries(parse_geojson(path)?) {
        match g.value {
            Value::Polygon(rings) => polys.push(polygon_from(path, &rings)?),
            Value::MultiPolygon(ps) => {
                for rings in &ps {
                    polys.push(polygon_from(path, rings)?);
                }
            }
            other => return Err(Error::parse(path, format!("expected Polygon or MultiPolygon, found {}", other.type_name()))),
        }
    }
    let b = Boundary::new(polys)?;
    b.check_projected()?;
    Ok(b)
}

fn ring_coords(r: &Ring) -> Vec<Vec<f64>> {
    r.points().iter().map(|p| vec![p.x, p.y]).collect()
}

pub fn boundary_to_geojson(b: &Boundary) -> String {
    let polys: Vec<Vec<Vec<Vec<f64>>>> = b
        .polygons()
        .iter()
        .map(|p| std::iter::once(&p.exterior).chain(&p.holes).map(ring_coords).collect())
        .collect();
    let feature = Feature {
        geometry: Some(Geometry::new(Value::MultiPolygon(polys))),
        ..Default::default()
    };
    GeoJson::FeatureCollection(FeatureCollection { bbox: None, features: vec![feature], foreign_members: None }).to_string()
}

fn check_points_projected(path: &Path, pts: &[Point]) -> Result<()> {
    if !pts.is_empty() && pts.iter().all(|p| p.x.abs() <= 360.0 && p.y.abs() <= 90.0) {
        return Err(Error::Unprojected(format!("every point in {} lies within |x| <= 360, |y| <= 90", path.display())));
    }
    Ok(())
}

/// Points from a CSV with `x` and `y` columns (other columns ignored).
pub fn read_points_csv(path: &Path, name: &str) -> Result<PointLayer> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    let col = |want: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(want));
    let (Some(ix), Some(iy)) = (col("x"), col("y")) else {
        return Err(Error::parse(path, format!("missing `x`/`y` columns (header: {:?})", headers.iter().collect::<Vec<_>>())));
    };
    let mut pts = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, format!("row {}: `{s}` is not a finite number", line + 2)))
        };
        pts.push(Point::new(num(ix)?, num(iy)?));
    }
    check_points_projected(path, &pts)?;
    PointLayer::new(name, pts)
}

/// Points from Point / MultiPoint GeoJSON.
pub fn read_points_geojson(path: &Path, name: &str) -> Result<PointLayer> {
    let mut pts = Vec::new();
    let push = |c: &[f64], pts: &mut Vec<Point>| -> Result<()> {
        match c {
            [x, y, ..] => {
                pts.push(Point::new(*x, *y));
                Ok(())
            }
            _ => Err(Error::parse(path, "position with fewer than 2 coordinates")),
        }
    };
    for g in geometries(parse_geojson(path)?) {
        match g.value {
            Value::Point(c) => push(&c, &mut pts)?,
            Value::MultiPoint(cs) => {
                for c in &cs {
                    push(c, &mut pts)?;
                }
            }
            other => return Err(Error::parse(path, format!("expected Point or MultiPoint, found {}", other.type_name()))),
        }
    }
    check_points_projected(path, &pts)?;
    PointLayer::new(name, pts)
}

/// Dispatch on extension: `.csv`, `.geojson` / `.json`. The layer name is
/// the file stem.
pub fn read_points(path: &Path) -> Result<PointLayer> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::parse(path, "cannot derive a layer name from the file name"))?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => read_points_csv(path, name),
        Some("geojson" | "json") => read_points_geojson(path, name),
        _ => Err(Error::parse(path, "unsupported point file (expected .csv or .geojson)")),
    }
}

pub fn points_to_csv(points: &[Point]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    out
}

const FM_LEAD: [&str; 4] = ["cell_id", "centroid_x", "centroid_y", "coverage"];
const FM_RESPONSE: &str = "response";

/// `cell_id,centroid_x,centroid_y,coverage,<features...>,response`; floats are
/// written in shortest round-trip form so reading back is exact.
pub fn feature_matrix_to_csv(fm: &FeatureMatrix) -> String {
    let mut out = FM_LEAD.join(",");
    for c in &fm.columns {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push(',');
    out.push_str(FM_RESPONSE);
    out.push('\n');
    for (i, cell) in fm.cells.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}", cell.id, cell.centroid.x, cell.centroid.y, cell.coverage));
        for c in &fm.columns {
            out.push_str(&format!(",{}", c.values[i]));
        }
        out.push_str(&format!(",{}\n", fm.response[i]));
    }
    out
}

/// Lattice index of each coordinate: offsets from the minimum in units of the
/// smallest positive gap. Exact for fishnet centroids as long as two adjacent
/// lattice lines are occupied.
fn lattice_index(coords: &[f64]) -> Vec<usize> {
    let mut u: Vec<f64> = coords.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let step = u.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let lo = u.first().copied().unwrap_or(0.0);
    coords
        .iter()
        .map(|&c| if step.is_finite() { ((c - lo) / step).round() as usize } else { 0 })
        .collect()
}

/// Inverse of [`feature_matrix_to_csv`]. Cell `col`/`row` are recovered from
/// the centroid spacing.
pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::parse(path, e))?.iter().map(str::to_string).collect();
    let lead = FM_LEAD.len();
    if headers.len() < lead + 1 || headers[..lead] != FM_LEAD || headers[headers.len() - 1] != FM_RESPONSE {
        return Err(Error::SchemaMismatch(format!(
            "{}: header must be {},<features...>,{FM_RESPONSE}",
            path.display(),
            FM_LEAD.join(",")
        )));
    }
    let names = &headers[lead..headers.len() - 1];
    let mut ids = Vec::new();
    let mut centroids = Vec::new();
    let mut coverage = Vec::new();
    let mut response = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::parse(path, format!("row {}, column `{}`: bad number `{s}`", line + 2, headers[i])))
        };
        let s = rec.get(0).unwrap_or("");
        ids.push(s.parse::<usize>().map_err(|_| Error::parse(path, format!("row {}, column `cell_id`: bad integer `{s}`", line + 2)))?);
        centroids.push(Point::new(num(1)?, num(2)?));
        coverage.push(num(3)?);
        for (j, v) in values.iter_mut().enumerate() {
            v.push(num(lead + j)?);
        }
        response.push(num(headers.len() - 1)?);
    }
    let cols = lattice_index(&centroids.iter().map(|p| p.x).collect::<Vec<_>>());
    let rows = lattice_index(&centroids.iter().map(|p| p.y).collect::<Vec<_>>());
    let cells = (0..ids.len())
        .map(|i| Cell { id: ids[i], col: cols[i], row: rows[i], centroid: centroids[i], coverage: coverage[i] })
        .collect();
    let columns = names.iter().cloned().zip(values).map(|(name, values)| Column { name, values }).collect();
    FeatureMatrix::new(cells, columns, response)
}

/// `i,j,w` triples in row order.
pub fn weights_to_csv(w: &SpatialWeights) -> String {
    let mut out = String::from("i,j,w\n");
    for (i, j, v) in w.triples() {
        out.push_str(&format!("{i},{j},{v}\n"));
    }
    out
}

pub fn read_weights_csv(path: &Path, n: usize) -> Result<SpatialWeights> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut triples = Vec::new();
    for rec in rdr.deserialize::<(usize, usize, f64)>() {
        triples.push(rec.map_err(|e| Error::parse(path, e))?);
    }
    SpatialWeights::from_triples(n, triples)
}

#[derive(Serialize, Deserialize)]
struct WeightsJson {
    n: usize,
    k: Option<usize>,
    style: crate::weights::WeightStyle,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

pub fn weights_to_json(w: &SpatialWeights) -> String {
    let doc = WeightsJson {
        n: w.n(),
        k: w.k(),
        style: w.style(),
        neighbors: (0..w.n()).map(|i| w.row(i).0.to_vec()).collect(),
        weights: (0..w.n()).map(|i| w.row(i).1.to_vec()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("weights serialize")
}

/// `term,estimate,se,z,p` with `NA` for undefined entries.
pub fn coefficients_to_csv(coefs: &[Coefficient]) -> String {
    let mut out = String::from("term,estimate,se,z,p\n");
    for c in coefs {
        out.push_str(&format!("{},{},{},{},{}\n", c.term, c.estimate, fmt_opt(c.se), fmt_opt(c.z), fmt_opt(c.p)));
    }
    out
}

/// `feature,importance,rank` from an already ranked list.
pub fn importance_to_csv(ranked: &[(String, f64)]) -> String {
    let mut out = String::from("feature,importance,rank\n");
    for (i, (f, v)) in ranked.iter().enumerate() {
        out.push_str(&format!("{f},{v},{}\n", i + 1));
    }
    out
}

/// Per-cell LISA output: `cell_id,x,y,count,local_i,z,p,p_adjusted,label`.
pub fn cluster_map_to_csv(fm: &FeatureMatrix, local: &LocalMoranResult, labels: &[ClusterLabel]) -> String {
    let mut out = String::from("cell_id,x,y,count,local_i,z,p,p_adjusted,label\n");
    for (i, c) in fm.cells.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.id, c.centroid.x, c.centroid.y, fm.response[i], local.local_i[i], local.z_score[i], local.p_value[i], local.p_adjusted[i], labels[i]
        ));
    }
    out
}

/// Cell squares as GeoJSON polygons carrying the LISA properties.
pub fn cluster_map_to_geojson(fishnet: &Fishnet, fm: &FeatureMatrix, local: &LocalMoranResult, labels: &[ClusterLabel]) -> String {
    let features = fm
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = fishnet.cell_rect(c);
            let ring = vec![
                vec![r.min.x, r.min.y],
                vec![r.max.x, r.min.y],
                vec![r.max.x, r.max.y],
                vec![r.min.x, r.max.y],
                vec![r.min.x, r.min.y],
            ];
            let mut props = JsonObject::new();
            props.insert("cell_id".into(), c.id.into());
            props.insert("count".into(), fm.response[i].into());
            props.insert("local_i".into(), local.local_i[i].into());
            props.insert("z".into(), local.z_score[i].into());
            props.insert("p".into(), local.p_value[i].into());
            props.insert("p_adjusted".into(), local.p_adjusted[i].into());
            props.insert("label".into(), labels[i].as_str().into());
            Feature { geometry: Some(Geometry::new(Value::Polygon(vec![ring]))), properties: Some(props), ..Default::default() }
        })
        .collect();
    GeoJson::FeatureCollection(FeatureCollection { bbox: None, features, foreign_members: None }).to_string()
}

//! Static SVG figures: the three-panel cluster map, the incident dot maps and
//! the predicted-vs-observed scatter plots.
//!
//! Every figure carries a `<metadata>` block holding JSON with the color-scale
//! or axis bounds, so tests and downstream tools can read them back.

use std::fmt::Write;

use riskgrid_core::geometry::{Point, Rect};
use riskgrid_core::ClusterLabel;
use serde_json::{json, Value};

const PANEL: f64 = 320.0;
const MARGIN: f64 = 24.0;
const LEGEND_H: f64 = 90.0;

struct Frame {
    bbox: Rect,
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(bbox: Rect) -> Self {
        let span = bbox.width().max(bbox.height()).max(f64::MIN_POSITIVE);
        let scale = PANEL / span;
        Frame { bbox, scale, height: bbox.height() * scale }
    }

    fn map(&self, p: Point, x0: f64) -> (f64, f64) {
        (x0 + (p.x - self.bbox.min.x) * self.scale, MARGIN + self.height - (p.y - self.bbox.min.y) * self.scale)
    }
}

fn bounding(rects: &[Rect]) -> Rect {
    let mut b = Rect { min: Point::new(f64::INFINITY, f64::INFINITY), max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY) };
    for r in rects {
        b.min.x = b.min.x.min(r.min.x);
        b.min.y = b.min.y.min(r.min.y);
        b.max.x = b.max.x.max(r.max.x);
        b.max.y = b.max.y.max(r.max.y);
    }
    b
}

fn bounding_points(pts: &[Point]) -> Rect {
    bounding(&pts.iter().map(|&p| Rect { min: p, max: p }).collect::<Vec<_>>())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let finite = v.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 0.0)
    }
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Piecewise-linear palette lookup for `v` in `[lo, hi]`.
fn ramp(stops: &[[u8; 3]], lo: f64, hi: f64, v: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let seg = (t * (stops.len() - 1) as f64).min((stops.len() - 1) as f64 - 1e-12);
    let i = seg.floor() as usize;
    hex(lerp(stops[i], stops[i + 1], seg - i as f64))
}

const SEQUENTIAL: [[u8; 3]; 3] = [[255, 247, 236], [252, 141, 89], [127, 0, 0]];
const DIVERGING: [[u8; 3]; 3] = [[33, 102, 172], [247, 247, 247], [178, 24, 43]];

pub fn label_color(l: ClusterLabel) -> &'static str {
    match l {
        ClusterLabel::HighHigh => "#d7191c",
        ClusterLabel::LowLow => "#2c7bb6",
        ClusterLabel::HighLow => "#fdae61",
        ClusterLabel::LowHigh => "#abd9e9",
        ClusterLabel::NotSignificant => "#eeeeee",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, meta: &Value) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(&meta.to_string()));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn with_stamp(mut meta: Value, stamp: Option<u64>) -> Value {
    if let Some(t) = stamp {
        meta["generated_at"] = json!(t);
    }
    meta
}

fn cell_polygon(out: &mut String, f: &Frame, r: &Rect, x0: f64, fill: &str) {
    let corners = [r.min, Point::new(r.max.x, r.min.y), r.max, Point::new(r.min.x, r.max.y)];
    let pts: Vec<String> = corners
        .iter()
        .map(|&p| {
            let (x, y) = f.map(p, x0);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(out, r##"<polygon points="{}" fill="{fill}" stroke="#999999" stroke-width="0.3"/>"##, pts.join(" "));
}

fn ramp_legend(out: &mut String, x0: f64, y0: f64, stops: &[[u8; 3]], lo: f64, hi: f64) {
    for i in 0..10 {
        let v = lo + (hi - lo) * (i as f64 + 0.5) / 10.0;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{y0:.2}" width="{:.2}" height="10" fill="{}"/>"#,
            x0 + i as f64 * PANEL / 10.0,
            PANEL / 10.0,
            ramp(stops, lo, hi, v)
        );
    }
    let _ = writeln!(out, r#"<text x="{x0:.2}" y="{:.2}">{}</text>"#, y0 + 24.0, fmt_num(lo));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 + PANEL, y0 + 24.0, fmt_num(hi));
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Counts, local I and significant clusters, one `<polygon>` per cell in each
/// panel. The cluster legend lists only labels that occur.
pub fn cluster_panels(cells: &[Rect], counts: &[f64], local_i: &[f64], labels: &[ClusterLabel], stamp: Option<u64>) -> String {
    let frame = Frame::new(bounding(cells));
    let (c_lo, c_hi) = min_max(counts);
    let (i_lo, i_hi) = min_max(local_i);
    let present: Vec<ClusterLabel> = ClusterLabel::ALL.iter().copied().filter(|l| labels.contains(l)).collect();
    let meta = with_stamp(
        json!({
            "figure": "cluster_panels",
            "n_cells": cells.len(),
            "panels": [
                {"id": "counts", "min": c_lo, "max": c_hi},
                {"id": "local_i", "min": i_lo, "max": i_hi},
                {"id": "clusters", "labels": present.iter().map(|l| l.as_str()).collect::<Vec<_>>()},
            ],
        }),
        stamp,
    );
    let width = 3.0 * PANEL + 4.0 * MARGIN;
    let height = MARGIN * 2.0 + frame.height + LEGEND_H;
    let mut out = String::new();
    header(&mut out, width, height, &meta);
    let titles = ["Observed incidents per cell", "Local Moran's I", "Significant clusters"];
    for (k, title) in titles.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL + MARGIN);
        let id = ["counts", "local_i", "clusters"][k];
        let _ = writeln!(out, r#"<g id="panel-{id}">"#);
        let _ = writeln!(out, r#"<text x="{x0:.2}" y="{:.2}" font-size="13">{}</text>"#, MARGIN - 8.0, escape(title));
        for (i, r) in cells.iter().enumerate() {
            let fill = match k {
                0 => ramp(&SEQUENTIAL, c_lo, c_hi, counts[i]),
                1 => ramp(&DIVERGING, i_lo, i_hi, local_i[i]),
                _ => label_color(labels[i]).to_string(),
            };
            cell_polygon(&mut out, &frame, r, x0, &fill);
        }
        let ly = MARGIN + frame.height + 16.0;
        match k {
            0 => ramp_legend(&mut out, x0, ly, &SEQUENTIAL, c_lo, c_hi),
            1 => ramp_legend(&mut out, x0, ly, &DIVERGING, i_lo, i_hi),
            _ => {
                let _ = writeln!(out, r#"<g class="legend">"#);
                for (j, l) in present.iter().enumerate() {
                    let y = ly + j as f64 * 14.0;
                    let _ = writeln!(out, r#"<rect x="{x0:.2}" y="{y:.2}" width="10" height="10" fill="{}"/>"#, label_color(*l));
                    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x0 + 14.0, y + 9.0, l.as_str());
                }
                let _ = writeln!(out, "</g>");
            }
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Observed incidents next to a uniform simulation of the same size.
pub fn dot_maps(outline: &[Vec<Point>], observed: &[Point], simulated: &[Point], stamp: Option<u64>) -> String {
    let all: Vec<Point> = outline.iter().flatten().copied().collect();
    let frame = Frame::new(bounding_points(&all));
    let meta = with_stamp(
        json!({"figure": "incidents_dotmap", "panels": [
            {"id": "observed", "n": observed.len()},
            {"id": "uniform", "n": simulated.len()},
        ]}),
        stamp,
    );
    let width = 2.0 * PANEL + 3.0 * MARGIN;
    let height = MARGIN * 2.0 + frame.height + 10.0;
    let mut out = String::new();
    header(&mut out, width, height, &meta);
    for (k, (id, title, pts)) in [("observed", "Observed incidents", observed), ("uniform", "Uniform simulation", simulated)]
        .into_iter()
        .enumerate()
    {
        let x0 = MARGIN + k as f64 * (PANEL + MARGIN);
        let _ = writeln!(out, r#"<g id="panel-{id}">"#);
        let _ = writeln!(out, r#"<text x="{x0:.2}" y="{:.2}" font-size="13">{title} (n = {})</text>"#, MARGIN - 8.0, pts.len());
        for ring in outline {
            let d: Vec<String> = ring
                .iter()
                .map(|&p| {
                    let (x, y) = frame.map(p, x0);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(out, r##"<path d="M{}Z" fill="none" stroke="#444444" stroke-width="0.8"/>"##, d.join(" L"));
        }
        for &p in pts {
            let (x, y) = frame.map(p, x0);
            let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="0.8" fill="#b2182b" fill-opacity="0.5"/>"##);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Predicted against observed counts with the identity line.
pub fn scatter(title: &str, observed: &[f64], predicted: &[f64], stamp: Option<u64>) -> String {
    let (lo_o, hi_o) = min_max(observed);
    let (lo_p, hi_p) = min_max(predicted);
    let lo = lo_o.min(lo_p);
    let hi = hi_o.max(hi_p);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let meta = with_stamp(
        json!({"figure": "scatter", "model": title, "n": observed.len(),
               "x": {"label": "observed", "min": lo_o, "max": hi_o},
               "y": {"label": "predicted", "min": lo_p, "max": hi_p}}),
        stamp,
    );
    let size = PANEL + 2.0 * MARGIN + 30.0;
    let ox = MARGIN + 30.0;
    let oy = MARGIN + PANEL;
    let map = |v: f64| (v - lo) / span * PANEL;
    let mut out = String::new();
    header(&mut out, size, size + 10.0, &meta);
    let _ = writeln!(out, r#"<text x="{ox:.2}" y="{:.2}" font-size="13">{}</text>"#, MARGIN - 8.0, escape(title));
    let _ = writeln!(out, r##"<rect x="{ox:.2}" y="{MARGIN:.2}" width="{PANEL:.2}" height="{PANEL:.2}" fill="none" stroke="#444444"/>"##);
    let _ = writeln!(
        out,
        r##"<line x1="{ox:.2}" y1="{oy:.2}" x2="{:.2}" y2="{MARGIN:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        ox + PANEL
    );
    for (&o, &p) in observed.iter().zip(predicted) {
        if o.is_finite() && p.is_finite() {
            let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#2166ac" fill-opacity="0.6"/>"##, ox + map(o), oy - map(p));
        }
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">observed</text>"#, ox + PANEL / 2.0, oy + 24.0);
    let _ = writeln!(out, r#"<text x="{ox:.2}" y="{:.2}">{}</text>"#, oy + 12.0, fmt_num(lo));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, ox + PANEL, oy + 12.0, fmt_num(hi));
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" transform="rotate(-90 {:.2} {:.2})" text-anchor="middle">predicted</text>"#,
        ox - 10.0,
        MARGIN + PANEL / 2.0,
        ox - 10.0,
        MARGIN + PANEL / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// JSON payload of an SVG's `<metadata>` block.
pub fn read_metadata(svg: &str) -> Option<Value> {
    let start = svg.find("<metadata>")? + "<metadata>".len();
    let end = svg[start..].find("</metadata>")? + start;
    let raw = svg[start..end].replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&");
    serde_json::from_str(&raw).ok()
}

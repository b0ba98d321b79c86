//! Planar polygons in projected coordinates (meters).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle `[min.x, max.x) × [min.y, max.y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            min: Point::new(self.min.x + dx, self.min.y + dy),
            max: Point::new(self.max.x + dx, self.max.y + dy),
        }
    }
}

/// Closed ring: at least four vertices with first == last.
#[derive(Clone, Debug, PartialEq)]
pub struct Ring(Vec<Point>);

impl Ring {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidGeometry(format!(
                "ring has {} vertices, at least 4 required",
                points.len()
            )));
        }
        if points.first() != points.last() {
            return Err(Error::InvalidGeometry("ring is not closed (first vertex != last)".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite vertex {p:?}")));
        }
        let ring = Ring(points);
        if ring.signed_area() == 0.0 {
            return Err(Error::InvalidGeometry("ring has zero area".into()));
        }
        Ok(ring)
    }

    /// Closed ring from the corners of a rectangle, counter-clockwise.
    pub fn rectangle(min: Point, max: Point) -> Result<Self> {
        Ring::new(vec![
            min,
            Point::new(max.x, min.y),
            max,
            Point::new(min.x, max.y),
            min,
        ])
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    /// Shoelace area, positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.0)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Even-odd ray casting. Points on an edge may land on either side.
    pub fn contains(&self, p: Point) -> bool {
        let pts = &self.0;
        let mut inside = false;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Area of the part of this ring's interior inside `rect`.
    ///
    /// Sutherland–Hodgman clipping against the (convex) rectangle. For a
    /// non-convex ring the clipped output can contain zero-width bridges, which
    /// contribute nothing to the shoelace area.
    pub fn clipped_area(&self, rect: &Rect) -> f64 {
        let mut poly: Vec<Point> = self.0[..self.0.len() - 1].to_vec();
        let edges: [(fn(Point, &Rect) -> bool, fn(Point, Point, &Rect) -> Point); 4] = [
            (|p, r| p.x >= r.min.x, |a, b, r| intersect_x(a, b, r.min.x)),
            (|p, r| p.x <= r.max.x, |a, b, r| intersect_x(a, b, r.max.x)),
            (|p, r| p.y >= r.min.y, |a, b, r| intersect_y(a, b, r.min.y)),
            (|p, r| p.y <= r.max.y, |a, b, r| intersect_y(a, b, r.max.y)),
        ];
        for (inside, cut) in edges {
            if poly.is_empty() {
                return 0.0;
            }
            let input = std::mem::take(&mut poly);
            let mut prev = *input.last().unwrap();
            for &cur in &input {
                let (ci, pi) = (inside(cur, rect), inside(prev, rect));
                if ci {
                    if !pi {
                        poly.push(cut(prev, cur, rect));
                    }
                    poly.push(cur);
                } else if pi {
                    poly.push(cut(prev, cur, rect));
                }
                prev = cur;
            }
        }
        if poly.len() < 3 {
            return 0.0;
        }
        poly.push(poly[0]);
        shoelace(&poly).abs()
    }
}

fn shoelace(pts: &[Point]) -> f64 {
    let mut s = 0.0;
    for w in pts.windows(2) {
        s += w[0].x * w[1].y - w[1].x * w[0].y;
    }
    0.5 * s
}

fn intersect_x(a: Point, b: Point, x: f64) -> Point {
    let t = (x - a.x) / (b.x - a.x);
    Point::new(x, a.y + t * (b.y - a.y))
}

fn intersect_y(a: Point, b: Point, y: f64) -> Point {
    let t = (y - a.y) / (b.y - a.y);
    Point::new(a.x + t * (b.x - a.x), y)
}

/// One exterior ring with optional holes.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Self {
        Self { exterior, holes }
    }

    pub fn area(&self) -> f64 {
        self.exterior.area() - self.holes.iter().map(Ring::area).sum::<f64>()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.exterior.contains(p) && !self.holes.iter().any(|h| h.contains(p))
    }

    pub fn clipped_area(&self, rect: &Rect) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| h.clipped_area(rect)).sum();
        (self.exterior.clipped_area(rect) - holes).max(0.0)
    }
}

/// Study area: a union of polygons in projected meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    polygons: Vec<Polygon>,
}

impl Boundary {
    pub fn new(polygons: Vec<Polygon>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::InvalidGeometry("boundary has no polygons".into()));
        }
        let b = Boundary { polygons };
        if b.area() <= 0.0 {
            return Err(Error::InvalidGeometry("boundary has zero area".into()));
        }
        Ok(b)
    }

    pub fn rectangle(min: Point, max: Point) -> Result<Self> {
        Boundary::new(vec![Polygon::new(Ring::rectangle(min, max)?, vec![])])
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn clipped_area(&self, rect: &Rect) -> f64 {
        self.polygons.iter().map(|p| p.clipped_area(rect)).sum()
    }

    pub fn bbox(&self) -> Rect {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.polygons.iter().flat_map(|poly| poly.exterior.points()) {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Rect { min, max }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Boundary {
        let shift = |r: &Ring| Ring(r.points().iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect());
        Boundary {
            polygons: self
                .polygons
                .iter()
                .map(|p| Polygon::new(shift(&p.exterior), p.holes.iter().map(shift).collect()))
                .collect(),
        }
    }

    /// Reject coordinates that look geographic: every vertex inside
    /// `|x| <= 360, |y| <= 90`.
    pub fn check_projected(&self) -> Result<()> {
        let bb = self.bbox();
        let geographic = bb.min.x.abs() <= 360.0
            && bb.max.x.abs() <= 360.0
            && bb.min.y.abs() <= 90.0
            && bb.max.y.abs() <= 90.0;
        if geographic {
            return Err(Error::Unprojected(format!(
                "bounding box x in [{}, {}], y in [{}, {}]",
                bb.min.x, bb.max.x, bb.min.y, bb.max.y
            )));
        }
        Ok(())
    }
}

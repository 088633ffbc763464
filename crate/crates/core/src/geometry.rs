//! Planar primitives for the zone map.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub start: Point,
    pub end: Point,
}

impl LineSegment {
    pub const fn new(start: Point, end: Point) -> Self {
        Self { start, end }
    }

    fn min_max(&self) -> (Point, Point) {
        (
            Point::new(self.start.x.min(self.end.x), self.start.y.min(self.end.y)),
            Point::new(self.start.x.max(self.end.x), self.start.y.max(self.end.y)),
        )
    }

    /// Closed-segment intersection: touching endpoints and collinear overlap
    /// both count.
    pub fn intersects(&self, other: &LineSegment) -> bool {
        let (a_lo, a_hi) = self.min_max();
        let (b_lo, b_hi) = other.min_max();
        if a_hi.x < b_lo.x || b_hi.x < a_lo.x || a_hi.y < b_lo.y || b_hi.y < a_lo.y {
            return false;
        }
        let (p, q) = (self.start, self.end);
        let (r, s) = (other.start, other.end);
        let d1 = orient(r, s, p);
        let d2 = orient(r, s, q);
        let d3 = orient(p, q, r);
        let d4 = orient(p, q, s);
        // collinear segments fall through with all four zero; the bounding-box
        // test above already established overlap
        !(d1 * d2 > 0.0 || d3 * d4 > 0.0)
    }
}

/// Twice the signed area of `a, b, c`; positive when counter-clockwise.
fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned rectangle with its lower-left corner at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x, self.y, self.width, self.height]
            .iter()
            .all(|v| v.is_finite())
            && self.width > 0.0
            && self.height > 0.0
    }

    pub fn max_x(&self) -> f64 {
        self.x + self.width
    }

    pub fn max_y(&self) -> f64 {
        self.y + self.height
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.max_x() && p.y >= self.y && p.y <= self.max_y()
    }

    /// Point at fractional coordinates `(u, v)` in `[0, 1)^2`.
    pub fn lerp(&self, u: f64, v: f64) -> Point {
        Point::new(self.x + u * self.width, self.y + v * self.height)
    }

    /// The four boundary edges: bottom, right, top, left.
    pub fn edges(&self) -> [LineSegment; 4] {
        let a = Point::new(self.x, self.y);
        let b = Point::new(self.max_x(), self.y);
        let c = Point::new(self.max_x(), self.max_y());
        let d = Point::new(self.x, self.max_y());
        [
            LineSegment::new(a, b),
            LineSegment::new(b, c),
            LineSegment::new(c, d),
            LineSegment::new(d, a),
        ]
    }

    /// Whether `seg` could touch this rectangle's boundary at all.
    pub(crate) fn bbox_overlaps(&self, seg: &LineSegment) -> bool {
        let (lo, hi) = seg.min_max();
        !(hi.x < self.x || lo.x > self.max_x() || hi.y < self.y || lo.y > self.max_y())
    }
}

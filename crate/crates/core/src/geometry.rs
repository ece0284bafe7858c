//! Exact 2-D primitives shared by generation, matching and evaluation.
//!
//! Coordinates are pixel units in image convention (x right, y down). A
//! pixel `(x, y)` has its center at the integer point `(x, y)`.
//!
//! Contour orientation: every [`OrderedContour`] built by this crate has a
//! positive signed shoelace area in raw image coordinates. We call that
//! counter-clockwise; on screen (y pointing down) it appears clockwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for merging coincident line/contour intersections.
pub const INTERSECTION_DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2-D cross product.
    pub fn cross(&self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Chebyshev (L-infinity) distance.
    pub fn chebyshev(&self, other: Point2) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Ordered closed boundary of a fragment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrderedContour {
    pub points: Vec<Point2>,
    pub closed: bool,
}

impl OrderedContour {
    pub fn closed(points: Vec<Point2>) -> Self {
        Self {
            points,
            closed: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Signed shoelace area in raw image coordinates.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            acc += a.cross(b);
        }
        acc * 0.5
    }

    /// Reverses the traversal if needed so the signed area is non-negative.
    pub fn make_ccw(&mut self) {
        if self.signed_area() < 0.0 {
            self.points.reverse();
        }
    }

    pub fn translated(&self, by: Point2) -> Self {
        Self {
            points: self.points.iter().map(|&p| p + by).collect(),
            closed: self.closed,
        }
    }

    pub fn centroid(&self) -> Option<Point2> {
        centroid(&self.points)
    }
}

/// Proper 2-D rigid motion `p -> R(theta) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform2D {
    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            tx,
            ty,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.tx, self.ty)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty)
    }

    pub fn apply_all(&self, pts: &[Point2]) -> Vec<Point2> {
        pts.iter().map(|&p| self.apply(p)).collect()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        let t = self.apply(other.translation());
        RigidTransform2D::new(self.theta + other.theta, t.x, t.y)
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let (s, c) = self.theta.sin_cos();
        let tx = -(c * self.tx + s * self.ty);
        let ty = -(-s * self.tx + c * self.ty);
        RigidTransform2D::new(-self.theta, tx, ty)
    }

    /// Rotation block `[[c, -s], [s, c]]` in row-major order.
    pub fn rotation_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s], [s, c]]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let mut a = theta % two_pi;
    if a <= -PI {
        a += two_pi;
    } else if a > PI {
        a -= two_pi;
    }
    a
}

/// Axis-aligned rectangle given by its min and max corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            self.min,
            Point2::new(self.max.x, self.min.y),
            self.max,
            Point2::new(self.min.x, self.max.y),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn half_perimeter(&self) -> f64 {
        PI * self.radius
    }

    pub fn point_at(&self, angle: f64) -> Point2 {
        Point2::new(
            self.center.x + self.radius * angle.cos(),
            self.center.y + self.radius * angle.sin(),
        )
    }
}

/// Circle through the four corners of `rect`.
pub fn circumcircle(rect: &Rect) -> Result<Circle> {
    let (w, h) = (rect.width(), rect.height());
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "rectangle must have positive extent, got {w}x{h}"
        )));
    }
    Ok(Circle {
        center: rect.center(),
        radius: 0.5 * w.hypot(h),
    })
}

/// Length of the shorter arc between two points on `circle`.
pub fn smaller_arc_length(circle: &Circle, a: Point2, b: Point2) -> Result<f64> {
    let tol = 1e-6 * circle.radius;
    for p in [a, b] {
        let r = p.dist(circle.center);
        if (r - circle.radius).abs() > tol {
            return Err(Error::InvalidGeometry(format!(
                "point ({}, {}) is {r} from center, radius is {}",
                p.x, p.y, circle.radius
            )));
        }
    }
    let va = a - circle.center;
    let vb = b - circle.center;
    // atan2 of (cross, dot) is stable near 0 and pi
    let delta = va.cross(vb).abs().atan2(va.dot(vb));
    Ok(circle.radius * delta.clamp(0.0, PI))
}

/// A point where a line meets a contour, with the index of the contour edge
/// (edge `i` runs from point `i` to point `i + 1`, cyclically).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourHit {
    pub point: Point2,
    pub edge: usize,
}

/// Intersections of the infinite line through `a` and `b` with the closed
/// polygon `contour`, ordered by projection onto the `a -> b` direction.
pub fn segment_contour_intersections(
    contour: &OrderedContour,
    a: Point2,
    b: Point2,
) -> Vec<ContourHit> {
    let n = contour.points.len();
    let dir = b - a;
    let len = dir.norm();
    if n == 0 || len == 0.0 {
        return Vec::new();
    }
    let u = dir * (1.0 / len);
    let mut hits: Vec<(f64, ContourHit)> = Vec::new();
    let edge_count = if n == 1 { 1 } else { n };
    for i in 0..edge_count {
        let p = contour.points[i];
        let q = contour.points[(i + 1) % n];
        // signed distances of edge endpoints from the line
        let dp = u.cross(p - a);
        let dq = u.cross(q - a);
        if dp == 0.0 && dq == 0.0 {
            hits.push((u.dot(p - a), ContourHit { point: p, edge: i }));
            if q != p {
                hits.push((u.dot(q - a), ContourHit { point: q, edge: i }));
            }
            continue;
        }
        if (dp > 0.0 && dq > 0.0) || (dp < 0.0 && dq < 0.0) {
            continue;
        }
        let s = dp / (dp - dq);
        let point = p + (q - p) * s;
        hits.push((u.dot(point - a), ContourHit { point, edge: i }));
    }
    hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.edge.cmp(&y.1.edge)));
    let mut out: Vec<ContourHit> = Vec::with_capacity(hits.len());
    for (_, h) in hits {
        if let Some(last) = out.last() {
            if last.point.dist(h.point) <= INTERSECTION_DEDUP_TOL {
                continue;
            }
        }
        out.push(h);
    }
    out
}

/// Absolute shoelace area.
pub fn polygon_area(contour: &OrderedContour) -> Result<f64> {
    if contour.points.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "polygon area needs at least 3 points, got {}",
            contour.points.len()
        )));
    }
    Ok(contour.signed_area().abs())
}

/// Symmetric Hausdorff distance under the Euclidean metric.
pub fn hausdorff_distance(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "hausdorff distance of an empty point set".into(),
        ));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)).sqrt())
}

// squared
fn directed_hausdorff(a: &[Point2], b: &[Point2]) -> f64 {
    let mut worst = 0.0f64;
    for &p in a {
        let mut best = f64::INFINITY;
        for &q in b {
            let d = p.dist_sq(q);
            if d < best {
                best = d;
                if best <= worst {
                    // cannot raise the running max
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

pub fn centroid(pts: &[Point2]) -> Option<Point2> {
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    Some(Point2::new(sx / n, sy / n))
}

/// Least-squares proper rigid transform mapping `src` onto `dst`.
pub fn rigid_fit(src: &[Point2], dst: &[Point2]) -> Result<RigidTransform2D> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!(
            "rigid_fit needs equal lengths, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "rigid_fit needs at least 2 correspondences, got {}",
            src.len()
        )));
    }
    let cs = centroid(src).unwrap();
    let cd = centroid(dst).unwrap();
    let mut spread = 0.0;
    let mut sum_dot = 0.0;
    let mut sum_cross = 0.0;
    for (&s, &d) in src.iter().zip(dst) {
        let ps = s - cs;
        let pd = d - cd;
        spread += ps.dot(ps);
        sum_dot += ps.dot(pd);
        sum_cross += ps.cross(pd);
    }
    let scale = src
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(1.0f64, f64::max);
    if spread <= 1e-20 * scale * scale {
        return Err(Error::DegenerateConfiguration(
            "all source points coincide".into(),
        ));
    }
    let theta = sum_cross.atan2(sum_dot);
    let rot = RigidTransform2D::new(theta, 0.0, 0.0);
    let rc = rot.apply(cs);
    Ok(RigidTransform2D::new(theta, cd.x - rc.x, cd.y - rc.y))
}

/// Root-mean-square distance between `t(src)` and `dst`.
pub fn rms_residual(t: &RigidTransform2D, src: &[Point2], dst: &[Point2]) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    let ss: f64 = src
        .iter()
        .zip(dst)
        .map(|(&s, &d)| t.apply(s).dist_sq(d))
        .sum();
    (ss / src.len() as f64).sqrt()
}

/// Whether closed segments `p1-p2` and `q1-q2` share a point.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
        (b - a).cross(c - a)
    }
    fn on_segment(a: Point2, b: Point2, c: Point2) -> bool {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Whether an open polyline is simple: non-adjacent segments never touch and
/// adjacent segments share only their common vertex.
pub fn polyline_is_simple(points: &[Point2]) -> bool {
    let n = points.len();
    if n < 3 {
        return true;
    }
    let segs = n - 1;
    // bounding boxes for a cheap reject
    let boxes: Vec<(f64, f64, f64, f64)> = (0..segs)
        .map(|i| {
            let (a, b) = (points[i], points[i + 1]);
            (a.x.min(b.x), a.x.max(b.x), a.y.min(b.y), a.y.max(b.y))
        })
        .collect();
    for i in 0..segs {
        // zero-length segments make adjacency checks meaningless
        if points[i] == points[i + 1] {
            return false;
        }
        for j in (i + 2)..segs {
            let (bi, bj) = (boxes[i], boxes[j]);
            if bi.1 < bj.0 || bj.1 < bi.0 || bi.3 < bj.2 || bj.3 < bi.2 {
                continue;
            }
            if segments_intersect(points[i], points[i + 1], points[j], points[j + 1]) {
                return false;
            }
        }
        if i + 1 < segs {
            // adjacent segments folding back onto each other
            let a = points[i + 1] - points[i];
            let b = points[i + 2] - points[i + 1];
            if a.cross(b) == 0.0 && a.dot(b) < 0.0 {
                return false;
            }
        }
    }
    true
}

//! Cut endpoints, interior waypoints and the Fourier-series cut spans.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CutPolyline, FragmentRecord, GeneratorConfig, SegmentKind};
use crate::codec::outer_boundary_pixels;
use crate::error::{Error, Result};
use crate::geometry::{circumcircle, polyline_is_simple, segment_contour_intersections, Circle, Point2, Rect};
use crate::raster::squared_distance_transform;

/// Consecutive endpoint rejections before giving up on a fragment.
pub const ENDPOINT_REJECTION_LIMIT: usize = 1000;
const PERIOD_ATTEMPTS: usize = 100;
const POLYLINE_ATTEMPTS: usize = 20;

/// Circumcircle of the fragment's pixel-center bounding box (local frame).
fn fragment_circle(fragment: &FragmentRecord) -> Result<Circle> {
    let (w, h) = (fragment.width(), fragment.height());
    if w < 2 || h < 2 {
        return Err(Error::InvalidGeometry(format!("fragment {w}x{h} is too thin to cut")));
    }
    circumcircle(&Rect::new(Point2::new(0.0, 0.0), Point2::new((w - 1) as f64, (h - 1) as f64)))
}

/// Two points on `circle` whose smaller arc exceeds `tau` times the half
/// perimeter.
pub fn sample_chord(circle: &Circle, tau: f64, rng: &mut impl Rng) -> (Point2, Point2) {
    loop {
        let a = rng.random_range(-PI..PI);
        let b = rng.random_range(-PI..PI);
        let delta = (a - b).abs();
        let central = delta.min(2.0 * PI - delta);
        if circle.radius * central > tau * circle.half_perimeter() {
            return (circle.point_at(a), circle.point_at(b));
        }
    }
}

/// First and last hits of a long random chord's line with the contour.
pub fn sample_cut_endpoints(
    fragment: &FragmentRecord,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<(Point2, Point2)> {
    let circle = fragment_circle(fragment)?;
    for _ in 0..ENDPOINT_REJECTION_LIMIT {
        let (pa, pb) = sample_chord(&circle, cfg.tau, rng);
        let hits = segment_contour_intersections(&fragment.contour, pa, pb);
        if let (Some(first), Some(last)) = (hits.first(), hits.last()) {
            if first.point.dist(last.point) > 1.0 {
                return Ok((first.point, last.point));
            }
        }
    }
    Err(Error::GenerationRetry(ENDPOINT_REJECTION_LIMIT))
}

/// Up to `m` distinct pixel centers farther than `d_min` from the contour,
/// sorted by projection onto `axis.0 -> axis.1`.
pub fn sample_interior_waypoints(
    fragment: &FragmentRecord,
    m: usize,
    axis: (Point2, Point2),
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Vec<Point2> {
    if m == 0 {
        return Vec::new();
    }
    let (w, h) = (fragment.width(), fragment.height());
    let dist = squared_distance_transform(w, h, &outer_boundary_pixels(&fragment.mask));
    let limit = cfg.d_min * cfg.d_min;
    let candidates: Vec<usize> = (0..w * h)
        .filter(|&i| fragment.mask.data()[i] && dist[i] > limit)
        .collect();
    let take = m.min(candidates.len());
    if take < m {
        log::debug!("waypoints downgraded from {m} to {take}: fragment too narrow for d_min {}", cfg.d_min);
    }
    let mut pts: Vec<Point2> = rand::seq::index::sample(rng, candidates.len(), take)
        .into_iter()
        .map(|k| {
            let i = candidates[k];
            Point2::new((i % w) as f64, (i / w) as f64)
        })
        .collect();
    let dir = axis.1 - axis.0;
    pts.sort_by(|a, b| dir.dot(*a - axis.0).total_cmp(&dir.dot(*b - axis.0)));
    pts
}

/// Draw of one irregular span: `y(x) = sum_{i=0}^{n_terms} A/(1+i) sin(2 pi i x / T + phi) + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierParams {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
    pub offset: f64,
    pub n_terms: usize,
}

impl FourierParams {
    /// The unanchored series at local abscissa `x`.
    pub fn raw(&self, x: f64) -> f64 {
        let mut y = self.offset;
        for i in 0..=self.n_terms {
            let fi = i as f64;
            y += self.amplitude / (1.0 + fi) * (2.0 * PI * fi / self.period * x + self.phase).sin();
        }
        y
    }

    /// Curve from `p_i` to `p_j`: unit steps along the chord, offsets along
    /// its left normal, endpoint residuals removed by linear blending.
    pub fn curve(&self, p_i: Point2, p_j: Point2) -> Vec<Point2> {
        let len = p_i.dist(p_j);
        let u = (p_j - p_i) * (1.0 / len);
        let v = Point2::new(-u.y, u.x);
        let mut xs: Vec<f64> = (0..=len.floor() as usize).map(|k| k as f64).collect();
        if len - xs[xs.len() - 1] > 1e-9 {
            xs.push(len);
        }
        let (y0, y1) = (self.raw(0.0), self.raw(len));
        let last = xs.len() - 1;
        xs.iter()
            .enumerate()
            .map(|(k, &x)| {
                if k == 0 {
                    return p_i;
                }
                if k == last {
                    return p_j;
                }
                let y = self.raw(x) - (y0 + (y1 - y0) * x / len);
                p_i + u * x + v * y
            })
            .collect()
    }
}

/// Draws phase, amplitude and period; `None` when every period draw was at
/// most one pixel.
pub fn sample_fourier_params(w: f64, h: f64, cfg: &GeneratorConfig, rng: &mut impl Rng) -> Option<FourierParams> {
    let amp = Normal::new(cfg.s1 * h, cfg.s2 * h).ok()?;
    let per = Normal::new(cfg.s3 * w, cfg.s4 * w).ok()?;
    for _ in 0..PERIOD_ATTEMPTS {
        let phase = rng.random_range(-PI..PI);
        let amplitude = amp.sample(rng);
        let period = per.sample(rng);
        if period > 1.0 {
            return Some(FourierParams {
                amplitude,
                period,
                phase,
                offset: h / 2.0,
                n_terms: cfg.n_fourier,
            });
        }
    }
    None
}

/// Irregular span between two waypoints; straight when no valid period is drawn.
pub fn fourier_curve(
    p_i: Point2,
    p_j: Point2,
    w: f64,
    h: f64,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Point2>> {
    if p_i.dist(p_j) == 0.0 {
        return Err(Error::InvalidGeometry("irregular span needs distinct endpoints".into()));
    }
    Ok(match sample_fourier_params(w, h, cfg, rng) {
        Some(p) => p.curve(p_i, p_j),
        None => vec![p_i, p_j],
    })
}

/// Connects waypoints with straight or irregular spans; resamples
/// self-intersecting results, then falls back to straight spans.
pub fn build_cut_polyline(
    waypoints: &[Point2],
    w: f64,
    h: f64,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<CutPolyline> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidInput("a cut needs at least two waypoints".into()));
    }
    if waypoints.windows(2).any(|s| s[0].dist(s[1]) == 0.0) {
        return Err(Error::InvalidGeometry("consecutive cut waypoints coincide".into()));
    }
    for _ in 0..POLYLINE_ATTEMPTS {
        let mut points = vec![waypoints[0]];
        let mut kinds = Vec::with_capacity(waypoints.len() - 1);
        for s in waypoints.windows(2) {
            if rng.random_bool(cfg.rho) {
                kinds.push(SegmentKind::Irregular);
                points.extend(fourier_curve(s[0], s[1], w, h, cfg, rng)?.into_iter().skip(1));
            } else {
                kinds.push(SegmentKind::Straight);
                points.push(s[1]);
            }
        }
        if polyline_is_simple(&points) {
            return Ok(CutPolyline {
                points,
                segment_kinds: kinds,
            });
        }
    }
    Ok(CutPolyline {
        points: waypoints.to_vec(),
        segment_kinds: vec![SegmentKind::Straight; waypoints.len() - 1],
    })
}

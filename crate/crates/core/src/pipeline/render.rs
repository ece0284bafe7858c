//! Static SVG overlays of a registered pair.

use std::fmt::Write;

use crate::geometry::{Point2, RigidTransform2D};

/// Correspondence lines drawn per overlay.
pub const MAX_DRAWN_LINES: usize = 60;
const MARGIN: f64 = 20.0;
const GAP: f64 = 40.0;

fn polygon(out: &mut String, pts: &[Point2], shift: Point2, style: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|p| format!("{:.2},{:.2}", p.x + shift.x, p.y + shift.y))
        .collect();
    let _ = writeln!(out, r#"<polygon points="{}" {style}/>"#, coords.join(" "));
}

fn bounds(pts: impl Iterator<Item = Point2>) -> (Point2, Point2) {
    pts.fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Left panel: fragment m with n placed by the ground truth (green) and by
/// the estimate (red, dashed). Right panel: both contours side by side with
/// correspondence lines `(index in m, index in n)`.
pub fn render_overlay(
    contour_m: &[Point2],
    contour_n: &[Point2],
    gt: &RigidTransform2D,
    est: Option<&RigidTransform2D>,
    correspondences: &[(usize, usize)],
    title: &str,
) -> String {
    let placed_gt = gt.apply_all(contour_n);
    let placed_est = est.map(|t| t.apply_all(contour_n));
    let left_pts = contour_m
        .iter()
        .chain(&placed_gt)
        .chain(placed_est.iter().flatten())
        .copied();
    let (llo, lhi) = bounds(left_pts);
    let (mlo, mhi) = bounds(contour_m.iter().copied());
    let (nlo, nhi) = bounds(contour_n.iter().copied());
    let left_shift = Point2::new(MARGIN - llo.x, MARGIN + 20.0 - llo.y);
    let right_x = MARGIN + (lhi.x - llo.x) + GAP;
    let m_shift = Point2::new(right_x - mlo.x, MARGIN + 20.0 - mlo.y);
    let n_shift = Point2::new(right_x + (mhi.x - mlo.x) + GAP - nlo.x, MARGIN + 20.0 - nlo.y);
    let width = n_shift.x + nhi.x + MARGIN;
    let height = MARGIN * 2.0 + 20.0 + (lhi.y - llo.y).max(mhi.y - mlo.y).max(nhi.y - nlo.y);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="14">{}</text>"#,
        MARGIN,
        escape(title)
    );
    polygon(&mut out, contour_m, left_shift, r##"fill="#9aa5b1" fill-opacity="0.5" stroke="#3e4c59""##);
    polygon(&mut out, &placed_gt, left_shift, r##"fill="#2f9e44" fill-opacity="0.25" stroke="#2f9e44""##);
    if let Some(pts) = &placed_est {
        polygon(&mut out, pts, left_shift, r##"fill="none" stroke="#e03131" stroke-dasharray="6 4""##);
    }
    polygon(&mut out, contour_m, m_shift, r##"fill="#9aa5b1" fill-opacity="0.5" stroke="#3e4c59""##);
    polygon(&mut out, contour_n, n_shift, r##"fill="#74c0fc" fill-opacity="0.5" stroke="#1c7ed6""##);
    let stride = correspondences.len().div_ceil(MAX_DRAWN_LINES).max(1);
    for &(i, j) in correspondences.iter().step_by(stride) {
        let (Some(a), Some(b)) = (contour_m.get(i), contour_n.get(j)) else { continue };
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#f08c00" stroke-width="0.8"/>"##,
            a.x + m_shift.x,
            a.y + m_shift.y,
            b.x + n_shift.x,
            b.y + n_shift.y
        );
    }
    out.push_str("</svg>\n");
    out
}

//! Splitting a fragment along a rasterized cut.

use std::collections::{HashSet, VecDeque};

use image::RgbImage;

use super::{CutPolyline, FragmentRecord};
use crate::codec::trace_contour;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::raster::{has_holes, label_components, rasterize_polyline, Mask, N4, N8};

/// The cut is extended this far past both endpoints so it fully severs the
/// boundary pixels it starts and ends on.
pub const CUT_EXTENSION_PX: f64 = 3.0;
/// Largest stray component (pixels) absorbed into the sides.
const MAX_STRAY_COMPONENT: usize = 16;

fn extended(points: &[Point2]) -> Vec<Point2> {
    let n = points.len();
    let push_out = |end: Point2, inner: Point2| {
        let d = end - inner;
        let len = d.norm();
        if len == 0.0 {
            end
        } else {
            end + d * (CUT_EXTENSION_PX / len)
        }
    };
    let mut out = Vec::with_capacity(n + 2);
    out.push(push_out(points[0], points[1]));
    out.extend_from_slice(points);
    out.push(push_out(points[n - 1], points[n - 2]));
    out
}

/// Splits `fragment` along `cut` (fragment-local frame). Children carry
/// id 0 and image-frame offsets; the larger side comes first. Also returns
/// the paired boundary pixels of the two sides in the image frame.
pub fn cut_fragment(
    fragment: &FragmentRecord,
    cut: &CutPolyline,
) -> Result<(FragmentRecord, FragmentRecord, Vec<(Point2, Point2)>)> {
    if cut.points.len() < 2 {
        return Err(Error::InvalidCut("cut needs at least two points".into()));
    }
    let (w, h) = (fragment.width(), fragment.height());
    let mask = &fragment.mask;
    let mut on_cut = vec![false; w * h];
    let mut severed = 0usize;
    for (x, y) in rasterize_polyline(&extended(&cut.points)) {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            let i = y as usize * w + x as usize;
            if mask.data()[i] && !on_cut[i] {
                on_cut[i] = true;
                severed += 1;
            }
        }
    }
    if severed == 0 {
        return Err(Error::InvalidCut("cut misses the fragment".into()));
    }
    let region = Mask::from_fn(w, h, |x, y| mask.get(x, y) && !on_cut[y * w + x]);
    let (labels, sizes) = label_components(&region, false);
    let mut order: Vec<usize> = (1..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    if order.len() < 2 {
        return Err(Error::InvalidCut("cut does not separate the fragment".into()));
    }
    if order.len() > 2 && sizes[order[2]] > MAX_STRAY_COMPONENT {
        return Err(Error::InvalidCut(format!(
            "cut produces {} components, third has {} px",
            order.len(),
            sizes[order[2]]
        )));
    }
    let path = extended(&cut.points);
    let mut side = vec![0u8; w * h];
    for i in 0..w * h {
        let l = labels[i] as usize;
        if l == order[0] {
            side[i] = 1;
        } else if l == order[1] {
            side[i] = 2;
        }
    }
    // cut pixels join the side of the cut their center lies on
    let mut votes = [0i64; 3];
    for i in (0..w * h).filter(|&i| on_cut[i]) {
        let sign = side_of(&path, pixel_center(i, w));
        for j in neighbors4(i, w, h) {
            if side[j] != 0 {
                votes[side[j] as usize] += sign;
            }
        }
    }
    let positive = if votes[1] >= votes[2] { 1u8 } else { 2u8 };
    let cut_sides: Vec<(usize, u8)> = (0..w * h)
        .filter(|&i| on_cut[i])
        .map(|i| {
            let s = if side_of(&path, pixel_center(i, w)) > 0 { positive } else { 3 - positive };
            (i, s)
        })
        .collect();
    for &(i, s) in &cut_sides {
        if neighbors4(i, w, h).any(|j| side[j] == s) {
            side[i] = s;
        }
    }
    // remaining mask pixels grow in from the sides
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| side[i] != 0).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &N8 {
            let (nx, ny) = (x + dx, y + dy);
            if mask.get_signed(nx, ny) {
                let j = ny as usize * w + nx as usize;
                if side[j] == 0 {
                    side[j] = side[i];
                    queue.push_back(j);
                }
            }
        }
    }
    let c1 = child(fragment, &side, 1)?;
    let c2 = child(fragment, &side, 2)?;
    let contacts = boundary_contacts(&c1, &c2);
    if contacts.is_empty() {
        return Err(Error::InvalidCut("sides do not touch".into()));
    }
    Ok((c1, c2, contacts))
}

fn pixel_center(i: usize, w: usize) -> Point2 {
    Point2::new((i % w) as f64, (i / w) as f64)
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as i64, (i / w) as i64);
    N4.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then(|| ny as usize * w + nx as usize)
    })
}

/// +1 or -1 by the side of the nearest path segment `p` lies on (0 when on it).
fn side_of(path: &[Point2], p: Point2) -> i64 {
    let mut best = (f64::INFINITY, 0.0);
    for s in path.windows(2) {
        let d = s[1] - s[0];
        let len2 = d.dot(d);
        if len2 == 0.0 {
            continue;
        }
        let t = ((p - s[0]).dot(d) / len2).clamp(0.0, 1.0);
        let dist = p.dist(s[0] + d * t);
        if dist < best.0 {
            best = (dist, d.cross(p - s[0]));
        }
    }
    if best.1 > 0.0 {
        1
    } else if best.1 < 0.0 {
        -1
    } else {
        0
    }
}

fn child(parent: &FragmentRecord, side: &[u8], which: u8) -> Result<FragmentRecord> {
    let (w, h) = (parent.width(), parent.height());
    let full = Mask::from_fn(w, h, |x, y| side[y * w + x] == which);
    let (x0, y0, x1, y1) = full
        .bbox()
        .ok_or_else(|| Error::InvalidCut("empty side".into()))?;
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let mask = full.crop(x0, y0, cw, ch);
    if has_holes(&mask) {
        return Err(Error::InvalidCut("side has a hole".into()));
    }
    let contour = trace_contour(&mask)?;
    let pixels = RgbImage::from_fn(cw as u32, ch as u32, |x, y| {
        if mask.get(x as usize, y as usize) {
            *parent.pixels.get_pixel(x + x0 as u32, y + y0 as u32)
        } else {
            image::Rgb([0, 0, 0])
        }
    });
    Ok(FragmentRecord {
        id: 0,
        pixels,
        mask,
        offset: parent.offset + Point2::new(x0 as f64, y0 as f64),
        contour,
        source_image_id: parent.source_image_id,
    })
}

fn origin(f: &FragmentRecord) -> (i64, i64) {
    (f.offset.x.round() as i64, f.offset.y.round() as i64)
}

fn contact_pixels(a: &FragmentRecord, b: &FragmentRecord) -> Vec<(i64, i64)> {
    let (ax, ay) = origin(a);
    let (bx, by) = origin(b);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in &a.contour.points {
        let (gx, gy) = (p.x.round() as i64 + ax, p.y.round() as i64 + ay);
        if !seen.insert((gx, gy)) {
            continue;
        }
        if N8.iter().any(|&(dx, dy)| b.mask.get_signed(gx + dx - bx, gy + dy - by)) {
            out.push((gx, gy));
        }
    }
    out
}

/// Boundary pixels of `a` touching `b` (8-adjacency), each paired with the
/// nearest boundary pixel of `b` touching `a`. Image frame, contour order of `a`.
pub fn boundary_contacts(a: &FragmentRecord, b: &FragmentRecord) -> Vec<(Point2, Point2)> {
    let on_a = contact_pixels(a, b);
    if on_a.is_empty() {
        return Vec::new();
    }
    let on_b: HashSet<(i64, i64)> = contact_pixels(b, a).into_iter().collect();
    let diagonals = N8.iter().filter(|(dx, dy)| dx != &0 && dy != &0);
    let ring: Vec<(i64, i64)> = N4.iter().copied().chain(diagonals.copied()).collect();
    on_a.into_iter()
        .filter_map(|(x, y)| {
            ring.iter().find(|&&(dx, dy)| on_b.contains(&(x + dx, y + dy))).map(|&(dx, dy)| {
                (
                    Point2::new(x as f64, y as f64),
                    Point2::new((x + dx) as f64, (y + dy) as f64),
                )
            })
        })
        .collect()
}

//! Moore-neighbor boundary tracing.

use crate::error::{Error, Result};
use crate::geometry::{OrderedContour, Point2};
use crate::raster::{label_components, Mask, N8};

/// Traces the outer boundary of the single 8-connected foreground component
/// of `mask`, starting at its topmost-leftmost pixel.
///
/// The scan order around each pixel is E, SE, S, SW, W, NW, N, NE, which in
/// image coordinates yields a positive shoelace area. Pixels on one-pixel
/// necks are visited once per pass.
pub fn trace_contour(mask: &Mask) -> Result<OrderedContour> {
    let (_, sizes) = label_components(mask, true);
    match sizes.len() {
        1 => return Err(Error::InvalidMask("mask is empty".into())),
        2 => {}
        n => {
            return Err(Error::InvalidMask(format!(
                "mask has {} 8-connected components, expected 1",
                n - 1
            )))
        }
    }
    let start = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .find(|&(x, y)| mask.get(x, y))
        .expect("non-empty mask");
    Ok(OrderedContour::closed(trace_from(mask, start)))
}

fn dir_index(dx: i64, dy: i64) -> usize {
    N8.iter()
        .position(|&d| d == (dx, dy))
        .expect("unit offset")
}

/// One step of Moore tracing: from `cur` with the background neighbor in
/// direction `back`, returns the next foreground pixel and its backtrack
/// direction.
fn step(mask: &Mask, cur: (i64, i64), back: usize) -> Option<((i64, i64), usize)> {
    for i in 1..=8 {
        let d = (back + i) % 8;
        let (dx, dy) = N8[d];
        let q = (cur.0 + dx, cur.1 + dy);
        if mask.get_signed(q.0, q.1) {
            let (px, py) = N8[(d + 7) % 8];
            let prev = (cur.0 + px, cur.1 + py);
            let nb = dir_index(prev.0 - q.0, prev.1 - q.1);
            return Some((q, nb));
        }
    }
    None
}

fn trace_from(mask: &Mask, start: (usize, usize)) -> Vec<Point2> {
    let s = (start.0 as i64, start.1 as i64);
    let to_pt = |p: (i64, i64)| Point2::new(p.0 as f64, p.1 as f64);
    // west of the topmost-leftmost pixel is always background
    let Some(first) = step(mask, s, 4) else {
        return vec![to_pt(s)];
    };
    let mut out = vec![to_pt(s)];
    let (mut cur, mut back) = first;
    // guard against pathological loops; each pixel is visited at most 4 times
    let limit = 4 * mask.count() + 8;
    while out.len() <= limit {
        if cur == s {
            let next = step(mask, cur, back).expect("start has a neighbor");
            if next == first {
                break;
            }
            out.push(to_pt(cur));
            (cur, back) = next;
            continue;
        }
        out.push(to_pt(cur));
        (cur, back) = step(mask, cur, back).expect("traced pixel has a neighbor");
    }
    out
}

/// Foreground pixels 4-adjacent to the exterior background. This is the
/// pixel set visited by [`trace_contour`].
pub fn outer_boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width() + 2, mask.height() + 2);
    let fg = |x: i64, y: i64| mask.get_signed(x - 1, y - 1);
    let mut outside = vec![false; w * h];
    let mut stack = vec![(0i64, 0i64)];
    outside[0] = true;
    while let Some((x, y)) = stack.pop() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let i = ny as usize * w + nx as usize;
            if !outside[i] && !fg(nx, ny) {
                outside[i] = true;
                stack.push((nx, ny));
            }
        }
    }
    let mut out = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let (px, py) = (x as i64 + 1, y as i64 + 1);
            let touches = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (px + dx, py + dy);
                outside[ny as usize * w + nx as usize]
            });
            if touches {
                out.push((x, y));
            }
        }
    }
    out
}

//! Contour-index ground truth of adjacent fragments.

use std::collections::HashSet;

use super::{FragmentRecord, GeneratorConfig, PairGroundTruth};
use crate::error::{Error, Result};
use crate::geometry::{rigid_fit, Point2};

/// Matched boundary pixels are at most this far apart in the image frame.
pub const MATCH_TOL_PX: f64 = 1.5;
/// Extra alignment cost of a non-diagonal staircase step.
const STEP_PENALTY: f64 = 0.5;

fn key(p: Point2) -> (i64, i64) {
    (p.x.round() as i64, p.y.round() as i64)
}

/// Ascending indices rotated to start right after their largest cyclic gap.
fn cyclic_run(mut idx: Vec<usize>, n: usize) -> Vec<usize> {
    if idx.len() < 2 {
        return idx;
    }
    idx.sort_unstable();
    let k = idx.len();
    let start = (0..k)
        .max_by_key(|&t| {
            let next = idx[(t + 1) % k];
            ((next + n - idx[t]) % n, std::cmp::Reverse(t))
        })
        .map(|t| (t + 1) % k)
        .unwrap();
    idx.rotate_left(start);
    idx
}

/// Monotone alignment of two point sequences; returns index pairs.
fn align(a: &[Point2], b: &[Point2]) -> Vec<(usize, usize)> {
    let (ra, rb) = (a.len(), b.len());
    let mut acc = vec![0.0; ra * rb];
    // 0 diagonal, 1 from (i-1, j), 2 from (i, j-1)
    let mut from = vec![0u8; ra * rb];
    for i in 0..ra {
        for j in 0..rb {
            let (best, dir) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cand = (f64::INFINITY, 0u8);
                if i > 0 && j > 0 {
                    cand = (acc[(i - 1) * rb + j - 1], 0);
                }
                if i > 0 && acc[(i - 1) * rb + j] + STEP_PENALTY < cand.0 {
                    cand = (acc[(i - 1) * rb + j] + STEP_PENALTY, 1);
                }
                if j > 0 && acc[i * rb + j - 1] + STEP_PENALTY < cand.0 {
                    cand = (acc[i * rb + j - 1] + STEP_PENALTY, 2);
                }
                cand
            };
            acc[i * rb + j] = a[i].dist(b[j]) + best;
            from[i * rb + j] = dir;
        }
    }
    let (mut i, mut j) = (ra - 1, rb - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        match from[i * rb + j] {
            0 => (i, j) = (i - 1, j - 1),
            1 => i -= 1,
            _ => j -= 1,
        }
        path.push((i, j));
    }
    path.reverse();
    path
}

/// Converts paired boundary pixels (image frame) into a contour-index
/// staircase, fits the n-to-m transform and grades the pair.
pub fn derive_pair_gt(
    f_m: &FragmentRecord,
    f_n: &FragmentRecord,
    raw: &[(Point2, Point2)],
    cfg: &GeneratorConfig,
) -> Result<PairGroundTruth> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("no matched boundary points".into()));
    }
    let on_m: HashSet<(i64, i64)> = raw.iter().map(|r| key(r.0)).collect();
    let on_n: HashSet<(i64, i64)> = raw.iter().map(|r| key(r.1)).collect();
    let gm = f_m.global_contour();
    let gn = f_n.global_contour();
    let (mm, nn) = (gm.len(), gn.len());
    let seq_m = cyclic_run((0..mm).filter(|&i| on_m.contains(&key(gm[i]))).collect(), mm);
    // n is traversed backwards along the shared boundary
    let rev: Vec<usize> = (0..nn).filter(|&j| on_n.contains(&key(gn[j]))).map(|j| nn - 1 - j).collect();
    let seq_n: Vec<usize> = cyclic_run(rev, nn).into_iter().map(|j| nn - 1 - j).collect();
    if seq_m.is_empty() || seq_n.is_empty() {
        return Err(Error::InvalidInput("matched points are not on the contours".into()));
    }
    let pa: Vec<Point2> = seq_m.iter().map(|&i| gm[i]).collect();
    let pb: Vec<Point2> = seq_n.iter().map(|&j| gn[j]).collect();
    let matches: Vec<(usize, usize)> = align(&pa, &pb)
        .into_iter()
        .filter(|&(a, b)| pa[a].dist(pb[b]) <= MATCH_TOL_PX)
        .map(|(a, b)| (seq_m[a], seq_n[b]))
        .collect();
    if matches.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "pair ({}, {}) has {} matches",
            f_m.id,
            f_n.id,
            matches.len()
        )));
    }
    let src: Vec<Point2> = matches.iter().map(|&(_, j)| f_n.contour.points[j]).collect();
    let dst: Vec<Point2> = matches.iter().map(|&(i, _)| f_m.contour.points[i]).collect();
    let gt_transform = rigid_fit(&src, &dst)?;
    let overlap_proportion = (matches.len() as f64 / mm.min(nn) as f64).min(1.0);
    Ok(PairGroundTruth {
        id_m: f_m.id,
        id_n: f_n.id,
        matches,
        gt_transform,
        overlap_proportion,
        difficulty: cfg.difficulty(overlap_proportion),
    })
}

/// Whether `matches` advances forward through contour m and backward
/// through contour n without wrapping either contour more than once.
pub fn is_staircase(matches: &[(usize, usize)], m: usize, n: usize) -> bool {
    if matches.is_empty() || matches.iter().any(|&(i, j)| i >= m || j >= n) {
        return false;
    }
    let (mut span_m, mut span_n) = (0usize, 0usize);
    for s in matches.windows(2) {
        span_m += (s[1].0 + m - s[0].0) % m;
        span_n += (s[0].1 + n - s[1].1) % n;
    }
    span_m < m && span_n < n
}

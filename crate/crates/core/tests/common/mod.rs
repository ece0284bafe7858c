//! Oracles and planted fixtures shared by the integration tests.
#![allow(dead_code)]

use fragmenta::geometry::{Point2, RigidTransform2D};
use fragmenta::matching::{ransac_rigid, Correspondence, MatchConfig, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const EPS: f64 = 0.006;
/// Printed kernels, row-down / column-right; the center is `[1][1]`.
const K_ERODE: [[u8; 3]; 3] = [[0, 0, 1], [0, 0, 0], [1, 0, 0]];
const K_DILATE: [[u8; 3]; 3] = [[0, 0, 1], [0, 1, 0], [1, 0, 0]];

fn at(s: &[Vec<f64>], i: i64, j: i64) -> f64 {
    if i < 0 || j < 0 || i as usize >= s.len() || j as usize >= s[0].len() {
        0.0
    } else {
        s[i as usize][j as usize]
    }
}

/// Erosion straight from the kernel: a nonzero cell survives iff every
/// cell under a one of the kernel is nonzero.
pub fn erode_oracle(s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; s[0].len()]; s.len()];
    for i in 0..s.len() {
        for j in 0..s[0].len() {
            let mut ok = s[i][j] != 0.0;
            for (a, row) in K_ERODE.iter().enumerate() {
                for (b, &k) in row.iter().enumerate() {
                    if k == 1 && at(s, i as i64 + a as i64 - 1, j as i64 + b as i64 - 1) == 0.0 {
                        ok = false;
                    }
                }
            }
            out[i][j] = if ok { s[i][j] } else { 0.0 };
        }
    }
    out
}

pub fn dilate_oracle(s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; s[0].len()]; s.len()];
    for i in 0..s.len() {
        for j in 0..s[0].len() {
            let mut best = f64::NEG_INFINITY;
            for (a, row) in K_DILATE.iter().enumerate() {
                for (b, &k) in row.iter().enumerate() {
                    if k == 1 {
                        best = best.max(at(s, i as i64 + a as i64 - 1, j as i64 + b as i64 - 1));
                    }
                }
            }
            out[i][j] = best;
        }
    }
    out
}

pub fn to_rows(s: &SimilarityMatrix) -> Vec<Vec<f64>> {
    (0..s.rows).map(|i| (0..s.cols).map(|j| s.get(i, j)).collect()).collect()
}

pub struct Planted {
    pub s: SimilarityMatrix,
    pub stair: Vec<(usize, usize)>,
    pub noise: Vec<(usize, usize)>,
}

/// Sub-threshold background, one anti-diagonal staircase of length `len`
/// with an optional missing cell, and isolated above-threshold noise.
pub fn planted(rng: &mut ChaCha8Rng, rows: usize, cols: usize, len: usize, gap: Option<usize>, noise: usize) -> Planted {
    let mut s = SimilarityMatrix::zeros(rows, cols);
    for v in s.values.iter_mut() {
        *v = rng.random_range(0.0..EPS);
    }
    let i0 = rng.random_range(0..=rows - len);
    let j0 = rng.random_range(len - 1..cols);
    let stair: Vec<(usize, usize)> = (0..len).map(|k| (i0 + k, j0 - k)).collect();
    for (k, &(i, j)) in stair.iter().enumerate() {
        if Some(k) != gap {
            s.set(i, j, rng.random_range(0.05..1.0));
        }
    }
    let near = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1;
    let mut placed: Vec<(usize, usize)> = Vec::new();
    let mut tries = 0;
    while placed.len() < noise && tries < 10_000 {
        tries += 1;
        let c = (rng.random_range(0..rows), rng.random_range(0..cols));
        if stair.iter().chain(&placed).any(|&p| near(p, c)) {
            continue;
        }
        s.set(c.0, c.1, rng.random_range(EPS..1.0));
        placed.push(c);
    }
    Planted { s, stair, noise: placed }
}

/// Rotation and translation error of RANSAC on 50 noisy inliers of a
/// known transform plus 50 uniform outliers.
pub fn ransac_trial(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = RigidTransform2D::new(0.7, 12.5, -3.25);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let cn: Vec<Point2> = (0..100)
        .map(|_| Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
        .collect();
    let cm: Vec<Point2> = cn
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if k < 50 {
                let q = truth.apply(p);
                Point2::new(q.x + noise.sample(&mut rng), q.y + noise.sample(&mut rng))
            } else {
                Point2::new(rng.random_range(-100.0..250.0), rng.random_range(-100.0..250.0))
            }
        })
        .collect();
    let corr: Vec<Correspondence> = (0..100).map(|k| Correspondence { i: k, j: k, score: 1.0 }).collect();
    let (est, _) = ransac_rigid(&corr, &cm, &cn, &MatchConfig::default(), &mut rng).unwrap();
    let re = fragmenta::metrics::rotation_error(&est, &truth);
    let te = Point2::new(est.tx - truth.tx, est.ty - truth.ty).norm();
    (re, te)
}


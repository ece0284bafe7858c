//! Pair matching: dense similarity, threshold, staircase morphology,
//! correspondence extraction and RANSAC rigid registration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rigid_fit, Point2, RigidTransform2D};
use crate::nn::{layers, Graph, Tensor};

/// Inference parameters of the matching chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Entries below `eps` are discarded.
    pub eps: f64,
    pub ransac_iters: usize,
    pub inlier_tol_px: f64,
    /// RANSAC stops once this fraction of correspondences are inliers.
    pub early_exit_ratio: f64,
    /// Staircases run along anti-diagonals (opposite contour traversal).
    pub anti_diagonal: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            eps: 0.006,
            ransac_iters: 500,
            inlier_tol_px: 5.0,
            early_exit_ratio: 0.8,
            anti_diagonal: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !(self.inlier_tol_px > 0.0) || self.ransac_iters == 0 {
            return Err(Error::Config("matching: need eps >= 0, inlier_tol_px > 0, ransac_iters > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.early_exit_ratio) {
            return Err(Error::Config("matching: early_exit_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The two off-center ones of the structuring kernels.
    fn offsets(&self) -> [(i64, i64); 2] {
        if self.anti_diagonal {
            [(-1, 1), (1, -1)]
        } else {
            [(-1, -1), (1, 1)]
        }
    }
}

/// Row-major `rows x cols` similarity between contours of fragments `m` and `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            values: t.data().to_vec(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Zero outside the matrix.
    pub fn get_signed(&self, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i >= self.rows as i64 || j >= self.cols as i64 {
            0.0
        } else {
            self.values[i as usize * self.cols + j as usize]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    fn map_cells(&self, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[i * self.cols + j] = f(i, j);
            }
        }
        out
    }
}

/// Zeroes entries below `eps`; entries equal to `eps` survive.
pub fn threshold_filter(s: &SimilarityMatrix, eps: f64) -> SimilarityMatrix {
    let mut out = s.clone();
    out.values.iter_mut().filter(|v| **v < eps).for_each(|v| *v = 0.0);
    out
}

/// Keeps a nonzero entry iff both kernel neighbors are nonzero.
pub fn erode_antidiagonal(s: &SimilarityMatrix, cfg: &MatchConfig) -> SimilarityMatrix {
    let offs = cfg.offsets();
    s.map_cells(|i, j| {
        let v = s.get(i, j);
        let keep = v != 0.0
            && offs
                .iter()
                .all(|&(di, dj)| s.get_signed(i as i64 + di, j as i64 + dj) != 0.0);
        if keep {
            v
        } else {
            0.0
        }
    })
}

/// Grayscale dilation: maximum over the entry and its kernel neighbors.
pub fn dilate_antidiagonal(s: &SimilarityMatrix, cfg: &MatchConfig) -> SimilarityMatrix {
    let offs = cfg.offsets();
    s.map_cells(|i, j| {
        offs.iter()
            .map(|&(di, dj)| s.get_signed(i as i64 + di, j as i64 + dj))
            .fold(s.get(i, j), f64::max)
    })
}

/// Index into contour m, index into contour n, similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

/// Nonzero entries by descending score, ties by `(i, j)`.
pub fn extract_correspondences(s: &SimilarityMatrix) -> Vec<Correspondence> {
    let mut out: Vec<Correspondence> = (0..s.rows)
        .flat_map(|i| (0..s.cols).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let score = s.get(i, j);
            (score != 0.0).then_some(Correspondence { i, j, score })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    out
}

fn inliers_of(
    t: &RigidTransform2D,
    corr: &[Correspondence],
    cm: &[Point2],
    cn: &[Point2],
    tol: f64,
) -> Vec<usize> {
    (0..corr.len())
        .filter(|&k| t.apply(cn[corr[k].j]).dist(cm[corr[k].i]) < tol)
        .collect()
}

/// Rigid transform mapping contour-n points onto contour-m points from
/// two-point minimal samples; the best model is refit on its inliers.
pub fn ransac_rigid(
    corr: &[Correspondence],
    contour_m: &[Point2],
    contour_n: &[Point2],
    cfg: &MatchConfig,
    rng: &mut impl Rng,
) -> Result<(RigidTransform2D, Vec<usize>)> {
    if corr.len() < 2 {
        return Err(Error::NoModel(format!("{} correspondences, need 2", corr.len())));
    }
    if corr.iter().any(|c| c.i >= contour_m.len() || c.j >= contour_n.len()) {
        return Err(Error::InvalidInput("correspondence index outside its contour".into()));
    }
    let tol = cfg.inlier_tol_px;
    let mut best: Option<(RigidTransform2D, Vec<usize>)> = None;
    for _ in 0..cfg.ransac_iters {
        let a = rng.random_range(0..corr.len());
        let mut b = rng.random_range(0..corr.len() - 1);
        if b >= a {
            b += 1;
        }
        let src = [contour_n[corr[a].j], contour_n[corr[b].j]];
        let dst = [contour_m[corr[a].i], contour_m[corr[b].i]];
        let Ok(t) = rigid_fit(&src, &dst) else { continue };
        let inl = inliers_of(&t, corr, contour_m, contour_n, tol);
        if best.as_ref().is_none_or(|(_, bi)| inl.len() > bi.len()) {
            let done = inl.len() as f64 > cfg.early_exit_ratio * corr.len() as f64;
            best = Some((t, inl));
            if done {
                break;
            }
        }
    }
    let (t, inl) = best.ok_or_else(|| Error::NoModel("every minimal sample was degenerate".into()))?;
    let src: Vec<Point2> = inl.iter().map(|&k| contour_n[corr[k].j]).collect();
    let dst: Vec<Point2> = inl.iter().map(|&k| contour_m[corr[k].i]).collect();
    if let Ok(refined) = rigid_fit(&src, &dst) {
        let refined_inl = inliers_of(&refined, corr, contour_m, contour_n, tol);
        if refined_inl.len() >= inl.len() {
            return Ok((refined, refined_inl));
        }
    }
    Ok((t, inl))
}

/// Output of [`match_pair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub correspondences: Vec<Correspondence>,
    pub transform: RigidTransform2D,
    pub inlier_count: usize,
    /// Sum of similarity left after morphology.
    pub match_score: f64,
}

/// Dual-softmax similarity of two fused feature matrices.
pub fn similarity(f_m: &Tensor, f_n: &Tensor) -> SimilarityMatrix {
    let mut g = Graph::new();
    let a = g.constant(f_m.clone());
    let b = g.constant(f_n.clone());
    let logits = layers::similarity_logits(&mut g, a, b);
    let s = g.dual_softmax(logits);
    SimilarityMatrix::from_tensor(g.value(s))
}

/// Threshold, erode once, dilate once.
pub fn morphology_chain(s: &SimilarityMatrix, cfg: &MatchConfig) -> SimilarityMatrix {
    dilate_antidiagonal(&erode_antidiagonal(&threshold_filter(s, cfg.eps), cfg), cfg)
}

/// Full inference chain for one pair: features to rigid transform.
pub fn match_pair(
    f_m: &Tensor,
    f_n: &Tensor,
    contour_m: &[Point2],
    contour_n: &[Point2],
    cfg: &MatchConfig,
    rng: &mut impl Rng,
) -> Result<MatchResult> {
    if f_m.rows() != contour_m.len() || f_n.rows() != contour_n.len() {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} / {}x{} for contours of {} / {} points",
            f_m.rows(),
            f_m.cols(),
            f_n.rows(),
            f_n.cols(),
            contour_m.len(),
            contour_n.len()
        )));
    }
    let s = morphology_chain(&similarity(f_m, f_n), cfg);
    let correspondences = extract_correspondences(&s);
    let (transform, inliers) = ransac_rigid(&correspondences, contour_m, contour_n, cfg, rng)?;
    Ok(MatchResult {
        match_score: correspondences.iter().map(|c| c.score).sum(),
        inlier_count: inliers.len(),
        transform,
        correspondences,
    })
}

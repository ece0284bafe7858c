//! Recursive tearing of complete images into irregular fragments with full
//! pairwise ground truth.

mod curve;
mod cut;
mod generate;
mod pairs;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrderedContour, Point2, RigidTransform2D};
use crate::raster::Mask;

pub use curve::{
    build_cut_polyline, fourier_curve, sample_chord, sample_cut_endpoints, sample_fourier_params,
    sample_interior_waypoints, FourierParams, ENDPOINT_REJECTION_LIMIT,
};
pub use cut::{boundary_contacts, cut_fragment, CUT_EXTENSION_PX};
pub use generate::{generate, GenerationOutput};
pub use pairs::{derive_pair_gt, is_staircase, MATCH_TOL_PX};

/// Tearing parameters. Defaults are the published generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Cut iterations per image.
    pub t_max: usize,
    /// Minimum smaller-arc ratio of the endpoint chord on the circumcircle.
    pub tau: f64,
    /// Maximum interior waypoints per cut.
    pub n_max: usize,
    /// Minimum waypoint distance to the fragment contour, in pixels.
    pub d_min: f64,
    /// Highest Fourier term index (terms `0..=n_fourier`).
    pub n_fourier: usize,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    /// Probability that a cut span is irregular.
    pub rho: f64,
    pub h_min: usize,
    pub w_min: usize,
    /// Overlap proportion at or above which a pair is Low difficulty.
    pub low_overlap: f64,
    /// Overlap proportion below which a pair is High difficulty.
    pub high_overlap: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            t_max: 40,
            tau: 0.9,
            n_max: 3,
            d_min: 100.0,
            n_fourier: 20,
            s1: 0.25,
            s2: 0.0067,
            s3: 1.5,
            s4: 0.3,
            rho: 0.5,
            h_min: 150,
            w_min: 150,
            low_overlap: 0.30,
            high_overlap: 0.15,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.h_min == 0 || self.w_min == 0 || !(self.d_min > 0.0) {
            return bad("h_min, w_min and d_min must be positive");
        }
        let scales = [self.s1, self.s2, self.s3, self.s4];
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("s1..s4 must be positive");
        }
        if !(0.0 <= self.high_overlap && self.high_overlap <= self.low_overlap && self.low_overlap <= 1.0) {
            return bad("need 0 <= high_overlap <= low_overlap <= 1");
        }
        Ok(())
    }

    pub fn difficulty(&self, overlap: f64) -> Difficulty {
        if overlap >= self.low_overlap {
            Difficulty::Low
        } else if overlap < self.high_overlap {
            Difficulty::High
        } else {
            Difficulty::Medium
        }
    }
}

/// One fragment: pixels and mask are cropped to its bounding box, whose
/// top-left corner sits at `offset` in the source image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentRecord {
    pub id: usize,
    /// Out-of-mask pixels are black.
    pub pixels: RgbImage,
    pub mask: Mask,
    pub offset: Point2,
    /// Fragment-local frame.
    pub contour: OrderedContour,
    pub source_image_id: usize,
}

impl FragmentRecord {
    /// The whole image as one uncut fragment.
    pub fn whole(image: &RgbImage, source_image_id: usize) -> Result<Self> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mask = Mask::filled(w, h);
        let contour = crate::codec::trace_contour(&mask)?;
        Ok(Self {
            id: 0,
            pixels: image.clone(),
            mask,
            offset: Point2::new(0.0, 0.0),
            contour,
            source_image_id,
        })
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn area(&self) -> usize {
        self.mask.count()
    }

    /// Contour in the source image frame.
    pub fn global_contour(&self) -> Vec<Point2> {
        self.contour.points.iter().map(|&p| p + self.offset).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    High,
    Medium,
    Low,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::High, Difficulty::Medium, Difficulty::Low];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::High => "High",
            Difficulty::Medium => "Medium",
            Difficulty::Low => "Low",
        }
    }
}

/// Ground truth of one adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGroundTruth {
    pub id_m: usize,
    pub id_n: usize,
    /// `(index into contour m, index into contour n)` in staircase order.
    pub matches: Vec<(usize, usize)>,
    /// Maps fragment-n local coordinates onto fragment-m local coordinates.
    pub gt_transform: RigidTransform2D,
    pub overlap_proportion: f64,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Straight,
    Irregular,
}

/// Open cut path; `segment_kinds[k]` describes the span between waypoints
/// `k` and `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPolyline {
    pub points: Vec<Point2>,
    pub segment_kinds: Vec<SegmentKind>,
}

//! Per-contour-point patch encodings.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrderedContour;
use crate::nn::Tensor;
use crate::raster::Mask;

/// Binary contour encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ContourMode {
    /// 1 where a contour point falls in the cell.
    #[default]
    EdgeOnly,
    /// The mask value of the cell.
    InsideOutside,
    /// Edge channel stacked on the mask channel.
    EdgePlusInsideOutside,
}

impl ContourMode {
    pub fn channels(self) -> usize {
        match self {
            ContourMode::EdgeOnly | ContourMode::InsideOutside => 1,
            ContourMode::EdgePlusInsideOutside => 2,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            ContourMode::EdgeOnly => 0,
            ContourMode::InsideOutside => 1,
            ContourMode::EdgePlusInsideOutside => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ContourMode::EdgeOnly),
            1 => Some(ContourMode::InsideOutside),
            2 => Some(ContourMode::EdgePlusInsideOutside),
            _ => None,
        }
    }
}

/// `M x P x P x C` binary patches, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourPatchSet {
    pub patches: Tensor,
    pub size: usize,
    pub mode: ContourMode,
}

impl ContourPatchSet {
    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell `(row, col)` of channel `ch` of patch `j`.
    pub fn cell(&self, j: usize, row: usize, col: usize, ch: usize) -> f64 {
        let c = self.mode.channels();
        self.patches.data()[((j * self.size + row) * self.size + col) * c + ch]
    }
}

/// `M x P x P x 3` RGB patches in `[0, 1]`, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturePatchSet {
    pub patches: Tensor,
    pub size: usize,
}

impl TexturePatchSet {
    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "patch size must be odd and at least 3, got {size}"
        )));
    }
    Ok(())
}

pub fn encode_contour_patches(
    contour: &OrderedContour,
    mask: &Mask,
    size: usize,
    mode: ContourMode,
) -> Result<ContourPatchSet> {
    check_size(size)?;
    let (w, h) = (mask.width(), mask.height());
    let mut edge = vec![false; w * h];
    for p in &contour.points {
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            edge[y as usize * w + x as usize] = true;
        }
    }
    let edge_at = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && edge[y as usize * w + x as usize]
    };
    let ch = mode.channels();
    let half = (size / 2) as i64;
    let m = contour.len();
    let mut data = vec![0.0; m * size * size * ch];
    for (j, p) in contour.points.iter().enumerate() {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for r in 0..size {
            for c in 0..size {
                let (x, y) = (cx + c as i64 - half, cy + r as i64 - half);
                let base = ((j * size + r) * size + c) * ch;
                let e = if edge_at(x, y) { 1.0 } else { 0.0 };
                let inside = if mask.get_signed(x, y) { 1.0 } else { 0.0 };
                match mode {
                    ContourMode::EdgeOnly => data[base] = e,
                    ContourMode::InsideOutside => data[base] = inside,
                    ContourMode::EdgePlusInsideOutside => {
                        data[base] = e;
                        data[base + 1] = inside;
                    }
                }
            }
        }
    }
    Ok(ContourPatchSet {
        patches: Tensor::from_vec(&[m, size, size, ch], data)?,
        size,
        mode,
    })
}

/// RGB crops centered on each contour point; pixels outside the mask or the
/// raster are zero.
pub fn crop_texture_patches(
    image: &RgbImage,
    mask: &Mask,
    contour: &OrderedContour,
    size: usize,
) -> Result<TexturePatchSet> {
    check_size(size)?;
    if image.width() as usize != mask.width() || image.height() as usize != mask.height() {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    let half = (size / 2) as i64;
    let m = contour.len();
    let mut data = vec![0.0; m * size * size * 3];
    for (j, p) in contour.points.iter().enumerate() {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for r in 0..size {
            for c in 0..size {
                let (x, y) = (cx + c as i64 - half, cy + r as i64 - half);
                if !mask.get_signed(x, y) {
                    continue;
                }
                let px = image.get_pixel(x as u32, y as u32);
                let base = ((j * size + r) * size + c) * 3;
                for k in 0..3 {
                    data[base + k] = px[k] as f64 / 255.0;
                }
            }
        }
    }
    Ok(TexturePatchSet {
        patches: Tensor::from_vec(&[m, size, size, 3], data)?,
        size,
    })
}

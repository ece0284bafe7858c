//! The tearing loop over one source image.

use std::collections::BTreeSet;

use image::RgbImage;
use rand::Rng;

use super::curve::{build_cut_polyline, sample_cut_endpoints, sample_interior_waypoints};
use super::cut::{boundary_contacts, cut_fragment};
use super::pairs::derive_pair_gt;
use super::{FragmentRecord, GeneratorConfig, PairGroundTruth};
use crate::error::{Error, Result};
use crate::raster::N8;

/// Attempts per iteration before the iteration is skipped.
const ATTEMPTS_PER_ITERATION: usize = 10;

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    /// `fragments[k].id == k`.
    pub fragments: Vec<FragmentRecord>,
    /// Sorted by `(id_m, id_n)` with `id_m < id_n`.
    pub pairs: Vec<PairGroundTruth>,
}

fn try_cut(
    f: &FragmentRecord,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<(FragmentRecord, FragmentRecord)> {
    let (p_start, p_end) = sample_cut_endpoints(f, cfg, rng)?;
    let m = rng.random_range(0..=cfg.n_max);
    let mut waypoints = vec![p_start];
    waypoints.extend(sample_interior_waypoints(f, m, (p_start, p_end), cfg, rng));
    waypoints.push(p_end);
    let (w, h) = (f.width() as f64, f.height() as f64);
    let cut = build_cut_polyline(&waypoints, w, h, cfg, rng)?;
    let (a, b, _) = cut_fragment(f, &cut)?;
    let big_enough = |c: &FragmentRecord| c.width() > cfg.w_min && c.height() > cfg.h_min;
    if !(big_enough(&a) && big_enough(&b)) {
        return Err(Error::InvalidCut("a side is below the minimum fragment size".into()));
    }
    Ok((a, b))
}

/// Tears `image` into fragments and derives the ground truth of every pair
/// of fragments that touch in the final partition.
pub fn generate(
    image: &RgbImage,
    source_image_id: usize,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<GenerationOutput> {
    cfg.validate()?;
    let mut fragments = vec![FragmentRecord::whole(image, source_image_id)?];
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 2 * cfg.w_min || h < 2 * cfg.h_min {
        log::warn!("image {source_image_id} is {w}x{h}, too small to tear; kept whole");
        return Ok(GenerationOutput {
            fragments,
            pairs: Vec::new(),
        });
    }
    for t in 0..cfg.t_max {
        let mut done = false;
        for _ in 0..ATTEMPTS_PER_ITERATION {
            let k = rng.random_range(0..fragments.len());
            match try_cut(&fragments[k], cfg, rng) {
                Ok((a, b)) => {
                    fragments[k] = a;
                    fragments.push(b);
                    done = true;
                    break;
                }
                Err(e) => log::trace!("image {source_image_id} iteration {t}: {e}"),
            }
        }
        if !done {
            log::debug!("image {source_image_id} iteration {t} skipped");
        }
    }
    for (k, f) in fragments.iter_mut().enumerate() {
        f.id = k;
    }
    let pairs = adjacent_pairs(&fragments, w, h, cfg);
    Ok(GenerationOutput { fragments, pairs })
}

fn adjacent_pairs(fragments: &[FragmentRecord], w: usize, h: usize, cfg: &GeneratorConfig) -> Vec<PairGroundTruth> {
    // label 0 is background, fragment k has label k + 1
    let mut labels = vec![0usize; w * h];
    for f in fragments {
        let (ox, oy) = (f.offset.x as usize, f.offset.y as usize);
        for y in 0..f.height() {
            for x in 0..f.width() {
                if f.mask.get(x, y) {
                    labels[(y + oy) * w + x + ox] = f.id + 1;
                }
            }
        }
    }
    let mut adjacent = BTreeSet::new();
    for f in fragments {
        for p in f.global_contour() {
            let (x, y) = (p.x as i64, p.y as i64);
            for (dx, dy) in N8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let l = labels[ny as usize * w + nx as usize];
                if l != 0 && l - 1 != f.id {
                    adjacent.insert((f.id.min(l - 1), f.id.max(l - 1)));
                }
            }
        }
    }
    let mut pairs = Vec::new();
    for (a, b) in adjacent {
        let raw = boundary_contacts(&fragments[a], &fragments[b]);
        match derive_pair_gt(&fragments[a], &fragments[b], &raw, cfg) {
            Ok(p) => pairs.push(p),
            Err(e) => log::warn!("pair ({a}, {b}) discarded: {e}"),
        }
    }
    pairs
}

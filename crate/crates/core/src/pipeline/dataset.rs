//! On-disk dataset: manifest, fragment rasters, and split bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage, RgbaImage};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrderedContour, Point2, RigidTransform2D};
use crate::raster::Mask;
use crate::tearing::{Difficulty, FragmentRecord, GeneratorConfig, PairGroundTruth};

/// Major version of every JSON artifact written by the pipeline.
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAGMENT_DIR: &str = "fragments";
/// Train/val/test proportions by source image.
pub const SPLIT_RATIO: [usize; 3] = [5, 1, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

/// Image counts per split by largest remainder over [`SPLIT_RATIO`]; ties
/// go to the earlier split.
pub fn split_counts_for(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_RATIO.iter().sum();
    let mut counts = SPLIT_RATIO.map(|r| n * r / total);
    let mut rest: Vec<usize> = (0..3).collect();
    rest.sort_by_key(|&k| (std::cmp::Reverse(n * SPLIT_RATIO[k] % total), k));
    let missing = n - counts.iter().sum::<usize>();
    for &k in rest.iter().take(missing) {
        counts[k] += 1;
    }
    counts
}

/// Assigns each of `n` images to a split: a seeded shuffle, then the
/// first block is train, the next val, the rest test.
pub fn assign_splits(n: usize, rng: &mut impl rand::Rng) -> Vec<Split> {
    let [train, val, _] = split_counts_for(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![Split::Test; n];
    for (rank, &img) in order.iter().enumerate() {
        out[img] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: usize,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentEntry {
    pub id: usize,
    pub source_image: usize,
    /// Path of the RGBA raster relative to the dataset root.
    pub file: String,
    pub width: usize,
    pub height: usize,
    /// Top-left corner in the source image.
    pub offset: [f64; 2],
    pub area: usize,
    /// Local contour as `[x0, y0, x1, y1, ...]`.
    pub contour: Vec<f64>,
    pub split: Split,
}

impl FragmentEntry {
    pub fn contour(&self) -> OrderedContour {
        OrderedContour::closed(self.contour.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id_m: usize,
    pub id_n: usize,
    /// `[index into contour m, index into contour n]`.
    pub matches: Vec<[usize; 2]>,
    /// Maps fragment-n local coordinates onto fragment-m local coordinates.
    pub transform: RigidTransform2D,
    pub overlap: f64,
    pub difficulty: Difficulty,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub corpus_id: String,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub images: Vec<ImageEntry>,
    pub fragments: Vec<FragmentEntry>,
    pub pairs: Vec<PairEntry>,
}

/// Fragment and pair totals of one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub images: usize,
    pub fragments: usize,
    pub pairs: usize,
    pub high: usize,
    pub medium: usize,
    pub low: usize,
}

impl DatasetManifest {
    /// Referential integrity: dense ids, pairs between existing fragments
    /// of one image, and every split following the source image.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("manifest: {m}")));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format version {}", self.format_version));
        }
        for (k, im) in self.images.iter().enumerate() {
            if im.id != k {
                return bad(format!("image {k} carries id {}", im.id));
            }
        }
        for (k, f) in self.fragments.iter().enumerate() {
            if f.id != k {
                return bad(format!("fragment {k} carries id {}", f.id));
            }
            let Some(im) = self.images.get(f.source_image) else {
                return bad(format!("fragment {k} references missing image {}", f.source_image));
            };
            if f.split != im.split {
                return bad(format!("fragment {k} is {} but its image is {}", f.split, im.split));
            }
            if f.contour.len() % 2 != 0 || f.contour.is_empty() {
                return bad(format!("fragment {k} has a malformed contour"));
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            let (Some(a), Some(b)) = (self.fragments.get(p.id_m), self.fragments.get(p.id_n)) else {
                return bad(format!("pair ({}, {}) references a missing fragment", p.id_m, p.id_n));
            };
            if p.id_m == p.id_n || !seen.insert((p.id_m.min(p.id_n), p.id_m.max(p.id_n))) {
                return bad(format!("pair ({}, {}) is a self pair or duplicate", p.id_m, p.id_n));
            }
            if a.source_image != b.source_image || p.split != a.split {
                return bad(format!("pair ({}, {}) spans images or splits", p.id_m, p.id_n));
            }
            let (lm, ln) = (a.contour.len() / 2, b.contour.len() / 2);
            if p.matches.iter().any(|&[i, j]| i >= lm || j >= ln) {
                return bad(format!("pair ({}, {}) matches outside the contours", p.id_m, p.id_n));
            }
        }
        Ok(())
    }

    pub fn fragments_in(&self, split: Option<Split>) -> Vec<&FragmentEntry> {
        self.fragments.iter().filter(|f| split.is_none_or(|s| f.split == s)).collect()
    }

    pub fn pairs_in(&self, split: Option<Split>) -> Vec<&PairEntry> {
        self.pairs.iter().filter(|p| split.is_none_or(|s| p.split == s)).collect()
    }

    pub fn counts(&self) -> BTreeMap<Split, SplitCounts> {
        let mut out: BTreeMap<Split, SplitCounts> = Split::ALL.iter().map(|&s| (s, SplitCounts::default())).collect();
        for im in &self.images {
            out.get_mut(&im.split).unwrap().images += 1;
        }
        for f in &self.fragments {
            out.get_mut(&f.split).unwrap().fragments += 1;
        }
        for p in &self.pairs {
            let c = out.get_mut(&p.split).unwrap();
            c.pairs += 1;
            match p.difficulty {
                Difficulty::High => c.high += 1,
                Difficulty::Medium => c.medium += 1,
                Difficulty::Low => c.low += 1,
            }
        }
        out
    }
}

impl PairEntry {
    pub fn from_ground_truth(gt: &PairGroundTruth, base: usize, split: Split) -> Self {
        Self {
            id_m: gt.id_m + base,
            id_n: gt.id_n + base,
            matches: gt.matches.iter().map(|&(i, j)| [i, j]).collect(),
            transform: gt.gt_transform,
            overlap: gt.overlap_proportion,
            difficulty: gt.difficulty,
            split,
        }
    }
}

/// RGBA raster whose alpha channel is the mask.
pub fn fragment_rgba(f: &FragmentRecord) -> RgbaImage {
    RgbaImage::from_fn(f.width() as u32, f.height() as u32, |x, y| {
        let Rgb([r, g, b]) = *f.pixels.get_pixel(x, y);
        let a = if f.mask.get(x as usize, y as usize) { 255 } else { 0 };
        image::Rgba([r, g, b, a])
    })
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// A dataset directory with its validated manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Data(format!("no dataset manifest at {}", path.display())));
        }
        let manifest: DatasetManifest = crate::fsio::read_json(&path)?;
        manifest.validate()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Reads one fragment back; the raster must agree with its entry.
    pub fn load_fragment(&self, id: usize) -> Result<FragmentRecord> {
        let e = self
            .manifest
            .fragments
            .get(id)
            .ok_or_else(|| Error::Data(format!("no fragment {id}")))?;
        let path = self.root.join(&e.file);
        let rgba = image::open(&path)
            .map_err(|err| Error::format(&path, err.to_string()))?
            .to_rgba8();
        if (rgba.width() as usize, rgba.height() as usize) != (e.width, e.height) {
            return Err(Error::format(&path, "raster size disagrees with the manifest"));
        }
        let mask = Mask::from_fn(e.width, e.height, |x, y| rgba.get_pixel(x as u32, y as u32)[3] >= 128);
        if mask.count() != e.area {
            return Err(Error::format(&path, "mask area disagrees with the manifest"));
        }
        let pixels = RgbImage::from_fn(e.width as u32, e.height as u32, |x, y| {
            let p = rgba.get_pixel(x, y);
            if p[3] >= 128 {
                Rgb([p[0], p[1], p[2]])
            } else {
                Rgb([0, 0, 0])
            }
        });
        Ok(FragmentRecord {
            id,
            pixels,
            mask,
            offset: Point2::new(e.offset[0], e.offset[1]),
            contour: e.contour(),
            source_image_id: e.source_image,
        })
    }

    pub fn load_fragments(&self, split: Option<Split>) -> Result<Vec<FragmentRecord>> {
        self.manifest
            .fragments_in(split)
            .iter()
            .map(|e| self.load_fragment(e.id))
            .collect()
    }
}

//! Matching backbone and searching head with their parameter layouts.

use std::rc::Rc;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{self, Affine, AttentionWeights};
use super::params::{Binding, ParamStore};
use super::tensor::Tensor;
use crate::codec::{
    build_ring_graph, crop_texture_patches, encode_contour_patches, kept_rows, ContourMode, LengthPolicy,
};
use crate::error::{Error, Result};
use crate::geometry::OrderedContour;
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub d_search: usize,
    pub gcn_layers: usize,
    pub ring_k: usize,
    pub attn_layers: usize,
    pub beta1: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub lr: f64,
    /// Cosine annealing ends at `lr * lr_floor_ratio`.
    pub lr_floor_ratio: f64,
    pub batch_match: usize,
    pub batch_search: usize,
    pub contour_mode: ContourMode,
    pub patch_size: usize,
    pub contour_conv_width: usize,
    pub texture_conv_widths: [usize; 2],
    pub l_max_match: usize,
    pub l_max_search: usize,
    pub search_length_policy: LengthPolicy,
    pub match_steps: usize,
    pub search_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: 64,
            d_search: 128,
            gcn_layers: 4,
            ring_k: 8,
            attn_layers: 2,
            beta1: 0.55,
            gamma: 8.0,
            temperature: 0.12,
            lr: 0.001,
            lr_floor_ratio: 0.01,
            batch_match: 20,
            batch_search: 175,
            contour_mode: ContourMode::EdgeOnly,
            patch_size: 7,
            contour_conv_width: 8,
            texture_conv_widths: [8, 8],
            l_max_match: crate::codec::L_MAX_MATCH,
            l_max_search: crate::codec::L_MAX_SEARCH,
            search_length_policy: LengthPolicy::Truncate,
            match_steps: 300,
            search_steps: 200,
        }
    }
}

impl ModelConfig {
    /// Depths used by the original full-scale network.
    pub fn paper_scale() -> Self {
        Self {
            gcn_layers: 14,
            attn_layers: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1 must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.lr >= 0.0) || !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return bad("learning rate must be non-negative with a floor ratio in [0, 1]");
        }
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return bad("patch_size must be odd and at least 3");
        }
        if [self.d_feat, self.d_search, self.ring_k, self.batch_match, self.batch_search]
            .contains(&0)
            || self.contour_conv_width == 0
            || self.texture_conv_widths.contains(&0)
            || self.l_max_match == 0
            || self.l_max_search == 0
        {
            return bad("widths, batch sizes, and lengths must be positive");
        }
        Ok(())
    }
}

/// Per-point model inputs of one fragment.
#[derive(Debug, Clone)]
pub struct FragmentInput {
    /// `(M * P * P) x C` binary contour patches.
    pub contour_patches: Tensor,
    /// `(M * P * P) x 3` texture patches.
    pub texture_patches: Tensor,
    pub m: usize,
    pub lists: Rc<Vec<Vec<usize>>>,
}

/// Encodes a fragment. Contours longer than `cfg.l_max_match` keep their
/// first `l_max_match` points.
pub fn prepare_input(
    pixels: &RgbImage,
    mask: &Mask,
    contour: &OrderedContour,
    cfg: &ModelConfig,
) -> Result<FragmentInput> {
    if contour.is_empty() {
        return Err(Error::InvalidInput("empty contour".into()));
    }
    let keep = kept_rows(contour.len(), cfg.l_max_match, LengthPolicy::ZeroPad);
    let contour = if keep.len() < contour.len() {
        OrderedContour::closed(keep.iter().map(|&i| contour.points[i]).collect())
    } else {
        contour.clone()
    };
    let p = cfg.patch_size;
    let cp = encode_contour_patches(&contour, mask, p, cfg.contour_mode)?;
    let tp = crop_texture_patches(pixels, mask, &contour, p)?;
    let m = contour.len();
    let c = cfg.contour_mode.channels();
    input_from_patches(cp.patches.reshaped(&[m * p * p, c])?, tp.patches.reshaped(&[m * p * p, 3])?, cfg)
}

/// Rebuilds an input from flattened `(M * P * P) x C` contour and
/// `(M * P * P) x 3` texture patches.
pub fn input_from_patches(contour_patches: Tensor, texture_patches: Tensor, cfg: &ModelConfig) -> Result<FragmentInput> {
    let pp = cfg.patch_size * cfg.patch_size;
    let rows = contour_patches.rows();
    if rows == 0
        || rows % pp != 0
        || texture_patches.rows() != rows
        || contour_patches.cols() != cfg.contour_mode.channels()
        || texture_patches.cols() != 3
    {
        return Err(Error::ShapeMismatch(format!(
            "patch tensors {:?} / {:?} for patch size {}",
            contour_patches.shape(),
            texture_patches.shape(),
            cfg.patch_size
        )));
    }
    let m = rows / pp;
    Ok(FragmentInput {
        contour_patches,
        texture_patches,
        m,
        lists: layers::ring_lists(&build_ring_graph(m, cfg.ring_k), None),
    })
}

/// Dense per-point features of one fragment.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingFeatures {
    pub f_c: Tensor,
    pub f_t: Tensor,
    pub f_f: Tensor,
    pub gate: Tensor,
}

/// Tape handles for one backbone pass.
#[derive(Debug, Clone, Copy)]
pub struct BackboneVars {
    pub f_c: Var,
    pub f_t: Var,
    pub f_f: Var,
    pub gate: Var,
}

fn affine(b: &Binding, name: &str) -> Affine {
    Affine {
        w: b.var(&format!("{name}.w")),
        b: b.var(&format!("{name}.b")),
    }
}

/// Init gain of the per-branch embedding layers. The pooled conv outputs are
/// small, and the 1/sqrt(D) logit scaling assumes roughly unit features.
const EMBED_GAIN: f64 = 8.0;

fn add_affine(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) {
    p.insert_glorot(&format!("{name}.w"), fan_in, fan_out, gain, rng);
    p.insert_zeros(&format!("{name}.b"), &[1, fan_out]);
}

/// Backbone, fusion gate, and their initial weights.
pub fn init_backbone(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    let d = cfg.d_feat;
    let c = cfg.contour_mode.channels();
    let [t1, t2] = cfg.texture_conv_widths;
    add_affine(&mut p, "backbone.contour.conv", 9 * c, cfg.contour_conv_width, 1.0, rng);
    add_affine(&mut p, "backbone.contour.fc", cfg.contour_conv_width, d, EMBED_GAIN, rng);
    add_affine(&mut p, "backbone.texture.conv1", 27, t1, 1.0, rng);
    add_affine(&mut p, "backbone.texture.conv2", 9 * t1, t2, 1.0, rng);
    add_affine(&mut p, "backbone.texture.fc", t2, d, EMBED_GAIN, rng);
    for branch in ["contour", "texture"] {
        for l in 0..cfg.gcn_layers {
            add_affine(&mut p, &format!("backbone.gcn.{branch}.{l}"), d, d, 0.5, rng);
        }
    }
    add_affine(&mut p, "backbone.fusion", 2 * d, d, 1.0, rng);
    p
}

/// Searching encoder and head.
pub fn init_search(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    let d = cfg.d_feat;
    for branch in ["contour", "texture"] {
        for l in 0..cfg.attn_layers {
            let base = format!("search.attn.{branch}.{l}");
            for w in ["wq", "wk", "wv"] {
                p.insert_glorot(&format!("{base}.{w}"), d, d, 1.0, rng);
            }
            add_affine(&mut p, &format!("{base}.ff1"), d, d, 0.5, rng);
            add_affine(&mut p, &format!("{base}.ff2"), d, d, 0.5, rng);
        }
    }
    add_affine(&mut p, "search.point", 2 * d, d, 1.0, rng);
    add_affine(&mut p, "search.out", d, cfg.d_search, 1.0, rng);
    p
}

/// Contour and texture branches through their GCN stacks, then fusion.
pub fn backbone_forward(g: &mut Graph, b: &Binding, input: &FragmentInput, cfg: &ModelConfig) -> BackboneVars {
    let p = cfg.patch_size;
    let cp = g.constant(input.contour_patches.clone());
    let tp = g.constant(input.texture_patches.clone());
    let mut f_c = layers::patch_embed_contour(
        g,
        cp,
        p,
        cfg.contour_mode.channels(),
        affine(b, "backbone.contour.conv"),
        affine(b, "backbone.contour.fc"),
    );
    let mut f_t = layers::patch_embed_texture(
        g,
        tp,
        p,
        affine(b, "backbone.texture.conv1"),
        affine(b, "backbone.texture.conv2"),
        affine(b, "backbone.texture.fc"),
    );
    for l in 0..cfg.gcn_layers {
        f_c = layers::gcn_layer(g, f_c, &input.lists, affine(b, &format!("backbone.gcn.contour.{l}")));
        f_t = layers::gcn_layer(g, f_t, &input.lists, affine(b, &format!("backbone.gcn.texture.{l}")));
    }
    let (f_f, gate) = layers::self_gated_fusion(g, f_t, f_c, affine(b, "backbone.fusion"));
    BackboneVars { f_c, f_t, f_f, gate }
}

/// Focal loss of one pair against its binary ground-truth matrix.
pub fn matching_loss(
    g: &mut Graph,
    b: &Binding,
    m: &FragmentInput,
    n: &FragmentInput,
    gt: &Rc<Tensor>,
    cfg: &ModelConfig,
) -> Var {
    let fm = backbone_forward(g, b, m, cfg);
    let fn_ = backbone_forward(g, b, n, cfg);
    let s = layers::similarity_logits(g, fm.f_f, fn_.f_f);
    let s = g.dual_softmax(s);
    g.focal_loss(s, Rc::clone(gt), cfg.beta1, cfg.gamma)
}

fn attention_weights(b: &Binding, base: &str) -> AttentionWeights {
    AttentionWeights {
        wq: b.var(&format!("{base}.wq")),
        wk: b.var(&format!("{base}.wk")),
        wv: b.var(&format!("{base}.wv")),
        ff1: affine(b, &format!("{base}.ff1")),
        ff2: affine(b, &format!("{base}.ff2")),
    }
}

/// Rows of the backbone output that feed the searching module.
pub fn search_rows(m: usize, cfg: &ModelConfig) -> Rc<Vec<usize>> {
    Rc::new(kept_rows(m, cfg.l_max_search, cfg.search_length_policy))
}

/// `1 x d_search` descriptor from (constant) backbone features.
pub fn search_forward(g: &mut Graph, b: &Binding, f_c: Var, f_t: Var, cfg: &ModelConfig) -> Result<Var> {
    let m = g.value(f_c).rows();
    let rows = search_rows(m, cfg);
    let mut hc = g.gather_rows(f_c, Rc::clone(&rows));
    let mut ht = g.gather_rows(f_t, rows.clone());
    let mask = Rc::new(vec![1.0; rows.len()]);
    for l in 0..cfg.attn_layers {
        hc = layers::linear_attention_layer(g, hc, &mask, &attention_weights(b, &format!("search.attn.contour.{l}")));
        ht = layers::linear_attention_layer(g, ht, &mask, &attention_weights(b, &format!("search.attn.texture.{l}")));
    }
    layers::search_head(g, hc, ht, &mask, affine(b, "search.point"), affine(b, "search.out"))
}

/// Trained parameters of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: ParamStore,
    pub search: ParamStore,
}

impl Model {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let backbone = init_backbone(&cfg, rng);
        let search = init_search(&cfg, rng);
        Self { cfg, backbone, search }
    }

    pub fn matching_features(&self, input: &FragmentInput) -> MatchingFeatures {
        let mut g = Graph::new();
        let b = self.backbone.bind(&mut g, false);
        let v = backbone_forward(&mut g, &b, input, &self.cfg);
        MatchingFeatures {
            f_c: g.value(v.f_c).clone(),
            f_t: g.value(v.f_t).clone(),
            f_f: g.value(v.f_f).clone(),
            gate: g.value(v.gate).clone(),
        }
    }

    pub fn search_embedding(&self, features: &MatchingFeatures) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.search.bind(&mut g, false);
        let fc = g.constant(features.f_c.clone());
        let ft = g.constant(features.f_t.clone());
        let v = search_forward(&mut g, &b, fc, ft, &self.cfg)?;
        Ok(g.value(v).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::trace_contour;
    use rand::SeedableRng;

    fn toy_fragment(seed: u64) -> (RgbImage, Mask, OrderedContour) {
        let mask = Mask::from_fn(24, 20, |x, y| {
            let dx = x as f64 - 11.0;
            let dy = y as f64 - 9.0;
            dx * dx / 81.0 + dy * dy / 49.0 <= 1.0
        });
        let img = RgbImage::from_fn(24, 20, |x, y| {
            image::Rgb([(x * 9 + seed as u32) as u8, (y * 11) as u8, ((x * y) % 255) as u8])
        });
        let c = trace_contour(&mask).unwrap();
        (img, mask, c)
    }

    #[test]
    fn shapes_and_gate_range() {
        let cfg = ModelConfig {
            d_feat: 8,
            d_search: 16,
            gcn_layers: 2,
            attn_layers: 1,
            ..ModelConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(cfg.clone(), &mut rng);
        let (img, mask, c) = toy_fragment(0);
        let input = prepare_input(&img, &mask, &c, &cfg).unwrap();
        let f = model.matching_features(&input);
        assert_eq!(f.f_f.shape(), &[c.len(), 8]);
        assert!(f.gate.data().iter().all(|&w| w > 0.0 && w < 1.0));
        let v = model.search_embedding(&f).unwrap();
        assert_eq!(v.len(), 16);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn defaults_and_paper_scale() {
        let d = ModelConfig::default();
        assert_eq!((d.d_feat, d.d_search, d.ring_k), (64, 128, 8));
        assert_eq!((d.beta1, d.gamma, d.temperature, d.lr), (0.55, 8.0, 0.12, 0.001));
        assert_eq!((d.batch_match, d.batch_search), (20, 175));
        assert_eq!((d.l_max_match, d.l_max_search), (2900, 1408));
        let p = ModelConfig::paper_scale();
        assert_eq!((p.gcn_layers, p.attn_layers), (14, 5));
        assert!(d.validate().is_ok());
        let bad = ModelConfig {
            beta1: 1.0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

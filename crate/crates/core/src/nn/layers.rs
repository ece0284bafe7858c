//! Differentiable building blocks composed on a [`Graph`].

use std::rc::Rc;

use super::graph::{Graph, Var};
use crate::codec::RingGraph;
use crate::error::{Error, Result};

/// Negative slope of every leaky rectifier in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Weights of one affine map `x · w + b`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: Var,
    pub b: Var,
}

impl Affine {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.matmul(x, self.w);
        g.add_row_bias(y, self.b)
    }
}

/// 3x3 same-size convolution over `p x p` patches stored as rows of
/// `(patch, row, col)` with channels as columns.
pub fn conv3x3(g: &mut Graph, x: Var, p: usize, channels: usize, k: Affine) -> Var {
    let cols = g.im2col3(x, p, channels);
    k.apply(g, cols)
}

/// Contour patch embedding: one convolution, average pooling, affine map.
pub fn patch_embed_contour(g: &mut Graph, patches: Var, p: usize, channels: usize, conv: Affine, fc: Affine) -> Var {
    let h = conv3x3(g, patches, p, channels, conv);
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let pooled = g.group_mean_rows(h, p * p);
    fc.apply(g, pooled)
}

/// Texture patch embedding: two convolutions, average pooling, affine map.
pub fn patch_embed_texture(g: &mut Graph, patches: Var, p: usize, conv1: Affine, conv2: Affine, fc: Affine) -> Var {
    let h = conv3x3(g, patches, p, 3, conv1);
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let c1 = g.value(conv1.w).cols();
    let h = conv3x3(g, h, p, c1, conv2);
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let pooled = g.group_mean_rows(h, p * p);
    fc.apply(g, pooled)
}

/// Closed ring neighbourhoods restricted to valid nodes. Invalid nodes get
/// an empty list, so their aggregate is zero.
pub fn ring_lists(ring: &RingGraph, valid: Option<&[bool]>) -> Rc<Vec<Vec<usize>>> {
    let ok = |v: usize| valid.is_none_or(|m| m[v]);
    Rc::new(
        ring.closed_neighborhoods()
            .into_iter()
            .enumerate()
            .map(|(v, list)| if ok(v) { list.into_iter().filter(|&u| ok(u)).collect() } else { Vec::new() })
            .collect(),
    )
}

/// Residual mean aggregation: `h + act(mean_{N(v) ∪ v}(h) · w + b)`.
pub fn gcn_layer(g: &mut Graph, h: Var, lists: &Rc<Vec<Vec<usize>>>, k: Affine) -> Var {
    let m = g.neighbor_mean(h, Rc::clone(lists));
    let z = k.apply(g, m);
    let z = g.leaky_relu(z, LEAKY_SLOPE);
    g.add(h, z)
}

/// Returns `(f_f, w)` with `w = sigmoid([f_t | f_c] · w_g + b_g)` and
/// `f_f = w * f_t + (1 - w) * f_c`.
pub fn self_gated_fusion(g: &mut Graph, f_t: Var, f_c: Var, gate: Affine) -> (Var, Var) {
    let cat = g.concat_cols(f_t, f_c);
    let z = gate.apply(g, cat);
    let w = g.sigmoid(z);
    let diff = g.sub(f_t, f_c);
    let wd = g.mul(w, diff);
    (g.add(f_c, wd), w)
}

/// `f_m · f_nᵀ / sqrt(D)`.
pub fn similarity_logits(g: &mut Graph, f_m: Var, f_n: Var) -> Var {
    let d = g.value(f_m).cols();
    assert_eq!(d, g.value(f_n).cols(), "feature widths");
    let s = g.matmul_t(f_m, false, f_n, true);
    g.scale(s, 1.0 / (d as f64).sqrt())
}

/// Weights of one linear-attention encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub ff1: Affine,
    pub ff2: Affine,
}

/// Kernelized attention with `phi = elu + 1`, residual, then a residual
/// two-layer feed-forward block. `mask[i]` is 1 for keys that take part.
pub fn linear_attention_layer(g: &mut Graph, h: Var, mask: &Rc<Vec<f64>>, w: &AttentionWeights) -> Var {
    let q = g.matmul(h, w.wq);
    let q = g.elu_plus_one(q);
    let k = g.matmul(h, w.wk);
    let k = g.elu_plus_one(k);
    let k = g.row_scale(k, Rc::clone(mask));
    let v = g.matmul(h, w.wv);
    let kv = g.matmul_t(k, true, v, false);
    let num = g.matmul(q, kv);
    let ones = g.constant(super::Tensor::full(&[mask.len(), 1], 1.0));
    let ksum = g.matmul_t(k, true, ones, false);
    let den = g.matmul(q, ksum);
    let attn = g.div_by_col(num, den);
    let h = g.add(h, attn);
    let f = w.ff1.apply(g, h);
    let f = g.leaky_relu(f, LEAKY_SLOPE);
    let f = w.ff2.apply(g, f);
    g.add(h, f)
}

/// Global descriptor: channel concat, per-point affine map with a leaky
/// rectifier, masked mean, affine map to the output width.
pub fn search_head(
    g: &mut Graph,
    f_c: Var,
    f_t: Var,
    mask: &Rc<Vec<f64>>,
    point: Affine,
    out: Affine,
) -> Result<Var> {
    if !mask.iter().any(|&m| m > 0.0) {
        return Err(Error::InvalidInput("search head input has no valid points".into()));
    }
    let cat = g.concat_cols(f_c, f_t);
    let z = point.apply(g, cat);
    let z = g.leaky_relu(z, LEAKY_SLOPE);
    let pooled = g.weighted_mean_rows(z, Rc::clone(mask));
    Ok(out.apply(g, pooled))
}

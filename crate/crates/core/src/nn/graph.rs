//! Reverse-mode differentiation over 2-D tensors.
//!
//! Each op records its operands; [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients. Every tensor is treated as a matrix
//! of `rows() x cols()`.

use std::rc::Rc;

use super::tensor::{gemm, Tensor};

/// Probability clamp used before logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    EluPlusOne(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Im2Col { x: Var, p: usize, c: usize },
    GroupMeanRows(Var, usize),
    NeighborMean(Var, Rc<Vec<Vec<usize>>>),
    RowScale(Var, Rc<Vec<f64>>),
    GatherRows(Var, Rc<Vec<usize>>),
    WeightedMeanRows(Var, Rc<Vec<f64>>),
    DivByCol(Var, Var),
    L2NormalizeRows(Var),
    Sum(Var),
    DualSoftmax { x: Var, col_sm: Tensor, row_sm: Tensor },
    Focal { s: Var, gt: Rc<Tensor>, beta1: f64, gamma: f64 },
    MultiPosNce { logits: Var, positives: Rc<Vec<Vec<usize>>> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `op(a) · op(b)`, where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            0.0,
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(t2(m, n, out), Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "elementwise shapes");
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(t2(r, c, out), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(t2(r, c, out), op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// `elu(x) + 1`, a positive feature map.
    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x + 1.0 } else { x.exp() }, Op::EluPlusOne(a))
    }

    /// Adds the `1 x C` row `b` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.value(b).numel(), c, "bias width");
        let mut out = self.value(a).data().to_vec();
        let bias = self.value(b).data();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bias).for_each(|(x, &y)| *x += y);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(t2(r, c, out), Op::AddRowBias(a, b), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (r, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(r, rb, "concat rows");
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(t2(r, ca + cb, out), Op::ConcatCols(a, b), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            assert_eq!(self.dims(p).1, c, "concat columns");
            out.extend_from_slice(self.value(p).data());
            r += self.dims(p).0;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(t2(r, c, out), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// 3x3 zero-padded patch gathering. `x` holds `n` images of `p x p`
    /// pixels with `c` channels as rows `(img, row, col)`; the result has one
    /// row per pixel and `9c` columns ordered `(dy, dx, channel)`.
    pub fn im2col3(&mut self, x: Var, p: usize, c: usize) -> Var {
        let (r, cols) = self.dims(x);
        assert_eq!(cols, c, "im2col channels");
        assert_eq!(r % (p * p), 0, "im2col rows");
        let src = self.value(x).data();
        let mut out = vec![0.0; r * 9 * c];
        for_each_tap(r / (p * p), p, |dst_row, tap, src_row| {
            let o = dst_row * 9 * c + tap * c;
            out[o..o + c].copy_from_slice(&src[src_row * c..(src_row + 1) * c]);
        });
        let ng = self.ng(x);
        self.push(t2(r, 9 * c, out), Op::Im2Col { x, p, c }, ng)
    }

    /// Mean over consecutive groups of `g` rows.
    pub fn group_mean_rows(&mut self, a: Var, g: usize) -> Var {
        let (r, c) = self.dims(a);
        assert!(g > 0 && r % g == 0, "group size");
        let src = self.value(a).data();
        let mut out = vec![0.0; r / g * c];
        for i in 0..r {
            let o = (i / g) * c;
            for j in 0..c {
                out[o + j] += src[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= g as f64);
        let ng = self.ng(a);
        self.push(t2(r / g, c, out), Op::GroupMeanRows(a, g), ng)
    }

    /// Row `v` of the result is the mean of rows `lists[v]` of `a`; an empty
    /// list yields a zero row.
    pub fn neighbor_mean(&mut self, a: Var, lists: Rc<Vec<Vec<usize>>>) -> Var {
        let c = self.dims(a).1;
        let src = self.value(a).data();
        let mut out = vec![0.0; lists.len() * c];
        for (v, list) in lists.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let inv = 1.0 / list.len() as f64;
            let o = &mut out[v * c..(v + 1) * c];
            for &u in list {
                o.iter_mut().zip(&src[u * c..(u + 1) * c]).for_each(|(x, &y)| *x += y);
            }
            o.iter_mut().for_each(|x| *x *= inv);
        }
        let ng = self.ng(a);
        let n = lists.len();
        self.push(t2(n, c, out), Op::NeighborMean(a, lists), ng)
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn row_scale(&mut self, a: Var, s: Rc<Vec<f64>>) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(s.len(), r, "row scale length");
        let mut out = self.value(a).data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(s.iter()) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        let ng = self.ng(a);
        self.push(t2(r, c, out), Op::RowScale(a, s), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let c = self.dims(a).1;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(self.value(a).row(i));
        }
        let ng = self.ng(a);
        let n = idx.len();
        self.push(t2(n, c, out), Op::GatherRows(a, idx), ng)
    }

    /// `Σ w_i a_i / Σ w_i` as a `1 x C` row.
    pub fn weighted_mean_rows(&mut self, a: Var, w: Rc<Vec<f64>>) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(w.len(), r, "weight length");
        let total: f64 = w.iter().sum();
        assert!(total > 0.0, "weights must have positive mass");
        let mut out = vec![0.0; c];
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                out.iter_mut().zip(self.value(a).row(i)).for_each(|(x, &y)| *x += wi * y / total);
            }
        }
        let ng = self.ng(a);
        self.push(t2(1, c, out), Op::WeightedMeanRows(a, w), ng)
    }

    /// Divides row `i` of `a` by the scalar `d[i]` (`d` is `R x 1`).
    pub fn div_by_col(&mut self, a: Var, d: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(d), (r, 1), "divisor shape");
        let mut out = self.value(a).data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(self.value(d).data()) {
            row.iter_mut().for_each(|x| *x /= k);
        }
        let ng = self.ng(a) || self.ng(d);
        self.push(t2(r, c, out), Op::DivByCol(a, d), ng)
    }

    /// Rows scaled to unit length (with a tiny floor under the norm).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            let n = row_norm(row);
            row.iter_mut().for_each(|x| *x /= n);
        }
        let ng = self.ng(a);
        self.push(t2(r, c, out), Op::L2NormalizeRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Product of the softmax over each column and the softmax over each row.
    pub fn dual_softmax(&mut self, x: Var) -> Var {
        let (col_sm, row_sm) = dual_softmax_factors(self.value(x));
        let out: Vec<f64> = col_sm.data().iter().zip(row_sm.data()).map(|(a, b)| a * b).collect();
        let (r, c) = self.dims(x);
        let ng = self.ng(x);
        self.push(t2(r, c, out), Op::DualSoftmax { x, col_sm, row_sm }, ng)
    }

    /// Focal matching loss summed over all entries.
    pub fn focal_loss(&mut self, s: Var, gt: Rc<Tensor>, beta1: f64, gamma: f64) -> Var {
        assert_eq!(self.value(s).numel(), gt.numel(), "focal shapes");
        let l = focal_value(self.value(s).data(), gt.data(), beta1, gamma);
        let ng = self.ng(s);
        self.push(Tensor::scalar(l), Op::Focal { s, gt, beta1, gamma }, ng)
    }

    /// Multi-positive contrastive loss over an `N x N` logit matrix,
    /// averaged over the row and column directions. Anchors without
    /// positives are skipped in each direction.
    pub fn multi_positive_nce(&mut self, logits: Var, positives: Rc<Vec<Vec<usize>>>) -> Var {
        let l = nce_forward_backward(self.value(logits), &positives, false).0;
        let ng = self.ng(logits);
        self.push(Tensor::scalar(l), Op::MultiPosNce { logits, positives }, ng)
    }

    /// Accumulates gradients of the scalar `root` into every node.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let acc = |v: Var, delta: Vec<f64>, grads: &mut [Option<Tensor>]| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.data_mut().iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot @ None => {
                    let shape = self.value(v).shape().to_vec();
                    *slot = Some(Tensor::from_vec(&shape, delta).expect("grad shape"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let (av, bv) = (self.value(a), self.value(b));
                let k = if ta { av.rows() } else { av.cols() };
                if self.ng(a) {
                    let mut da = vec![0.0; av.numel()];
                    if ta {
                        gemm(k, n, m, 1.0, bv.data(), tb, gd, true, 0.0, &mut da);
                    } else {
                        gemm(m, n, k, 1.0, gd, false, bv.data(), !tb, 0.0, &mut da);
                    }
                    acc(a, da, grads);
                }
                if self.ng(b) {
                    let mut db = vec![0.0; bv.numel()];
                    if tb {
                        gemm(n, m, k, 1.0, gd, true, av.data(), ta, 0.0, &mut db);
                    } else {
                        gemm(k, m, n, 1.0, av.data(), !ta, gd, false, 0.0, &mut db);
                    }
                    acc(b, db, grads);
                }
            }
            &Op::Add(a, b) => {
                acc(a, gd.to_vec(), grads);
                acc(b, gd.to_vec(), grads);
            }
            &Op::Sub(a, b) => {
                acc(a, gd.to_vec(), grads);
                acc(b, gd.iter().map(|x| -x).collect(), grads);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                acc(a, gd.iter().zip(bv).map(|(g, y)| g * y).collect(), grads);
                acc(b, gd.iter().zip(av).map(|(g, x)| g * x).collect(), grads);
            }
            &Op::Scale(a, s) => acc(a, gd.iter().map(|g| g * s).collect(), grads),
            &Op::AddRowBias(a, b) => {
                acc(a, gd.to_vec(), grads);
                let c = node.value.cols();
                let mut db = vec![0.0; c];
                for row in gd.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
                acc(b, db, grads);
            }
            &Op::LeakyRelu(a, slope) => {
                let x = self.value(a).data();
                acc(
                    a,
                    gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { g * slope }).collect(),
                    grads,
                );
            }
            &Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(a, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(), grads);
            }
            &Op::EluPlusOne(a) => {
                let x = self.value(a).data();
                let y = node.value.data();
                acc(
                    a,
                    gd.iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| if x > 0.0 { *g } else { g * y })
                        .collect(),
                    grads,
                );
            }
            &Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let c = node.value.cols();
                let mut da = Vec::with_capacity(self.value(a).numel());
                let mut db = Vec::with_capacity(self.value(b).numel());
                for row in gd.chunks(c) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                acc(a, da, grads);
                acc(b, db, grads);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(p, gd[off..off + n].to_vec(), grads);
                    off += n;
                }
            }
            &Op::Im2Col { x, p, c } => {
                let r = self.value(x).rows();
                let mut dx = vec![0.0; r * c];
                for_each_tap(r / (p * p), p, |dst_row, tap, src_row| {
                    let o = dst_row * 9 * c + tap * c;
                    for ch in 0..c {
                        dx[src_row * c + ch] += gd[o + ch];
                    }
                });
                acc(x, dx, grads);
            }
            &Op::GroupMeanRows(a, gsize) => {
                let (r, c) = self.dims(a);
                let mut da = vec![0.0; r * c];
                let inv = 1.0 / gsize as f64;
                for i in 0..r {
                    let o = (i / gsize) * c;
                    for j in 0..c {
                        da[i * c + j] = gd[o + j] * inv;
                    }
                }
                acc(a, da, grads);
            }
            Op::NeighborMean(a, lists) => {
                let (r, c) = self.dims(*a);
                let mut da = vec![0.0; r * c];
                for (v, list) in lists.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / list.len() as f64;
                    for &u in list {
                        for j in 0..c {
                            da[u * c + j] += gd[v * c + j] * inv;
                        }
                    }
                }
                acc(*a, da, grads);
            }
            Op::RowScale(a, s) => {
                let c = node.value.cols();
                let mut da = gd.to_vec();
                for (row, &k) in da.chunks_mut(c).zip(s.iter()) {
                    row.iter_mut().for_each(|x| *x *= k);
                }
                acc(*a, da, grads);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.dims(*a);
                let mut da = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += gd[k * c + j];
                    }
                }
                acc(*a, da, grads);
            }
            Op::WeightedMeanRows(a, w) => {
                let (r, c) = self.dims(*a);
                let total: f64 = w.iter().sum();
                let mut da = vec![0.0; r * c];
                for (i, &wi) in w.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] = gd[j] * wi / total;
                    }
                }
                acc(*a, da, grads);
            }
            &Op::DivByCol(a, d) => {
                let c = node.value.cols();
                let dv = self.value(d).data();
                let av = self.value(a).data();
                let mut da = gd.to_vec();
                let mut dd = vec![0.0; dv.len()];
                for (i, &k) in dv.iter().enumerate() {
                    for j in 0..c {
                        let idx = i * c + j;
                        da[idx] = gd[idx] / k;
                        dd[i] -= gd[idx] * av[idx] / (k * k);
                    }
                }
                acc(a, da, grads);
                acc(d, dd, grads);
            }
            &Op::L2NormalizeRows(a) => {
                let c = node.value.cols();
                let x = self.value(a).data();
                let mut da = vec![0.0; x.len()];
                for (i, row) in x.chunks(c).enumerate() {
                    let n = row_norm(row);
                    let g = &gd[i * c..(i + 1) * c];
                    let xg: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        da[i * c + j] = g[j] / n - row[j] * xg / (n * n * n);
                    }
                }
                acc(a, da, grads);
            }
            &Op::Sum(a) => {
                let n = self.value(a).numel();
                acc(a, vec![gd[0]; n], grads);
            }
            Op::DualSoftmax { x, col_sm, row_sm } => {
                let (r, c) = (col_sm.rows(), col_sm.cols());
                let (a, b) = (col_sm.data(), row_sm.data());
                // column factor: dot_j = sum_i A g B; row factor: dot_i = sum_j B g A
                let mut col_dot = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let (ai, bi, gi) = (&a[row.clone()], &b[row.clone()], &gd[row.clone()]);
                    let mut row_dot = 0.0;
                    for j in 0..c {
                        let p = ai[j] * gi[j] * bi[j];
                        col_dot[j] += p;
                        row_dot += p;
                    }
                    let out = &mut dx[row];
                    for j in 0..c {
                        out[j] = 2.0 * ai[j] * gi[j] * bi[j] - bi[j] * row_dot;
                    }
                }
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let ai = &a[row.clone()];
                    for (j, o) in dx[row].iter_mut().enumerate() {
                        *o -= ai[j] * col_dot[j];
                    }
                }
                acc(*x, dx, grads);
            }
            Op::Focal { s, gt, beta1, gamma } => {
                let ds = focal_grad(self.value(*s).data(), gt.data(), *beta1, *gamma);
                acc(*s, ds.into_iter().map(|v| v * gd[0]).collect(), grads);
            }
            Op::MultiPosNce { logits, positives } => {
                let dl = nce_forward_backward(self.value(*logits), positives, true).1;
                acc(*logits, dl.into_iter().map(|v| v * gd[0]).collect(), grads);
            }
        }
    }
}

fn t2(r: usize, c: usize, data: Vec<f64>) -> Tensor {
    Tensor::from_vec(&[r, c], data).expect("op output shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_norm(row: &[f64]) -> f64 {
    (row.iter().map(|x| x * x).sum::<f64>() + 1e-24).sqrt()
}

/// Calls `f(dst_row, tap, src_row)` for every in-bounds 3x3 tap.
fn for_each_tap(n: usize, p: usize, mut f: impl FnMut(usize, usize, usize)) {
    for img in 0..n {
        let base = img * p * p;
        for r in 0..p {
            for c in 0..p {
                let dst = base + r * p + c;
                for dy in 0..3 {
                    let y = r as i64 + dy as i64 - 1;
                    if y < 0 || y >= p as i64 {
                        continue;
                    }
                    for dx in 0..3 {
                        let x = c as i64 + dx as i64 - 1;
                        if x < 0 || x >= p as i64 {
                            continue;
                        }
                        f(dst, dy * 3 + dx, base + y as usize * p + x as usize);
                    }
                }
            }
        }
    }
}

/// Column-wise and row-wise softmax of a matrix, each with max subtraction.
pub fn dual_softmax_factors(x: &Tensor) -> (Tensor, Tensor) {
    let (r, c) = (x.rows(), x.cols());
    let d = x.data();
    let mut mx = vec![f64::NEG_INFINITY; c];
    for i in 0..r {
        for (m, &v) in mx.iter_mut().zip(&d[i * c..(i + 1) * c]) {
            *m = m.max(v);
        }
    }
    let mut col = vec![0.0; r * c];
    let mut z = vec![0.0; c];
    for i in 0..r {
        let row = i * c..(i + 1) * c;
        for (j, (o, &v)) in col[row.clone()].iter_mut().zip(&d[row]).enumerate() {
            *o = (v - mx[j]).exp();
            z[j] += *o;
        }
    }
    for i in 0..r {
        for (o, zj) in col[i * c..(i + 1) * c].iter_mut().zip(&z) {
            *o /= zj;
        }
    }
    let mut row = vec![0.0; r * c];
    for i in 0..r {
        let src = &d[i * c..(i + 1) * c];
        let mx = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut row[i * c..(i + 1) * c];
        let mut z = 0.0;
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mx).exp();
            z += *o;
        }
        dst.iter_mut().for_each(|v| *v /= z);
    }
    (t2(r, c, col), t2(r, c, row))
}

/// `x^e`, exact integer powers when `e` is integral.
fn pow(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn focal_value(s: &[f64], gt: &[f64], beta1: f64, gamma: f64) -> f64 {
    let beta2 = 1.0 - beta1;
    let mut total = 0.0;
    for (&s, &g) in s.iter().zip(gt) {
        let s = clamp_prob(s);
        if g != 0.0 {
            total -= beta1 * pow(1.0 - s, gamma) * s.ln() * g;
        }
        if g != 1.0 {
            total -= beta2 * pow(s, gamma) * (1.0 - s).ln() * (1.0 - g);
        }
    }
    total
}

fn focal_grad(s: &[f64], gt: &[f64], beta1: f64, gamma: f64) -> Vec<f64> {
    let beta2 = 1.0 - beta1;
    s.iter()
        .zip(gt)
        .map(|(&raw, &g)| {
            if raw <= PROB_CLAMP || raw >= 1.0 - PROB_CLAMP {
                return 0.0;
            }
            let s = raw;
            let mut d = 0.0;
            if g != 0.0 {
                let q = pow(1.0 - s, gamma - 1.0);
                let pos = -gamma * q * s.ln() + q * (1.0 - s) / s;
                d -= beta1 * g * pos;
            }
            if g != 1.0 {
                let q = pow(s, gamma - 1.0);
                let neg = gamma * q * (1.0 - s).ln() - q * s / (1.0 - s);
                d -= beta2 * (1.0 - g) * neg;
            }
            d
        })
        .collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// One direction of the multi-positive loss over rows of `l`, adding
/// `weight`-scaled gradients into `grad` at `(i, k)` or `(k, i)`.
fn nce_direction(l: &Tensor, positives: &[Vec<usize>], transpose: bool, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let n = l.rows();
    let at = |i: usize, k: usize| if transpose { l.get2(k, i) } else { l.get2(i, k) };
    // positives in this direction: anchor i has p when (i, p) is listed,
    // or for the transposed direction when (p, i) is listed
    let pos_of = |i: usize| -> Vec<usize> {
        if transpose {
            (0..n).filter(|&p| p != i && positives[p].contains(&i)).collect()
        } else {
            positives[i].iter().copied().filter(|&p| p != i).collect()
        }
    };
    let anchors: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, pos_of(i))).filter(|(_, p)| !p.is_empty()).collect();
    let count = anchors.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (i, pos) in &anchors {
        let i = *i;
        let denom = (0..n).filter(|&k| k != i).map(|k| at(i, k));
        let lse_all = log_sum_exp(denom);
        let lse_pos = log_sum_exp(pos.iter().map(|&p| at(i, p)));
        total += lse_all - lse_pos;
        if let Some(g) = grad.as_deref_mut() {
            for k in 0..n {
                if k == i {
                    continue;
                }
                let mut d = (at(i, k) - lse_all).exp();
                if pos.contains(&k) {
                    d -= (at(i, k) - lse_pos).exp();
                }
                let idx = if transpose { k * n + i } else { i * n + k };
                g[idx] += weight * d / count;
            }
        }
    }
    total / count
}

/// Returns the loss and, when requested, its gradient w.r.t. the logits.
fn nce_forward_backward(l: &Tensor, positives: &[Vec<usize>], want_grad: bool) -> (f64, Vec<f64>) {
    let n = l.rows();
    let mut grad = vec![0.0; if want_grad { n * n } else { 0 }];
    let g = if want_grad { Some(grad.as_mut_slice()) } else { None };
    let a = nce_direction(l, positives, false, 0.5, g);
    let g = if want_grad { Some(grad.as_mut_slice()) } else { None };
    let b = nce_direction(l, positives, true, 0.5, g);
    (0.5 * (a + b), grad)
}

/// Whether a positive set admits the contrastive loss: at least one anchor
/// has a positive and at least one off-diagonal pair is a negative.
pub fn nce_batch_is_valid(n: usize, positives: &[Vec<usize>]) -> std::result::Result<(), String> {
    if n < 2 || positives.len() != n {
        return Err(format!("need at least two items with positive lists, got {n}"));
    }
    let pos_pairs: usize = positives
        .iter()
        .enumerate()
        .map(|(i, p)| p.iter().filter(|&&q| q != i && q < n).count())
        .sum();
    if pos_pairs == 0 {
        return Err("no anchor has a positive".into());
    }
    if pos_pairs >= n * (n - 1) {
        return Err("batch has no negatives".into());
    }
    if positives.iter().flatten().any(|&q| q >= n) {
        return Err("positive index out of range".into());
    }
    Ok(())
}

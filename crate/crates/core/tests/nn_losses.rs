use std::rc::Rc;

use fragmenta::nn::gradcheck::{check_graph, GRAD_CHECK_STEP};
use fragmenta::nn::{self, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dual_softmax(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let s = g.dual_softmax(v);
    g.value(s).clone()
}

/// Exponentials without max subtraction, straight from the definition.
fn dual_softmax_oracle(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            let col: f64 = (0..r).map(|k| x.get2(k, j).exp()).sum();
            let row: f64 = (0..c).map(|k| x.get2(i, k).exp()).sum();
            let e = x.get2(i, j).exp();
            out.set2(i, j, (e / col) * (e / row));
        }
    }
    out
}

#[test]
fn dual_softmax_examples() {
    assert_eq!(dual_softmax(&Tensor::scalar(3.7)).data(), &[1.0]);
    assert!(dual_softmax(&Tensor::zeros(&[2, 2])).data().iter().all(|&v| v == 0.25));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_t(&mut rng, 5, 7, -3.0, 3.0);
    let s = dual_softmax(&x);
    assert!(s.max_abs_diff(&dual_softmax_oracle(&x)) < 1e-12);
    assert!(s.data().iter().all(|&v| v > 0.0 && v <= 1.0));
}

#[test]
fn dual_softmax_factor_normalization_and_mutual_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = rand_t(&mut rng, r, c, -4.0, 4.0);
        let (col, row) = nn::dual_softmax_factors(&x);
        for j in 0..c {
            assert!(((0..r).map(|i| col.get2(i, j)).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for i in 0..r {
            assert!((row.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // plant a mutual maximum that leads its row and column by a margin
        let margin = (r.max(c) as f64).ln() + 1.0;
        let (pi, pj) = (rng.random_range(0..r), rng.random_range(0..c));
        let mut x = x;
        let lead = (0..r).map(|k| x.get2(k, pj)).chain(x.row(pi).iter().copied()).fold(f64::MIN, f64::max);
        x.set2(pi, pj, lead + margin);
        let s = dual_softmax(&x);
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!(argmax(s.row(pi)), pj);
        let col: Vec<f64> = (0..r).map(|k| s.get2(k, pj)).collect();
        assert_eq!(argmax(&col), pi);
    }
}

#[test]
fn mutual_max_without_margin_can_move() {
    // the column softmax of a flat column can outweigh the row preference
    let x = Tensor::from_rows(&[vec![3.0, 2.9], vec![2.99, -10.0]]).unwrap();
    let s = dual_softmax(&x);
    assert!(s.get2(0, 1) > s.get2(0, 0));
}

fn focal(s: &Tensor, gt: &Tensor, beta1: f64, gamma: f64) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(s.clone());
    let l = g.focal_loss(v, Rc::new(gt.clone()), beta1, gamma);
    g.scalar(l)
}

#[test]
fn focal_examples() {
    let l = focal(&Tensor::scalar(0.5), &Tensor::scalar(1.0), 0.55, 8.0);
    let expect = 0.55 * 0.5f64.powi(8) * 2f64.ln();
    assert!((l - expect).abs() < 1e-15);
    assert!((l - 1.4888e-3).abs() < 1e-6);
    let gt = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(focal(&gt, &gt, 0.55, 8.0) < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let s = rand_t(&mut rng, 4, 4, 0.0, 1.0);
        let gt = Tensor::from_vec(&[4, 4], (0..16).map(|_| rng.random_bool(0.3) as u8 as f64).collect()).unwrap();
        assert!(focal(&s, &gt, 0.55, 8.0) >= 0.0);
    }
}

#[test]
fn focal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = rand_t(&mut rng, 6, 6, 0.2, 0.8);
    let gt = Rc::new(Tensor::from_vec(&[6, 6], (0..36).map(|i| (i % 7 == 0) as u8 as f64).collect()).unwrap());
    for gamma in [8.0, 2.0, 0.0] {
        let err = check_graph(|g, v| g.focal_loss(v[0], Rc::clone(&gt), 0.55, gamma), &[s.clone()], GRAD_CHECK_STEP);
        assert!(err < 1e-4, "gamma {gamma}: {err}");
    }
}

fn nce(e: &Tensor, pos: &[Vec<usize>], tau: f64) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(e.clone());
    let z = g.l2_normalize_rows(v);
    let s = g.matmul_t(z, false, z, true);
    let l = g.scale(s, 1.0 / tau);
    let loss = g.multi_positive_nce(l, Rc::new(pos.to_vec()));
    g.scalar(loss)
}

#[test]
fn info_nce_direct_evaluation() {
    // anchors 0 and 1 identical, item 2 orthogonal to both
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let pos = vec![vec![1], vec![0], vec![]];
    let tau = 0.12;
    let per_anchor = -((1.0f64 / tau).exp() / ((1.0f64 / tau).exp() + 1.0)).ln();
    assert!((nce(&e, &pos, tau) - per_anchor).abs() < 1e-12);
    let scaled = Tensor::from_vec(&[3, 2], e.data().iter().map(|v| v * 5.0).collect()).unwrap();
    assert!((nce(&scaled, &pos, tau) - nce(&e, &pos, tau)).abs() < 1e-12);
}

#[test]
fn info_nce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = rand_t(&mut rng, 6, 5, -1.0, 1.0);
    let pos = Rc::new(vec![vec![1, 2], vec![0], vec![0], vec![4], vec![3], vec![]]);
    let err = check_graph(
        |g, v| {
            let z = g.l2_normalize_rows(v[0]);
            let s = g.matmul_t(z, false, z, true);
            let l = g.scale(s, 1.0 / 0.12);
            g.multi_positive_nce(l, Rc::clone(&pos))
        },
        &[e],
        GRAD_CHECK_STEP,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dual_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_t(&mut rng, 5, 4, -2.0, 2.0);
    let r = rand_t(&mut rng, 5, 4, -1.0, 1.0);
    let err = check_graph(
        |g, v: &[Var]| {
            let s = g.dual_softmax(v[0]);
            let rc = g.constant(r.clone());
            let p = g.mul(s, rc);
            g.sum(p)
        },
        &[x],
        GRAD_CHECK_STEP,
    );
    assert!(err < 1e-4, "{err}");
}

fn tiny_fragment(w: usize, h: usize, phase: u32) -> (image::RgbImage, fragmenta::raster::Mask, fragmenta::geometry::OrderedContour) {
    let mask = fragmenta::raster::Mask::from_fn(w, h, |x, y| x >= 1 && y >= 1 && x + 1 < w && y + 1 < h && (x + y) % 5 != 0 || (x == w / 2 && y == h / 2));
    let mask = fragmenta::raster::Mask::from_fn(w, h, |x, y| mask.get(x, y) || (x >= 1 && y >= 1 && x + 1 < w && y + 1 < h));
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([(x * 37 + phase) as u8, (y * 53 + 2 * phase) as u8, ((x * y * 11) % 256) as u8])
    });
    let c = fragmenta::codec::trace_contour(&mask).unwrap();
    (img, mask, c)
}

#[test]
fn end_to_end_matching_loss_gradient() {
    let cfg = nn::ModelConfig {
        d_feat: 4,
        gcn_layers: 2,
        ring_k: 2,
        patch_size: 3,
        contour_conv_width: 2,
        texture_conv_widths: [2, 2],
        contour_mode: fragmenta::codec::ContourMode::EdgePlusInsideOutside,
        ..nn::ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = nn::init_backbone(&cfg, &mut rng);
    // random biases keep zero-padded pixels off the rectifier kink
    for t in store.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let (img_a, mask_a, ca) = tiny_fragment(6, 5, 0);
    let (img_b, mask_b, cb) = tiny_fragment(5, 6, 40);
    let a = nn::prepare_input(&img_a, &mask_a, &ca, &cfg).unwrap();
    let b = nn::prepare_input(&img_b, &mask_b, &cb, &cfg).unwrap();
    assert!(a.m <= 16 && b.m <= 16);
    let matches: Vec<(usize, usize)> = (0..a.m.min(b.m).min(5)).map(|k| (k, b.m - 1 - k)).collect();
    let gt = Rc::new(nn::gt_matrix(a.m, b.m, &matches));

    let loss_at = |flat: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
        let mut p = store.clone();
        let mut off = 0;
        for t in p.values_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        let mut g = Graph::new();
        let bind = p.bind(&mut g, true);
        let l = nn::matching_loss(&mut g, &bind, &a, &b, &gt, &cfg);
        let v = g.scalar(l);
        if !want_grad {
            return (v, Vec::new());
        }
        g.backward(l);
        (v, p.collect_grads(&g, &bind).iter().flat_map(|t| t.data().to_vec()).collect())
    };
    let x: Vec<f64> = store.values().iter().flat_map(|t| t.data().to_vec()).collect();
    let (_, grad) = loss_at(&x, true);
    let err = nn::gradcheck::grad_check(|p| loss_at(p, false).0, &grad, &x, GRAD_CHECK_STEP);
    assert!(err < 1e-4, "{err}");
}

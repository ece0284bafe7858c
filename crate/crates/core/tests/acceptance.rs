//! End-to-end acceptance: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant};

use fragmenta::codec::build_ring_graph;
use fragmenta::geometry::{rms_residual, Point2, RigidTransform2D};
use fragmenta::matching::{dilate_antidiagonal, erode_antidiagonal, morphology_chain, threshold_filter, MatchConfig};
use fragmenta::metrics::{self, PairEvaluation};
use fragmenta::nn::gradcheck::{check_graph, grad_check, GRAD_CHECK_STEP};
use fragmenta::nn::layers::{self, Affine, AttentionWeights};
use fragmenta::nn::{self, Graph, Model, ModelConfig, Tensor, Var};
use fragmenta::pipeline::{self, Dataset, MatchReport, PairSource, RunConfig, Split, SyntheticImages};
use fragmenta::synth::synthetic_image;
use fragmenta::tearing::{self, Difficulty, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> std::result::Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

// ---- 1: kernel oracles

fn dual_softmax_direct(x: &Tensor) -> Vec<f64> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            let col: f64 = (0..r).map(|k| x.get2(k, j).exp()).sum();
            let row: f64 = (0..c).map(|k| x.get2(i, k).exp()).sum();
            let e = x.get2(i, j).exp();
            out.push(e / col * (e / row));
        }
    }
    out
}

fn focal_direct(s: &[f64], gt: &[f64], beta1: f64, gamma: f64) -> f64 {
    let beta2 = 1.0 - beta1;
    -s.iter()
        .zip(gt)
        .map(|(&s, &g)| {
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            beta1 * (1.0 - s).powf(gamma) * s.ln() * g + beta2 * s.powf(gamma) * (1.0 - s).ln() * (1.0 - g)
        })
        .sum::<f64>()
}

/// Symmetric multi-positive InfoNCE over cosine similarities, one direction
/// per anchor orientation, from plain exponential sums.
fn info_nce_direct(e: &Tensor, pos: &[Vec<usize>], tau: f64) -> f64 {
    let n = e.rows();
    let norm = |i: usize| e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = |i: usize, k: usize| e.row(i).iter().zip(e.row(k)).map(|(a, b)| a * b).sum::<f64>() / (norm(i) * norm(k));
    let direction = |is_pos: &dyn Fn(usize, usize) -> bool| {
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let p: f64 = (0..n).filter(|&k| k != i && is_pos(i, k)).map(|k| (cos(i, k) / tau).exp()).sum();
            if p == 0.0 {
                continue;
            }
            let all: f64 = (0..n).filter(|&k| k != i).map(|k| (cos(i, k) / tau).exp()).sum();
            total += -(p / all).ln();
            anchors += 1;
        }
        total / anchors as f64
    };
    0.5 * (direction(&|i, k| pos[i].contains(&k)) + direction(&|i, k| pos[k].contains(&i)))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut ds, mut fl, mut nce) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..10), rng.random_range(1..10));
        let x = rand_t(&mut rng, r, c, -5.0, 5.0);
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let s = g.dual_softmax(v);
        let got = g.value(s).data().to_vec();
        ds = ds.max(got.iter().zip(dual_softmax_direct(&x)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let sv = rand_t(&mut rng, r, c, 0.0, 1.0);
        let gt: Vec<f64> = (0..r * c).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
        let (beta1, gamma) = (rng.random_range(0.05..0.95), rng.random_range(0.0..8.0));
        let mut g = Graph::new();
        let v = g.constant(sv.clone());
        let l = g.focal_loss(v, Rc::new(Tensor::from_vec(&[r, c], gt.clone()).unwrap()), beta1, gamma);
        fl = fl.max((g.scalar(l) - focal_direct(sv.data(), &gt, beta1, gamma)).abs());

        let n = rng.random_range(3..10);
        let dim = rng.random_range(2..8);
        let e = rand_t(&mut rng, n, dim, -1.0, 1.0);
        let mut pos: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&k| k != i && rng.random_bool(0.25)).collect())
            .collect();
        if pos.iter().all(Vec::is_empty) {
            pos[0].push(1);
        }
        if nn::nce_batch_is_valid(n, &pos).is_err() {
            continue;
        }
        let tau = rng.random_range(0.05..1.0);
        let mut g = Graph::new();
        let v = g.constant(e.clone());
        let z = g.l2_normalize_rows(v);
        let sim = g.matmul_t(z, false, z, true);
        let logits = g.scale(sim, 1.0 / tau);
        let l = g.multi_positive_nce(logits, Rc::new(pos.clone()));
        nce = nce.max((g.scalar(l) - info_nce_direct(&e, &pos, tau)).abs());
    }
    let worst = ds.max(fl).max(nce);
    ensure(worst < 1e-10, || format!("max abs diff: dual softmax {ds:e}, focal {fl:e}, InfoNCE {nce:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("200 instances each; max abs diff dual softmax {ds:.1e}, focal {fl:.1e}, InfoNCE {nce:.1e}"))
}

// ---- 2: gradient suite

/// Random weighted sum, so every output entry carries gradient.
fn probe(g: &mut Graph, y: Var, weights: &Tensor) -> Var {
    let r = g.constant(weights.clone());
    let p = g.mul(y, r);
    g.sum(p)
}

fn aff(v: &[Var], i: usize) -> Affine {
    Affine { w: v[i], b: v[i + 1] }
}

fn output_weights(rng: &mut ChaCha8Rng, build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> Tensor {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = build(&mut g, &vars);
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn probed(rng: &mut ChaCha8Rng, build: impl Fn(&mut Graph, &[Var]) -> Var + Copy, inputs: &[Tensor]) -> f64 {
    let w = output_weights(rng, build, inputs);
    check_graph(
        |g, v| {
            let y = build(g, v);
            probe(g, y, &w)
        },
        inputs,
        GRAD_CHECK_STEP,
    )
}

fn tiny_fragment(w: usize, h: usize, phase: u32) -> (image::RgbImage, fragmenta::raster::Mask, fragmenta::geometry::OrderedContour) {
    let mask = fragmenta::raster::Mask::from_fn(w, h, |x, y| x >= 1 && y >= 1 && x + 1 < w && y + 1 < h);
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([(x * 37 + phase) as u8, (y * 53 + 2 * phase) as u8, ((x * y * 11) % 256) as u8])
    });
    let c = fragmenta::codec::trace_contour(&mask).unwrap();
    (img, mask, c)
}

fn end_to_end_gradient(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = ModelConfig {
        d_feat: 4,
        gcn_layers: 2,
        ring_k: 2,
        patch_size: 3,
        contour_conv_width: 2,
        texture_conv_widths: [2, 2],
        contour_mode: fragmenta::codec::ContourMode::EdgePlusInsideOutside,
        ..ModelConfig::default()
    };
    let mut store = nn::init_backbone(&cfg, rng);
    for t in store.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let (img_a, mask_a, ca) = tiny_fragment(6, 5, 0);
    let (img_b, mask_b, cb) = tiny_fragment(5, 6, 40);
    let a = nn::prepare_input(&img_a, &mask_a, &ca, &cfg).unwrap();
    let b = nn::prepare_input(&img_b, &mask_b, &cb, &cfg).unwrap();
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
    grad_check(|p| loss_at(p, false).0, &grad, &x, GRAD_CHECK_STEP)
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..4 {
        let (m, p, c) = (rng.random_range(1..3), 3, rng.random_range(1..4));
        let (cw, d) = (rng.random_range(1..5), rng.random_range(1..8));
        let ins = vec![
            rand_t(&mut rng, m * p * p, c, -1.0, 1.0),
            rand_t(&mut rng, 9 * c, cw, -0.7, 0.7),
            rand_t(&mut rng, 1, cw, -0.3, 0.3),
            rand_t(&mut rng, cw, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
        ];
        note(
            "patch_embed_contour",
            probed(&mut rng, |g, v| layers::patch_embed_contour(g, v[0], p, c, aff(v, 1), aff(v, 3)), &ins),
        );

        let (t1, t2) = (rng.random_range(1..4), rng.random_range(1..4));
        let ins = vec![
            rand_t(&mut rng, m * p * p, 3, -1.0, 1.0),
            rand_t(&mut rng, 27, t1, -0.7, 0.7),
            rand_t(&mut rng, 1, t1, -0.3, 0.3),
            rand_t(&mut rng, 9 * t1, t2, -0.7, 0.7),
            rand_t(&mut rng, 1, t2, -0.3, 0.3),
            rand_t(&mut rng, t2, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
        ];
        note(
            "patch_embed_texture",
            probed(&mut rng, |g, v| layers::patch_embed_texture(g, v[0], p, aff(v, 1), aff(v, 3), aff(v, 5)), &ins),
        );

        let l = rng.random_range(3..17);
        let d = rng.random_range(1..9);
        let valid: Vec<bool> = (0..l).map(|_| rng.random_bool(0.8)).collect();
        let lists = layers::ring_lists(&build_ring_graph(l, rng.random_range(1..4)), Some(&valid));
        let ins = vec![
            rand_t(&mut rng, l, d, -1.0, 1.0),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
        ];
        note("gcn_layer", probed(&mut rng, |g, v| layers::gcn_layer(g, v[0], &lists, aff(v, 1)), &ins));

        let ins = vec![
            rand_t(&mut rng, l, d, -2.0, 2.0),
            rand_t(&mut rng, l, d, -2.0, 2.0),
            rand_t(&mut rng, 2 * d, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
        ];
        note(
            "self_gated_fusion",
            probed(&mut rng, |g, v| layers::self_gated_fusion(g, v[0], v[1], aff(v, 2)).0, &ins),
        );

        let mut mask: Vec<f64> = (0..l).map(|_| rng.random_bool(0.8) as u8 as f64).collect();
        mask[0] = 1.0;
        let mask = Rc::new(mask);
        let ins = vec![
            rand_t(&mut rng, l, d, -1.0, 1.0),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
            rand_t(&mut rng, d, d, -0.7, 0.7),
            rand_t(&mut rng, 1, d, -0.3, 0.3),
        ];
        note(
            "linear_attention_layer",
            probed(
                &mut rng,
                |g, v| {
                    let w = AttentionWeights {
                        wq: v[1],
                        wk: v[2],
                        wv: v[3],
                        ff1: aff(v, 4),
                        ff2: aff(v, 6),
                    };
                    layers::linear_attention_layer(g, v[0], &mask, &w)
                },
                &ins,
            ),
        );

        let (h, out) = (rng.random_range(1..9), rng.random_range(1..9));
        let ins = vec![
            rand_t(&mut rng, l, d, -1.0, 1.0),
            rand_t(&mut rng, l, d, -1.0, 1.0),
            rand_t(&mut rng, 2 * d, h, -0.7, 0.7),
            rand_t(&mut rng, 1, h, -0.3, 0.3),
            rand_t(&mut rng, h, out, -0.7, 0.7),
            rand_t(&mut rng, 1, out, -0.3, 0.3),
        ];
        note(
            "search_head",
            probed(
                &mut rng,
                |g, v| layers::search_head(g, v[0], v[1], &mask, aff(v, 2), aff(v, 4)).unwrap(),
                &ins,
            ),
        );

        let (r, c) = (rng.random_range(1..17), rng.random_range(1..9));
        let s = rand_t(&mut rng, r, c, 0.05, 0.95);
        let gt = Rc::new(Tensor::from_vec(&[r, c], (0..r * c).map(|_| rng.random_bool(0.3) as u8 as f64).collect()).unwrap());
        let gamma = rng.random_range(0.0..8.0);
        note(
            "focal_matching_loss",
            check_graph(|g, v| g.focal_loss(v[0], Rc::clone(&gt), 0.55, gamma), &[s], GRAD_CHECK_STEP),
        );
        let x = rand_t(&mut rng, r, c, -2.0, 2.0);
        note("dual_softmax", probed(&mut rng, |g, v| g.dual_softmax(v[0]), &[x]));

        let n = rng.random_range(3..17);
        let dim = rng.random_range(2..9);
        let e = rand_t(&mut rng, n, dim, -1.0, 1.0);
        let mut pos: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n]).collect();
        pos[n - 1].clear();
        let pos = Rc::new(pos);
        note(
            "info_nce_loss",
            check_graph(
                |g, v| {
                    let z = g.l2_normalize_rows(v[0]);
                    let s = g.matmul_t(z, false, z, true);
                    let l = g.scale(s, 1.0 / 0.12);
                    g.multi_positive_nce(l, Rc::clone(&pos))
                },
                &[e],
                GRAD_CHECK_STEP,
            ),
        );
    }
    note("end_to_end_matching_loss", end_to_end_gradient(&mut rng));
    let bad: Vec<String> = worst.iter().filter(|(_, &e)| !(e < 1e-4)).map(|(k, e)| format!("{k} {e:.2e}")).collect();
    ensure(bad.is_empty(), || format!("relative error above 1e-4: {}", bad.join(", ")))?;
    within(start.elapsed(), 60)?;
    let max = worst.values().fold(0.0f64, |a, &b| a.max(b));
    Ok(format!("{} operations, worst relative error {max:.1e}", worst.len()))
}

// ---- 3, 6, 8: the 20-image corpus

const CORPUS_IMAGES: usize = 20;
const CORPUS_SEED: u64 = 303;

fn corpus_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: CORPUS_SEED,
        synthetic: Some(SyntheticImages {
            count: CORPUS_IMAGES,
            width: 512,
            height: 448,
        }),
        render_samples: 2,
        ..RunConfig::default()
    };
    cfg.paths.dataset = root.join("dataset");
    cfg.paths.run = root.join("run");
    cfg
}

/// Every file under `dir` with its bytes, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_3(root: &Path) -> Check {
    let start = Instant::now();
    let cfg = corpus_config(root);
    pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    let first = snapshot(&cfg.paths.dataset);
    pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    ensure(snapshot(&cfg.paths.dataset) == first, || "rerun is not byte-identical".into())?;

    let ds = Dataset::open(&cfg.paths.dataset).map_err(|e| e.to_string())?;
    let m = &ds.manifest;
    ensure(m.images.len() == CORPUS_IMAGES, || format!("{} usable images", m.images.len()))?;
    let mut worst_rms = 0.0f64;
    for img in &m.images {
        let k: u64 = img.name.trim_start_matches("synthetic-").parse().unwrap();
        let source = synthetic_image(img.width, img.height, pipeline::sub_seed(CORPUS_SEED, &format!("synthetic/{k}")));
        let (w, h) = (img.width as usize, img.height as usize);
        let mut owner = vec![usize::MAX; w * h];
        for e in m.fragments.iter().filter(|f| f.source_image == img.id) {
            let f = ds.load_fragment(e.id).map_err(|e| e.to_string())?;
            ensure(f.width() >= 150 && f.height() >= 150, || {
                format!("fragment {} is {}x{}", e.id, f.width(), f.height())
            })?;
            let (ox, oy) = (f.offset.x as usize, f.offset.y as usize);
            for y in 0..f.height() {
                for x in 0..f.width() {
                    if !f.mask.get(x, y) {
                        continue;
                    }
                    let (gx, gy) = (x + ox, y + oy);
                    ensure(owner[gy * w + gx] == usize::MAX, || format!("pixel {gx},{gy} has two owners"))?;
                    owner[gy * w + gx] = e.id;
                    ensure(f.pixels.get_pixel(x as u32, y as u32) == source.get_pixel(gx as u32, gy as u32), || {
                        format!("fragment {} pixel {x},{y} differs from the source", e.id)
                    })?;
                }
            }
        }
        ensure(owner.iter().all(|&o| o != usize::MAX), || format!("image {} is not fully covered", img.id))?;
    }
    for p in &m.pairs {
        let (cm, cn) = (m.fragments[p.id_m].contour().points, m.fragments[p.id_n].contour().points);
        let src: Vec<Point2> = p.matches.iter().map(|&[_, j]| cn[j]).collect();
        let dst: Vec<Point2> = p.matches.iter().map(|&[i, _]| cm[i]).collect();
        let rms = rms_residual(&p.transform, &src, &dst);
        worst_rms = worst_rms.max(rms);
        ensure(rms <= 1.5, || format!("pair ({}, {}) RMS {rms:.3}", p.id_m, p.id_n))?;
        let matches: Vec<(usize, usize)> = p.matches.iter().map(|&[i, j]| (i, j)).collect();
        ensure(tearing::is_staircase(&matches, cm.len(), cn.len()), || {
            format!("pair ({}, {}) is not a monotone staircase", p.id_m, p.id_n)
        })?;
    }
    within(start.elapsed(), 300)?;
    Ok(format!(
        "{} images, {} fragments, {} pairs; worst GT RMS {worst_rms:.3} px; {:.1}s",
        m.images.len(),
        m.fragments.len(),
        m.pairs.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn ensure_corpus(root: &Path) -> std::result::Result<RunConfig, String> {
    let cfg = corpus_config(root);
    if !cfg.paths.dataset.join(pipeline::MANIFEST_FILE).exists() {
        pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn criterion_6(root: &Path) -> Check {
    let cfg = ensure_corpus(root)?;
    let split = Some(Split::Test);
    let s = pipeline::run_match(&cfg, PairSource::Gt, split, true).map_err(|e| e.to_string())?;
    let summary = pipeline::evaluate(&cfg, split).map_err(|e| e.to_string())?;
    let ds = Dataset::open(&cfg.paths.dataset).map_err(|e| e.to_string())?;
    let report = MatchReport::read(&cfg.paths.run.join(pipeline::layout::MATCH_REPORT)).map_err(|e| e.to_string())?;
    let est: BTreeMap<(usize, usize), RigidTransform2D> =
        report.results.iter().filter_map(|r| r.transform.map(|t| ((r.id_m, r.id_n), t))).collect();
    let (mut hd, mut re, mut nte) = (0.0f64, 0.0f64, 0.0f64);
    let pairs = ds.manifest.pairs_in(split);
    ensure(!pairs.is_empty() && s.pairs == pairs.len(), || format!("{} GT pairs, {} matched", pairs.len(), s.pairs))?;
    for p in &pairs {
        let (fm, fnn) = (&ds.manifest.fragments[p.id_m], &ds.manifest.fragments[p.id_n]);
        let contour_n = fnn.contour().points;
        let e = PairEvaluation {
            id_m: p.id_m,
            id_n: p.id_n,
            difficulty: p.difficulty,
            est: est.get(&(p.id_m, p.id_n)).copied(),
            gt: p.transform,
            matched_n: p.matches.iter().map(|&[_, j]| contour_n[j]).collect(),
            contour_n,
            area_m: fm.area as f64,
            area_n: fnn.area as f64,
        };
        let sc = metrics::score_pair(&e, cfg.tau_rr).map_err(|e| e.to_string())?;
        ensure(sc.success, || format!("pair ({}, {}) not registered", p.id_m, p.id_n))?;
        hd = hd.max(sc.hd.unwrap());
        re = re.max(sc.re.unwrap());
        nte = nte.max(sc.nte.unwrap());
    }
    let all = summary.report.row("All").ok_or("no pooled row")?;
    ensure(all.rr == Some(1.0), || format!("RR {:?}", all.rr))?;
    ensure(hd < 1.0 && re < 1e-3 && nte < 1e-6, || format!("worst HD {hd:.3e}, RE {re:.3e}, NTE {nte:.3e}"))?;
    Ok(format!(
        "{} test pairs; RR 1; worst HD {hd:.2e} px, RE {re:.2e} rad, NTE {nte:.2e}",
        pairs.len()
    ))
}

fn criterion_8(root: &Path) -> Check {
    let ranks: metrics::RankTable = [(0, vec![2, 1, 3]), (1, vec![2, 0, 3])].into_iter().collect();
    let ndcg = metrics::ndcg_at_k(&ranks, &[(0, 1)], 5).map_err(|e| e.to_string())?;
    ensure((ndcg - 1.0 / 3f64.log2()).abs() < 1e-12, || format!("NDCG {ndcg}"))?;

    let t = |th: f64| RigidTransform2D::new(th, 0.0, 0.0);
    let pi = std::f64::consts::PI;
    let wraps = [
        (0.5, 0.5, 0.0),
        (pi / 2.0, -pi / 2.0, pi),
        (0.25, 0.25 + 2.0 * pi, 0.0),
        (pi - 0.25, -(pi - 0.25), 0.5),
        (-0.125, 0.125, 0.25),
    ];
    for (a, b, want) in wraps {
        let got = metrics::rotation_error(&t(a), &t(b));
        ensure((got - want).abs() <= 4.0 * f64::EPSILON * want.max(1.0), || format!("RE({a}, {b}) = {got}, want {want}"))?;
    }

    let gt = RigidTransform2D::new(0.0, 1.0, 1.0);
    let est = RigidTransform2D::new(0.0, 7.0, 9.0);
    let p = Point2::new(3.0, 4.0);
    let nte = |e: &RigidTransform2D, a: f64| metrics::normalized_translation_error(e, &gt, p, a, a).unwrap();
    ensure(nte(&gt, 5.0) == 0.0 && nte(&est, 1000.0) == 5e-3 && nte(&est, 2000.0) == 2.5e-3, || {
        "NTE arithmetic is off".into()
    })?;

    let cfg = ensure_corpus(root)?;
    let ds = Dataset::open(&cfg.paths.dataset).map_err(|e| e.to_string())?;
    let m = &ds.manifest;
    let counts = m.counts();
    let mut rows = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let c = counts.get(&split).copied().unwrap_or_default();
        let frags = m.fragments.iter().filter(|f| f.split == split).count();
        let pairs: Vec<_> = m.pairs.iter().filter(|p| p.split == split).collect();
        let by = |d: Difficulty| pairs.iter().filter(|p| p.difficulty == d).count();
        ensure(c.fragments == frags && c.pairs == pairs.len(), || format!("{split}: counts disagree with the manifest"))?;
        ensure(
            (c.high, c.medium, c.low) == (by(Difficulty::High), by(Difficulty::Medium), by(Difficulty::Low)),
            || format!("{split}: strata disagree with the manifest"),
        )?;
        ensure(c.high + c.medium + c.low == c.pairs, || format!("{split}: strata do not sum"))?;
        if c.pairs > 0 {
            pipeline::run_match(&cfg, PairSource::Gt, Some(split), true).map_err(|e| e.to_string())?;
            let r = pipeline::evaluate(&cfg, Some(split)).map_err(|e| e.to_string())?.report;
            let strata: usize = ["High", "Medium", "Low"].iter().filter_map(|n| r.row(n)).map(|row| row.pairs).sum();
            ensure(r.row("All").map(|a| a.pairs) == Some(c.pairs) && strata == c.pairs, || {
                format!("{split}: report rows disagree with the manifest")
            })?;
        }
        rows.push(format!("{split} {}/{}/{}", c.images, c.fragments, c.pairs));
    }
    let total: usize = counts.values().map(|c| c.pairs).sum();
    ensure(total == m.pairs.len(), || "split pair counts do not add up".into())?;
    Ok(format!("NDCG, RE wraps, NTE exact; images/fragments/pairs {}", rows.join(", ")))
}

// ---- 4, 5: morphology and RANSAC

fn criterion_4() -> Check {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut noise_total = 0usize;
    for trial in 0..1000 {
        let (rows, cols) = (rng.random_range(12..40), rng.random_range(12..40));
        let len = rng.random_range(5..=rows.min(cols));
        let noise = rng.random_range(0..=20);
        let gap = if trial % 2 == 1 { Some(rng.random_range(1..len - 1)) } else { None };
        let p = common::planted(&mut rng, rows, cols, len, gap, noise);
        noise_total += p.noise.len();
        let t = threshold_filter(&p.s, common::EPS);
        let e = erode_antidiagonal(&t, &cfg);
        let d = dilate_antidiagonal(&e, &cfg);
        ensure(common::to_rows(&e) == common::erode_oracle(&common::to_rows(&t)), || format!("trial {trial}: erosion differs from the kernel oracle"))?;
        ensure(common::to_rows(&d) == common::dilate_oracle(&common::to_rows(&e)), || format!("trial {trial}: dilation differs from the kernel oracle"))?;
        ensure(d == morphology_chain(&p.s, &cfg), || format!("trial {trial}: chain differs from its stages"))?;
        ensure(p.noise.iter().all(|&(i, j)| d.get(i, j) == 0.0), || format!("trial {trial}: noise survived"))?;
        if let Some(g) = gap {
            let (gi, gj) = p.stair[g];
            let (a, b) = (p.stair[g - 1], p.stair[g + 1]);
            let bridged = dilate_antidiagonal(&t, &cfg);
            ensure(bridged.get(gi, gj) == t.get(a.0, a.1).max(t.get(b.0, b.1)), || format!("trial {trial}: gap not bridged"))?;
        } else {
            let kept = p.stair.iter().filter(|&&(i, j)| d.get(i, j) != 0.0).count();
            ensure(kept + 2 >= len, || format!("trial {trial}: kept {kept} of {len}"))?;
        }
    }
    Ok(format!("1000 matrices, {noise_total} noise entries removed, 500 gaps bridged by dilation, oracle-exact"))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let ok = (0..100)
        .filter(|&s| {
            let (re, te) = common::ransac_trial(1000 + s);
            re < 0.01 && te < 1.0
        })
        .count();
    ensure(ok >= 95, || format!("{ok}/100 trials recovered"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("{ok}/100 trials within 0.01 rad and 1 px"))
}

// ---- 7: toy training

fn criterion_7() -> Check {
    let start = Instant::now();
    let gen_cfg = GeneratorConfig {
        t_max: 4,
        ..GeneratorConfig::default()
    };
    let mut frags = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..8u64 {
        let img = synthetic_image(360, 320, 1000 + i);
        let g = tearing::generate(&img, i as usize, &gen_cfg, &mut ChaCha8Rng::seed_from_u64(i)).map_err(|e| e.to_string())?;
        let base = frags.len();
        for mut f in g.fragments {
            f.id += base;
            frags.push(f);
        }
        pairs.extend(g.pairs.into_iter().map(|p| (p.id_m + base, p.id_n + base, p)));
    }
    let mc = ModelConfig {
        lr: 0.005,
        match_steps: 300,
        batch_match: 8,
        search_steps: 60,
        batch_search: 64,
        ..ModelConfig::default()
    };
    let inputs: Vec<Rc<nn::FragmentInput>> = frags
        .iter()
        .map(|f| nn::prepare_input(&f.pixels, &f.mask, &f.contour, &mc).map(Rc::new))
        .collect::<fragmenta::Result<_>>()
        .map_err(|e| e.to_string())?;
    let samples: Vec<nn::MatchingSample> = pairs
        .iter()
        .map(|(a, b, p)| nn::MatchingSample {
            m: Rc::clone(&inputs[*a]),
            n: Rc::clone(&inputs[*b]),
            gt: Rc::new(nn::gt_matrix(inputs[*a].m, inputs[*b].m, &p.matches)),
        })
        .collect();
    let all: Vec<&nn::MatchingSample> = samples.iter().collect();
    let mut model = Model::new(mc.clone(), &mut ChaCha8Rng::seed_from_u64(0));
    let loss_init = nn::matching_batch_gradient(&model, &all).0;

    let train_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    nn::train_matching(&mut model, &samples, &mut rng, &mut |_, _| {}).map_err(|e| e.to_string())?;
    let mut positives = vec![Vec::new(); frags.len()];
    for (a, b, _) in &pairs {
        positives[*a].push(*b);
        positives[*b].push(*a);
    }
    nn::train_searching(&mut model, &inputs, &positives, &mut rng, &mut |_, _| {}).map_err(|e| e.to_string())?;
    let train_time = train_start.elapsed();
    let loss_trained = nn::matching_batch_gradient(&model, &all).0;
    let fall = 1.0 - loss_trained / loss_init;

    let refs: Vec<&tearing::FragmentRecord> = frags.iter().collect();
    let index = fragmenta::search::embed_all(&refs, &model).map_err(|e| e.to_string())?;
    let sim = fragmenta::search::cosine_similarity_matrix(&index).map_err(|e| e.to_string())?;
    let ranks: metrics::RankTable = fragmenta::search::rank_table(&index, &sim)
        .into_iter()
        .enumerate()
        .map(|(q, r)| (index.ids[q], r))
        .collect();
    let feats = nn::frozen_features(&model, &inputs);
    let mut evals = Vec::new();
    for (a, b, p) in &pairs {
        let cm = &frags[*a].contour.points[..feats[*a].f_f.rows()];
        let cn = &frags[*b].contour.points[..feats[*b].f_f.rows()];
        let mut rng = ChaCha8Rng::seed_from_u64((*a as u64) << 32 | *b as u64);
        let r = fragmenta::matching::match_pair(&feats[*a].f_f, &feats[*b].f_f, cm, cn, &MatchConfig::default(), &mut rng);
        evals.push(PairEvaluation {
            id_m: *a,
            id_n: *b,
            difficulty: p.difficulty,
            est: r.ok().map(|r| r.transform),
            gt: p.gt_transform,
            matched_n: p.matches.iter().map(|&(_, j)| frags[*b].contour.points[j]).collect(),
            contour_n: frags[*b].contour.points.clone(),
            area_m: frags[*a].area() as f64,
            area_n: frags[*b].area() as f64,
        });
    }
    let report = metrics::stratified_report(&evals, Some(&ranks), metrics::DEFAULT_TAU_RR).map_err(|e| e.to_string())?;
    let rr = |n: &str| report.row(n).and_then(|r| r.rr);
    let (low, med, high) = (rr("Low"), rr("Medium"), rr("High"));
    let all_rr = rr("All").unwrap_or(0.0);
    let recall5 = report.row("All").and_then(|r| r.recall_5).unwrap_or(0.0);
    let detail = format!(
        "{} fragments, {} pairs; loss {loss_init:.1} -> {loss_trained:.1} ({:.0}% fall); RR {all_rr:.3}; Recall@5 {recall5:.3}; RR Low/Medium/High {}/{}/{}; training {:.0}s",
        frags.len(),
        pairs.len(),
        100.0 * fall,
        fmt_opt(low),
        fmt_opt(med),
        fmt_opt(high),
        train_time.as_secs_f64()
    );
    ensure(fall >= 0.5, || format!("loss fell only {:.0}%: {detail}", 100.0 * fall))?;
    ensure(all_rr >= 0.5 && recall5 >= 0.5, || format!("below the floor: {detail}"))?;
    let ordered = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => a >= b,
        _ => true,
    };
    ensure(ordered(low, med) && ordered(med, high) && ordered(low, high), || format!("RR not ordered: {detail}"))?;
    within(start.elapsed(), 1800)?;
    Ok(detail)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {n}: PASS {name} ({secs:.1}s): {detail}");
            true
        }
        Err(why) => {
            println!("criterion {n}: FAIL {name} ({secs:.1}s): {why}");
            false
        }
    }
}

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| only.is_empty() || only.contains(&n);
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let mut ok = true;
    if want(1) {
        ok &= run(1, "kernel oracles", criterion_1);
    }
    if want(2) {
        ok &= run(2, "gradient suite", criterion_2);
    }
    if want(3) {
        ok &= run(3, "generator invariants", || criterion_3(root));
    }
    if want(4) {
        ok &= run(4, "morphology chain", criterion_4);
    }
    if want(5) {
        ok &= run(5, "RANSAC recovery", criterion_5);
    }
    if want(6) {
        ok &= run(6, "oracle end-to-end", || criterion_6(root));
    }
    if want(7) {
        ok &= run(7, "toy training", criterion_7);
    }
    if want(8) {
        ok &= run(8, "metrics and counts", || criterion_8(root));
    }
    if !ok {
        std::process::exit(1);
    }
}

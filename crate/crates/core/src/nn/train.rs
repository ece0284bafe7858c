//! Two-step training: backbone with the focal matching loss, then the
//! searching module with the contrastive loss on frozen backbone features.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::graph::{nce_batch_is_valid, Graph};
use super::model::{backbone_forward, matching_loss, search_forward, FragmentInput, MatchingFeatures, Model};
use super::optim::{Adam, CosineSchedule};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Steps above ten times the initial loss tolerated before aborting.
pub const DIVERGENCE_PATIENCE: usize = 50;

/// One adjacent pair with its binary `M x N` ground-truth matrix.
#[derive(Debug, Clone)]
pub struct MatchingSample {
    pub m: Rc<FragmentInput>,
    pub n: Rc<FragmentInput>,
    pub gt: Rc<Tensor>,
}

/// Builds the ground-truth matrix from matched index pairs.
pub fn gt_matrix(m: usize, n: usize, matches: &[(usize, usize)]) -> Tensor {
    let mut t = Tensor::zeros(&[m, n]);
    for &(i, j) in matches {
        if i < m && j < n {
            t.set2(i, j, 1.0);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
    /// Exponential moving average of `losses` (weight 0.1 on each new step).
    pub ema: Vec<f64>,
    /// Running minimum of `ema`; non-increasing.
    pub smoothed: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl TrainReport {
    fn record(&mut self, loss: f64, lr: f64) {
        let ema = match self.ema.last() {
            None => loss,
            Some(&e) => 0.9 * e + 0.1 * loss,
        };
        self.ema.push(ema);
        let prev = self.smoothed.last().copied().unwrap_or(f64::INFINITY);
        self.smoothed.push(prev.min(ema));
        self.losses.push(loss);
        self.learning_rates.push(lr);
    }
}

/// Backbone and search checksums around step two.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrainReport {
    pub trace: TrainReport,
    pub backbone_checksum_before: u64,
    pub backbone_checksum_after: u64,
}

struct Divergence {
    initial: Option<f64>,
    over: usize,
}

impl Divergence {
    fn check(&mut self, step: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, initial });
        }
        if loss > 10.0 * initial {
            self.over += 1;
            if self.over >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged { step, loss, initial });
            }
        } else {
            self.over = 0;
        }
        Ok(())
    }
}

/// Cycles through shuffled epochs and hands out fixed-size batches.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn add_scaled(acc: &mut [Tensor], grads: &[Tensor], s: f64) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += s * y);
    }
}

/// Mean focal loss of one batch and its parameter gradient.
pub fn matching_batch_gradient(model: &Model, batch: &[&MatchingSample]) -> (f64, Vec<Tensor>) {
    let mut acc: Vec<Tensor> = model.backbone.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut total = 0.0;
    let w = 1.0 / batch.len() as f64;
    for s in batch {
        let mut g = Graph::new();
        let b = model.backbone.bind(&mut g, true);
        let loss = matching_loss(&mut g, &b, &s.m, &s.n, &s.gt, &model.cfg);
        total += g.scalar(loss);
        g.backward(loss);
        add_scaled(&mut acc, &model.backbone.collect_grads(&g, &b), w);
    }
    (total * w, acc)
}

/// Step one: optimizes the backbone and fusion gate on the focal loss.
/// `observer` sees every `(step, loss)` before the divergence check.
pub fn train_matching(
    model: &mut Model,
    samples: &[MatchingSample],
    rng: &mut impl Rng,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("matching training needs at least one pair".into()));
    }
    let cfg = model.cfg.clone();
    let steps = cfg.match_steps;
    let bs = cfg.batch_match.min(samples.len());
    let schedule = CosineSchedule::new(cfg.lr, cfg.lr_floor_ratio, steps);
    let mut adam = Adam::new(model.backbone.values());
    let mut sampler = BatchSampler::new(samples.len());
    let mut report = TrainReport::default();
    let mut div = Divergence { initial: None, over: 0 };
    for step in 0..steps {
        let idx = sampler.next(bs, rng);
        let batch: Vec<&MatchingSample> = idx.iter().map(|&i| &samples[i]).collect();
        let (loss, grads) = matching_batch_gradient(model, &batch);
        let lr = schedule.lr(step);
        report.record(loss, lr);
        observer(step, loss);
        div.check(step, loss)?;
        adam.step(model.backbone.values_mut(), &grads, lr);
        log::debug!("matching step {step}: loss {loss:.6} lr {lr:.3e}");
    }
    Ok(report)
}

/// Frozen backbone features for every fragment.
pub fn frozen_features(model: &Model, inputs: &[Rc<FragmentInput>]) -> Vec<MatchingFeatures> {
    inputs.iter().map(|i| model.matching_features(i)).collect()
}

/// Contrastive loss of one batch of fragments (indices into `features`)
/// and its gradient w.r.t. the searching parameters.
pub fn search_batch_gradient(
    search: &ParamStore,
    model: &Model,
    features: &[MatchingFeatures],
    batch: &[usize],
    positives: &[Vec<usize>],
) -> Result<(f64, Vec<Tensor>)> {
    let local: Vec<Vec<usize>> = batch
        .iter()
        .map(|&a| {
            batch
                .iter()
                .enumerate()
                .filter(|(_, &b)| positives[a].contains(&b))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    nce_batch_is_valid(batch.len(), &local).map_err(Error::InvalidBatch)?;
    let mut g = Graph::new();
    let b = search.bind(&mut g, true);
    let mut rows = Vec::with_capacity(batch.len());
    for &i in batch {
        let fc = g.constant(features[i].f_c.clone());
        let ft = g.constant(features[i].f_t.clone());
        rows.push(search_forward(&mut g, &b, fc, ft, &model.cfg)?);
    }
    let e = g.concat_rows(&rows);
    let z = g.l2_normalize_rows(e);
    let sim = g.matmul_t(z, false, z, true);
    let logits = g.scale(sim, 1.0 / model.cfg.temperature);
    let loss = g.multi_positive_nce(logits, Rc::new(local));
    g.backward(loss);
    Ok((g.scalar(loss), search.collect_grads(&g, &b)))
}

/// Step two: trains the searching module; the backbone is read-only.
pub fn train_searching(
    model: &mut Model,
    inputs: &[Rc<FragmentInput>],
    positives: &[Vec<usize>],
    rng: &mut impl Rng,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<SearchTrainReport> {
    if inputs.len() != positives.len() {
        return Err(Error::InvalidInput("one positive list per fragment required".into()));
    }
    let before = model.backbone.checksum();
    let features = frozen_features(model, inputs);
    let cfg = model.cfg.clone();
    let n = inputs.len();
    let bs = cfg.batch_search.min(n);
    let schedule = CosineSchedule::new(cfg.lr, cfg.lr_floor_ratio, cfg.search_steps);
    let mut search = model.search.clone();
    let mut adam = Adam::new(search.values());
    let mut sampler = BatchSampler::new(n);
    let mut report = TrainReport::default();
    let mut div = Divergence { initial: None, over: 0 };
    for step in 0..cfg.search_steps {
        let mut attempt = 0;
        let (loss, grads) = loop {
            let mut batch = sampler.next(bs, rng);
            batch.sort_unstable();
            batch.dedup();
            match search_batch_gradient(&search, model, &features, &batch, positives) {
                Ok(r) => break r,
                Err(Error::InvalidBatch(msg)) if attempt < 10 && bs < n => {
                    attempt += 1;
                    log::debug!("resampling search batch: {msg}");
                }
                Err(e) => return Err(e),
            }
        };
        let lr = schedule.lr(step);
        report.record(loss, lr);
        observer(step, loss);
        div.check(step, loss)?;
        adam.step(search.values_mut(), &grads, lr);
        log::debug!("searching step {step}: loss {loss:.6} lr {lr:.3e}");
    }
    model.search = search;
    let after = model.backbone.checksum();
    assert_eq!(before, after, "backbone changed while frozen");
    Ok(SearchTrainReport {
        trace: report,
        backbone_checksum_before: before,
        backbone_checksum_after: after,
    })
}

/// Unit-normalized descriptors of each fragment.
pub fn embed_inputs(model: &Model, inputs: &[Rc<FragmentInput>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for input in inputs {
        let f = model.matching_features(input);
        let mut v = model.search_embedding(&f)?;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        out.push(v);
    }
    Ok(out)
}

/// Per-point fused features without building a full pair graph.
pub fn fused_features(model: &Model, input: &FragmentInput) -> Tensor {
    let mut g = Graph::new();
    let b = model.backbone.bind(&mut g, false);
    let v = backbone_forward(&mut g, &b, input, &model.cfg);
    g.value(v.f_f).clone()
}

//! Retrieval and registration metrics with difficulty strata.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hausdorff_distance, normalize_angle, rms_residual, Point2, RigidTransform2D};
use crate::tearing::Difficulty;

/// Ranked ids (self excluded) for every query id.
pub type RankTable = BTreeMap<usize, Vec<usize>>;

/// Default registration tolerance (RMS pixels).
pub const DEFAULT_TAU_RR: f64 = 10.0;
pub const REPORT_KS: [usize; 3] = [5, 10, 20];
pub const REPORT_VERSION: u32 = 1;

fn check_k(k: usize, pairs: &[(usize, usize)]) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth pairs".into()));
    }
    Ok(())
}

fn in_top(ranks: &RankTable, q: usize, t: usize, k: usize) -> bool {
    ranks.get(&q).is_some_and(|r| r.iter().take(k).any(|&x| x == t))
}

/// Fraction of pair directions `(q, t)` whose partner `t` ranks within the
/// top `k` of `q`; each unordered pair counts both directions.
pub fn recall_at_k(ranks: &RankTable, pairs: &[(usize, usize)], k: usize) -> Result<f64> {
    check_k(k, pairs)?;
    let hits: usize = pairs
        .iter()
        .map(|&(a, b)| usize::from(in_top(ranks, a, b, k)) + usize::from(in_top(ranks, b, a, k)))
        .sum();
    Ok(hits as f64 / (2 * pairs.len()) as f64)
}

/// Binary-relevance NDCG averaged over queries with at least one relevant id.
pub fn ndcg_at_k(ranks: &RankTable, pairs: &[(usize, usize)], k: usize) -> Result<f64> {
    check_k(k, pairs)?;
    let mut relevant: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(a, b) in pairs {
        relevant.entry(a).or_default().insert(b);
        relevant.entry(b).or_default().insert(a);
    }
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let mut total = 0.0;
    for (q, rel) in &relevant {
        let dcg: f64 = ranks.get(q).map_or(0.0, |r| {
            r.iter()
                .take(k)
                .enumerate()
                .filter(|(_, id)| rel.contains(id))
                .map(|(p, _)| gain(p + 1))
                .sum()
        });
        let idcg: f64 = (1..=rel.len().min(k)).map(gain).sum();
        total += dcg / idcg;
    }
    Ok(total / relevant.len() as f64)
}

/// Absolute rotation difference wrapped into `[0, pi]`.
pub fn rotation_error(est: &RigidTransform2D, gt: &RigidTransform2D) -> f64 {
    normalize_angle(est.theta - gt.theta).abs()
}

/// Translation error about `pivot` divided by the summed fragment areas.
pub fn normalized_translation_error(
    est: &RigidTransform2D,
    gt: &RigidTransform2D,
    pivot: Point2,
    area_m: f64,
    area_n: f64,
) -> Result<f64> {
    if !(area_m > 0.0 && area_n > 0.0) {
        return Err(Error::InvalidInput("fragment areas must be positive".into()));
    }
    Ok(est.apply(pivot).dist(gt.apply(pivot)) / (area_m + area_n))
}

/// Hausdorff distance between contour n placed by `est` and by `gt`.
pub fn hausdorff_error(est: &RigidTransform2D, gt: &RigidTransform2D, contour_n: &[Point2]) -> Result<f64> {
    hausdorff_distance(&est.apply_all(contour_n), &gt.apply_all(contour_n))
}

/// Whether `est` places the matched points within `tau_rr` RMS of `gt`.
pub fn registration_success(est: Option<&RigidTransform2D>, gt: &RigidTransform2D, matched_n: &[Point2], tau_rr: f64) -> bool {
    est.is_some_and(|t| rms_residual(t, matched_n, &gt.apply_all(matched_n)) < tau_rr)
}

/// Everything needed to score one ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub id_m: usize,
    pub id_n: usize,
    pub difficulty: Difficulty,
    /// `None` when no model was found.
    pub est: Option<RigidTransform2D>,
    pub gt: RigidTransform2D,
    /// Ground-truth matched points of fragment n (local frame).
    pub matched_n: Vec<Point2>,
    pub contour_n: Vec<Point2>,
    pub area_m: f64,
    pub area_n: f64,
}

/// Per-pair registration scores; errors are `None` without a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub success: bool,
    pub hd: Option<f64>,
    pub re: Option<f64>,
    pub nte: Option<f64>,
}

pub fn score_pair(e: &PairEvaluation, tau_rr: f64) -> Result<PairScores> {
    let success = registration_success(e.est.as_ref(), &e.gt, &e.matched_n, tau_rr);
    let Some(est) = e.est.as_ref() else {
        return Ok(PairScores {
            success,
            hd: None,
            re: None,
            nte: None,
        });
    };
    let pivot = crate::geometry::centroid(&e.matched_n)
        .ok_or_else(|| Error::InvalidInput(format!("pair ({}, {}) has no matched points", e.id_m, e.id_n)))?;
    Ok(PairScores {
        success,
        hd: Some(hausdorff_error(est, &e.gt, &e.contour_n)?),
        re: Some(rotation_error(est, &e.gt)),
        nte: Some(normalized_translation_error(est, &e.gt, pivot, e.area_m, e.area_n)?),
    })
}

/// Fraction of pairs registered within `tau_rr`.
pub fn registration_recall(evals: &[PairEvaluation], tau_rr: f64) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::UndefinedMetric("no pairs evaluated".into()));
    }
    let ok = evals
        .iter()
        .filter(|e| registration_success(e.est.as_ref(), &e.gt, &e.matched_n, tau_rr))
        .count();
    Ok(ok as f64 / evals.len() as f64)
}

/// One row of the report: a difficulty stratum or the pooled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub difficulty: String,
    pub pairs: usize,
    /// Pairs for which a transform was estimated.
    pub registered: usize,
    #[serde(rename = "Recall@5")]
    pub recall_5: Option<f64>,
    #[serde(rename = "Recall@10")]
    pub recall_10: Option<f64>,
    #[serde(rename = "Recall@20")]
    pub recall_20: Option<f64>,
    #[serde(rename = "NDCG@5")]
    pub ndcg_5: Option<f64>,
    #[serde(rename = "NDCG@10")]
    pub ndcg_10: Option<f64>,
    #[serde(rename = "NDCG@20")]
    pub ndcg_20: Option<f64>,
    #[serde(rename = "RR")]
    pub rr: Option<f64>,
    #[serde(rename = "HD")]
    pub hd: Option<f64>,
    #[serde(rename = "RE")]
    pub re: Option<f64>,
    #[serde(rename = "NTE")]
    pub nte: Option<f64>,
}

/// Rows High, Medium, Low, All.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub tau_rr: f64,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.difficulty == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("difficulty,pairs,registered,Recall@5,Recall@10,Recall@20,NDCG@5,NDCG@10,NDCG@20,RR,HD,RE,NTE\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for r in &self.rows {
            let vals = [r.recall_5, r.recall_10, r.recall_20, r.ndcg_5, r.ndcg_10, r.ndcg_20, r.rr, r.hd, r.re, r.nte];
            let cells: Vec<String> = vals.iter().map(|&v| cell(v)).collect();
            out.push_str(&format!("{},{},{},{}\n", r.difficulty, r.pairs, r.registered, cells.join(",")));
        }
        out
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn row(name: &str, evals: &[&PairEvaluation], ranks: Option<&RankTable>, tau_rr: f64) -> Result<ReportRow> {
    let pairs: Vec<(usize, usize)> = evals.iter().map(|e| (e.id_m, e.id_n)).collect();
    let retrieval = |f: fn(&RankTable, &[(usize, usize)], usize) -> Result<f64>, k: usize| -> Option<f64> {
        ranks.and_then(|r| f(r, &pairs, k).ok())
    };
    let scores: Vec<PairScores> = evals.iter().map(|e| score_pair(e, tau_rr)).collect::<Result<_>>()?;
    let n = scores.len();
    Ok(ReportRow {
        difficulty: name.to_string(),
        pairs: n,
        registered: scores.iter().filter(|s| s.re.is_some()).count(),
        recall_5: retrieval(recall_at_k, 5),
        recall_10: retrieval(recall_at_k, 10),
        recall_20: retrieval(recall_at_k, 20),
        ndcg_5: retrieval(ndcg_at_k, 5),
        ndcg_10: retrieval(ndcg_at_k, 10),
        ndcg_20: retrieval(ndcg_at_k, 20),
        rr: (n > 0).then(|| scores.iter().filter(|s| s.success).count() as f64 / n as f64),
        hd: mean(scores.iter().filter_map(|s| s.hd)),
        re: mean(scores.iter().filter_map(|s| s.re)),
        nte: mean(scores.iter().filter_map(|s| s.nte)),
    })
}

/// Metrics per difficulty and pooled over all pairs. Retrieval columns are
/// empty without a rank table; registration columns average over pairs
/// with an estimated transform.
pub fn stratified_report(evals: &[PairEvaluation], ranks: Option<&RankTable>, tau_rr: f64) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(4);
    for d in Difficulty::ALL {
        let sub: Vec<&PairEvaluation> = evals.iter().filter(|e| e.difficulty == d).collect();
        rows.push(row(d.name(), &sub, ranks, tau_rr)?);
    }
    let all: Vec<&PairEvaluation> = evals.iter().collect();
    rows.push(row("All", &all, ranks, tau_rr)?);
    Ok(EvalReport {
        format_version: REPORT_VERSION,
        tau_rr,
        rows,
    })
}

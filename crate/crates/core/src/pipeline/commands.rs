//! The five pipeline stages: generate, train, search, match, evaluate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::config::{stream, sub_seed, RunConfig};
use super::dataset::{
    assign_splits, encode_png, fragment_rgba, Dataset, DatasetManifest, FragmentEntry, ImageEntry, PairEntry, Split,
    SplitCounts, FORMAT_VERSION, FRAGMENT_DIR, MANIFEST_FILE,
};
use super::render::render_overlay;
use crate::codec::{read_cache, write_cache, EncodedCache};
use crate::error::{Error, Result};
use crate::fsio::{atomic_write, read_json, write_json};
use crate::geometry::{rigid_fit, Point2, RigidTransform2D};
use crate::matching::{match_pair, Correspondence};
use crate::metrics::{stratified_report, EvalReport, PairEvaluation, RankTable};
use crate::nn::{self, CosineSchedule, FragmentInput, MatchingSample, Model, ModelConfig, ParamStore, Tensor};
use crate::search::{cosine_similarity_matrix, embed_all, rank_table, retrieve_candidate_pairs};
use crate::tearing::{self, FragmentRecord};

/// Correspondences kept per pair in the match report.
pub const MAX_REPORTED_CORRESPONDENCES: usize = 2000;
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Fixed artifact locations inside the run directory.
pub mod layout {
    pub const BACKBONE: &str = "checkpoints/backbone.ckpt";
    pub const SEARCH: &str = "checkpoints/search.ckpt";
    pub const MODEL_CONFIG: &str = "checkpoints/model_config.json";
    pub const MATCHING_TRACE: &str = "traces/matching.csv";
    pub const SEARCHING_TRACE: &str = "traces/searching.csv";
    pub const INDEX: &str = "search/index.fsix";
    pub const RANK_TABLE: &str = "search/rank_table.json";
    pub const CANDIDATES: &str = "search/candidates.json";
    pub const MATCH_REPORT: &str = "match/match_report.json";
    pub const REPORT: &str = "eval/report.json";
    pub const REPORT_CSV: &str = "eval/report.csv";
    pub const OVERLAYS: &str = "eval/overlays";
}

fn split_label(split: Option<Split>) -> String {
    split.map_or_else(|| "all".to_string(), |s| s.name().to_string())
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {version}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub images: usize,
    pub skipped: usize,
    pub fragments: usize,
    pub pairs: usize,
    pub counts: BTreeMap<Split, SplitCounts>,
}

/// Named source images in a stable order, plus the number skipped.
fn source_images(cfg: &RunConfig) -> Result<(Vec<(String, RgbImage)>, usize)> {
    if let Some(s) = &cfg.synthetic {
        let images = (0..s.count)
            .map(|i| {
                let seed = sub_seed(cfg.seed, &format!("synthetic/{i}"));
                (format!("synthetic-{i:04}"), crate::synth::synthetic_image(s.width, s.height, seed))
            })
            .collect();
        return Ok((images, 0));
    }
    let dir = cfg
        .paths
        .images
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs paths.images or a synthetic section".into()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    let mut skipped = 0;
    for f in files {
        match image::open(&f) {
            Ok(img) => out.push((f.file_name().unwrap().to_string_lossy().into_owned(), img.to_rgb8())),
            Err(e) => {
                log::warn!("skipping unreadable image {}: {e}", f.display());
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

/// Tears every source image, assigns splits by image, and writes the
/// fragment rasters, manifest, and config snapshot.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let (sources, mut skipped) = source_images(cfg)?;
    let mut generator = cfg.generator.clone();
    generator.seed = cfg.seed;
    let root = &cfg.paths.dataset;
    let mut torn = Vec::new();
    for (k, (name, img)) in sources.iter().enumerate() {
        let mut rng = stream(cfg.seed, &format!("generation/{name}"));
        match tearing::generate(img, torn.len(), &generator, &mut rng) {
            Ok(out) => torn.push((k, out)),
            Err(e) => {
                log::warn!("skipping image {name}: {e}");
                skipped += 1;
            }
        }
    }
    if torn.is_empty() {
        return Err(Error::Data("no usable source images".into()));
    }
    let splits = assign_splits(torn.len(), &mut stream(cfg.seed, "split"));
    let mut images = Vec::new();
    let mut fragments = Vec::new();
    let mut pairs = Vec::new();
    for (image_id, ((k, out), &split)) in torn.iter().zip(&splits).enumerate() {
        let (name, img) = &sources[*k];
        images.push(ImageEntry {
            id: image_id,
            name: name.clone(),
            width: img.width(),
            height: img.height(),
            split,
        });
        let base = fragments.len();
        for f in &out.fragments {
            let id = base + f.id;
            let file = format!("{FRAGMENT_DIR}/{id:05}.png");
            atomic_write(&root.join(&file), &encode_png(&fragment_rgba(f))?)?;
            fragments.push(FragmentEntry {
                id,
                source_image: image_id,
                file,
                width: f.width(),
                height: f.height(),
                offset: [f.offset.x, f.offset.y],
                area: f.area(),
                contour: f.contour.points.iter().flat_map(|p| [p.x, p.y]).collect(),
                split,
            });
        }
        pairs.extend(out.pairs.iter().map(|p| PairEntry::from_ground_truth(p, base, split)));
    }
    let names: Vec<&str> = images.iter().map(|i| i.name.as_str()).collect();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        corpus_id: format!("{:016x}", sub_seed(cfg.seed, &names.join("\n"))),
        seed: cfg.seed,
        generator,
        images,
        fragments,
        pairs,
    };
    manifest.validate()?;
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    write_json(&root.join("config.json"), cfg)?;
    Ok(GenerateSummary {
        images: manifest.images.len(),
        skipped,
        fragments: manifest.fragments.len(),
        pairs: manifest.pairs.len(),
        counts: manifest.counts(),
    })
}

/// Encoded inputs, read from the dataset's encoding cache when present.
pub fn prepare_inputs(ds: &Dataset, fragments: &[FragmentRecord], cfg: &ModelConfig) -> Result<Vec<Rc<FragmentInput>>> {
    let dir = ds.root.join(format!(
        "cache/p{}-l{}-{:?}",
        cfg.patch_size, cfg.l_max_match, cfg.contour_mode
    ));
    fragments
        .iter()
        .map(|f| {
            let (cp, tp) = (dir.join(format!("{:05}.contour.frgc", f.id)), dir.join(format!("{:05}.texture.frgc", f.id)));
            if cp.exists() && tp.exists() {
                let (c, t) = (read_cache(&cp)?, read_cache(&tp)?);
                if c.mode == cfg.contour_mode {
                    if let Ok(input) = nn::input_from_patches(c.values, t.values, cfg) {
                        return Ok(Rc::new(input));
                    }
                }
                log::warn!("stale encoding cache for fragment {}; re-encoding", f.id);
            }
            let input = nn::prepare_input(&f.pixels, &f.mask, &f.contour, cfg)?;
            let entry = |values: &Tensor| EncodedCache {
                mode: cfg.contour_mode,
                values: values.clone(),
            };
            write_cache(&cp, &entry(&input.contour_patches))?;
            write_cache(&tp, &entry(&input.texture_patches))?;
            Ok(Rc::new(input))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub fragments: usize,
    pub pairs: usize,
    pub matching_first_loss: f64,
    pub matching_last_ema: f64,
    pub searching_first_loss: f64,
    pub searching_last_ema: f64,
    pub backbone_checksum: u64,
}

/// Writes `step,loss,ema,smoothed,lr`; the same layout serves partial traces.
fn write_trace(path: &Path, losses: &[f64], schedule: &CosineSchedule) -> Result<()> {
    let mut out = String::from("step,loss,ema,smoothed,lr\n");
    let (mut ema, mut smoothed) = (f64::NAN, f64::INFINITY);
    for (step, &l) in losses.iter().enumerate() {
        ema = if step == 0 { l } else { 0.9 * ema + 0.1 * l };
        smoothed = smoothed.min(ema);
        out.push_str(&format!("{step},{l},{ema},{smoothed},{}\n", schedule.lr(step)));
    }
    atomic_write(path, out.as_bytes())
}

/// Ground-truth samples of `pairs`, with fragment ids mapped to positions
/// in `inputs` by `pos`.
pub fn matching_samples(
    pairs: &[&PairEntry],
    inputs: &[Rc<FragmentInput>],
    pos: &HashMap<usize, usize>,
) -> Vec<MatchingSample> {
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (pos[&p.id_m], pos[&p.id_n]);
            let matches: Vec<(usize, usize)> = p.matches.iter().map(|&[i, j]| (i, j)).collect();
            MatchingSample {
                m: Rc::clone(&inputs[a]),
                n: Rc::clone(&inputs[b]),
                gt: Rc::new(nn::gt_matrix(inputs[a].m, inputs[b].m, &matches)),
            }
        })
        .collect()
}

/// Two-step training on the train split; writes both checkpoints and the
/// loss traces. A divergence still leaves its partial trace on disk.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let frags = ds.load_fragments(Some(Split::Train))?;
    let pairs = ds.manifest.pairs_in(Some(Split::Train));
    if frags.is_empty() || pairs.is_empty() {
        return Err(Error::Data("the train split has no fragments or no pairs".into()));
    }
    let run = &cfg.paths.run;
    let mc = &cfg.model;
    let inputs = prepare_inputs(&ds, &frags, mc)?;
    let pos: HashMap<usize, usize> = frags.iter().enumerate().map(|(k, f)| (f.id, k)).collect();
    let samples = matching_samples(&pairs, &inputs, &pos);
    let mut rng = stream(cfg.seed, "training");
    let mut model = Model::new(mc.clone(), &mut rng);

    let mut losses = Vec::new();
    let result = nn::train_matching(&mut model, &samples, &mut rng, &mut |_, l| losses.push(l));
    let schedule = CosineSchedule::new(mc.lr, mc.lr_floor_ratio, mc.match_steps);
    write_trace(&run.join(layout::MATCHING_TRACE), &losses, &schedule)?;
    let matching = result?;
    model.backbone.save(&run.join(layout::BACKBONE))?;
    write_json(&run.join(layout::MODEL_CONFIG), mc)?;

    let mut positives = vec![Vec::new(); frags.len()];
    for p in &pairs {
        let (a, b) = (pos[&p.id_m], pos[&p.id_n]);
        positives[a].push(b);
        positives[b].push(a);
    }
    let mut losses = Vec::new();
    let result = nn::train_searching(&mut model, &inputs, &positives, &mut rng, &mut |_, l| losses.push(l));
    let schedule = CosineSchedule::new(mc.lr, mc.lr_floor_ratio, mc.search_steps);
    write_trace(&run.join(layout::SEARCHING_TRACE), &losses, &schedule)?;
    let searching = result?;
    model.search.save(&run.join(layout::SEARCH))?;
    Ok(TrainSummary {
        fragments: frags.len(),
        pairs: pairs.len(),
        matching_first_loss: matching.losses[0],
        matching_last_ema: *matching.ema.last().unwrap(),
        searching_first_loss: searching.trace.losses.first().copied().unwrap_or(f64::NAN),
        searching_last_ema: searching.trace.ema.last().copied().unwrap_or(f64::NAN),
        backbone_checksum: searching.backbone_checksum_after,
    })
}

/// Restores the trained model; the architecture comes from the checkpoint.
pub fn load_model(run: &Path) -> Result<Model> {
    let cfg_path = run.join(layout::MODEL_CONFIG);
    if !cfg_path.exists() {
        return Err(Error::Data(format!("no trained model under {}", run.display())));
    }
    let mc: ModelConfig = read_json(&cfg_path)?;
    mc.validate()?;
    let mut model = Model::new(mc, &mut stream(0, "checkpoint-shapes"));
    model.backbone = ParamStore::load_matching(&run.join(layout::BACKBONE), &model.backbone)?;
    model.search = ParamStore::load_matching(&run.join(layout::SEARCH), &model.search)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTableFile {
    pub format_version: u32,
    pub split: String,
    pub ranks: RankTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesFile {
    pub format_version: u32,
    pub split: String,
    pub top_k: usize,
    pub pairs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSummary {
    pub fragments: usize,
    pub candidates: usize,
}

/// Embeds the split, ranks every fragment against the rest, and writes the
/// index, rank table, and top-k candidate pairs.
pub fn search(cfg: &RunConfig, split: Option<Split>) -> Result<SearchSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let model = load_model(&cfg.paths.run)?;
    let frags = ds.load_fragments(split)?;
    let refs: Vec<&FragmentRecord> = frags.iter().collect();
    let index = embed_all(&refs, &model)?;
    let sim = cosine_similarity_matrix(&index)?;
    let ranks: RankTable = rank_table(&index, &sim)
        .into_iter()
        .enumerate()
        .map(|(q, r)| (index.ids[q], r))
        .collect();
    let top_k = cfg.top_k.min(index.len().saturating_sub(1)).max(1);
    let candidates = if index.len() < 2 {
        BTreeSet::new()
    } else {
        retrieve_candidate_pairs(&index, &sim, top_k)?
    };
    let run = &cfg.paths.run;
    index.write(&run.join(layout::INDEX))?;
    write_json(
        &run.join(layout::RANK_TABLE),
        &RankTableFile {
            format_version: FORMAT_VERSION,
            split: split_label(split),
            ranks,
        },
    )?;
    write_json(
        &run.join(layout::CANDIDATES),
        &CandidatesFile {
            format_version: FORMAT_VERSION,
            split: split_label(split),
            top_k: cfg.top_k,
            pairs: candidates.iter().map(|&(a, b)| [a, b]).collect(),
        },
    )?;
    Ok(SearchSummary {
        fragments: index.len(),
        candidates: candidates.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Gt,
    Candidates,
    All,
}

impl std::str::FromStr for PairSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gt" => Ok(PairSource::Gt),
            "candidates" => Ok(PairSource::Candidates),
            "all" => Ok(PairSource::All),
            _ => Err(format!("unknown pair source {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatch {
    pub id_m: usize,
    pub id_n: usize,
    /// Maps fragment-n local coordinates onto fragment-m local coordinates;
    /// absent when no model was found.
    pub transform: Option<RigidTransform2D>,
    pub error: Option<String>,
    pub inlier_count: usize,
    pub match_score: f64,
    pub correspondence_count: usize,
    /// Highest-scoring correspondences, at most [`MAX_REPORTED_CORRESPONDENCES`]
    /// unless the run reports all of them.
    pub correspondences: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub format_version: u32,
    pub split: String,
    pub pairs_source: PairSource,
    /// Ground-truth correspondences replaced the learned ones.
    pub oracle: bool,
    pub results: Vec<PairMatch>,
}

impl MatchReport {
    pub fn read(path: &Path) -> Result<Self> {
        let r: MatchReport = read_json(path)?;
        check_version(path, r.format_version)?;
        Ok(r)
    }
}

fn read_candidates(path: &Path, split: Option<Split>) -> Result<Vec<(usize, usize)>> {
    if !path.exists() {
        return Err(Error::Data(format!("no candidates at {}; run search first", path.display())));
    }
    let c: CandidatesFile = read_json(path)?;
    check_version(path, c.format_version)?;
    if c.split != split_label(split) {
        return Err(Error::Data(format!(
            "candidates were searched on split {}, not {}",
            c.split,
            split_label(split)
        )));
    }
    Ok(c.pairs.iter().map(|&[a, b]| (a, b)).collect())
}

fn failed(id_m: usize, id_n: usize, error: String) -> PairMatch {
    PairMatch {
        id_m,
        id_n,
        transform: None,
        error: Some(error),
        inlier_count: 0,
        match_score: 0.0,
        correspondence_count: 0,
        correspondences: Vec::new(),
    }
}

/// Rigid fit of the ground-truth correspondences, standing in for the
/// learned matcher.
fn oracle_match(
    gt: Option<&PairEntry>,
    id_m: usize,
    id_n: usize,
    contours: &HashMap<usize, Vec<Point2>>,
    cap: usize,
) -> PairMatch {
    let Some(p) = gt else {
        return failed(id_m, id_n, "no ground-truth correspondences".into());
    };
    let (cm, cn) = (&contours[&p.id_m], &contours[&p.id_n]);
    let src: Vec<Point2> = p.matches.iter().map(|&[_, j]| cn[j]).collect();
    let dst: Vec<Point2> = p.matches.iter().map(|&[i, _]| cm[i]).collect();
    match rigid_fit(&src, &dst) {
        Ok(t) => {
            let t = if (p.id_m, p.id_n) == (id_m, id_n) { t } else { t.inverse() };
            let corr: Vec<Correspondence> = p
                .matches
                .iter()
                .map(|&[i, j]| if p.id_m == id_m { (i, j) } else { (j, i) })
                .map(|(i, j)| Correspondence { i, j, score: 1.0 })
                .collect();
            PairMatch {
                id_m,
                id_n,
                transform: Some(t),
                error: None,
                inlier_count: corr.len(),
                match_score: corr.len() as f64,
                correspondence_count: corr.len(),
                correspondences: corr.into_iter().take(cap).collect(),
            }
        }
        Err(e) => failed(id_m, id_n, e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSummary {
    pub pairs: usize,
    pub registered: usize,
}

/// Matches every pair from `source` within the split. Per-pair failures
/// are recorded in the report and never abort the run.
pub fn run_match(cfg: &RunConfig, source: PairSource, split: Option<Split>, oracle: bool) -> Result<MatchSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let entries = ds.manifest.fragments_in(split);
    let in_split: BTreeSet<usize> = entries.iter().map(|f| f.id).collect();
    let gt: HashMap<(usize, usize), &PairEntry> = ds
        .manifest
        .pairs_in(split)
        .into_iter()
        .flat_map(|p| [((p.id_m, p.id_n), p), ((p.id_n, p.id_m), p)])
        .collect();
    let pairs: Vec<(usize, usize)> = match source {
        PairSource::Gt => ds.manifest.pairs_in(split).iter().map(|p| (p.id_m, p.id_n)).collect(),
        PairSource::Candidates => read_candidates(&cfg.paths.run.join(layout::CANDIDATES), split)?,
        PairSource::All => {
            let ids: Vec<usize> = in_split.iter().copied().collect();
            (0..ids.len())
                .flat_map(|a| (a + 1..ids.len()).map(move |b| (a, b)))
                .map(|(a, b)| (ids[a], ids[b]))
                .collect()
        }
    };
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| !in_split.contains(a) || !in_split.contains(b)) {
        return Err(Error::Data(format!("pair ({a}, {b}) is not inside split {}", split_label(split))));
    }
    let contours: HashMap<usize, Vec<Point2>> = entries.iter().map(|f| (f.id, f.contour().points)).collect();
    let model = if oracle { None } else { Some(load_model(&cfg.paths.run)?) };
    let mut features: HashMap<usize, Tensor> = HashMap::new();
    let mut results = Vec::with_capacity(pairs.len());
    let cap = if cfg.report_all_correspondences { usize::MAX } else { MAX_REPORTED_CORRESPONDENCES };
    for &(id_m, id_n) in &pairs {
        let Some(model) = &model else {
            results.push(oracle_match(gt.get(&(id_m, id_n)).copied(), id_m, id_n, &contours, cap));
            continue;
        };
        for id in [id_m, id_n] {
            if !features.contains_key(&id) {
                let f = ds.load_fragment(id)?;
                let input = nn::prepare_input(&f.pixels, &f.mask, &f.contour, &model.cfg)?;
                features.insert(id, nn::fused_features(model, &input));
            }
        }
        let (fm, fnn) = (&features[&id_m], &features[&id_n]);
        // inputs keep the first l_max_match contour points
        let cm = &contours[&id_m][..fm.rows()];
        let cn = &contours[&id_n][..fnn.rows()];
        let mut rng = stream(cfg.seed, &format!("ransac/{id_m}/{id_n}"));
        results.push(match match_pair(fm, fnn, cm, cn, &cfg.matching, &mut rng) {
            Ok(r) => PairMatch {
                id_m,
                id_n,
                transform: Some(r.transform),
                error: None,
                inlier_count: r.inlier_count,
                match_score: r.match_score,
                correspondence_count: r.correspondences.len(),
                correspondences: r.correspondences.into_iter().take(cap).collect(),
            },
            Err(e) => failed(id_m, id_n, e.to_string()),
        });
    }
    let registered = results.iter().filter(|r| r.transform.is_some()).count();
    let report = MatchReport {
        format_version: FORMAT_VERSION,
        split: split_label(split),
        pairs_source: source,
        oracle,
        results,
    };
    write_json(&cfg.paths.run.join(layout::MATCH_REPORT), &report)?;
    Ok(MatchSummary {
        pairs: pairs.len(),
        registered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub format_version: u32,
    pub split: String,
    pub pairs_source: PairSource,
    pub oracle: bool,
    /// Fragments and pairs per split of the whole dataset.
    pub dataset: BTreeMap<Split, SplitCounts>,
    pub report: EvalReport,
    pub overlays: Vec<String>,
}

fn id_diff(label: &str, expected: &BTreeSet<usize>, found: &BTreeSet<usize>) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let missing: Vec<usize> = expected.difference(found).take(10).copied().collect();
    let extra: Vec<usize> = found.difference(expected).take(10).copied().collect();
    Err(Error::Data(format!(
        "{label} disagrees with the manifest: {} missing (first {missing:?}), {} unexpected (first {extra:?})",
        expected.difference(found).count(),
        found.difference(expected).count()
    )))
}

/// Scores the match report (and the rank table, when present) against the
/// ground truth of the split; writes the report and sampled SVG overlays.
pub fn evaluate(cfg: &RunConfig, split: Option<Split>) -> Result<EvalSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let run = &cfg.paths.run;
    let report_path = run.join(layout::MATCH_REPORT);
    if !report_path.exists() {
        return Err(Error::Data(format!("no match report at {}; run match first", report_path.display())));
    }
    let matches = MatchReport::read(&report_path)?;
    if matches.split != split_label(split) {
        return Err(Error::Data(format!(
            "match report covers split {}, not {}",
            matches.split,
            split_label(split)
        )));
    }
    let entries = ds.manifest.fragments_in(split);
    let in_split: BTreeSet<usize> = entries.iter().map(|f| f.id).collect();
    let reported: BTreeSet<usize> = matches.results.iter().flat_map(|r| [r.id_m, r.id_n]).collect();
    id_diff("match report ids", &in_split, &in_split.union(&reported).copied().collect())?;

    let rank_path = run.join(layout::RANK_TABLE);
    let ranks = if rank_path.exists() {
        let t: RankTableFile = read_json(&rank_path)?;
        check_version(&rank_path, t.format_version)?;
        id_diff("rank table", &in_split, &t.ranks.keys().copied().collect())?;
        Some(t.ranks)
    } else {
        log::info!("no rank table; retrieval columns stay empty");
        None
    };

    let by_pair: HashMap<(usize, usize), &PairMatch> = matches.results.iter().map(|r| ((r.id_m, r.id_n), r)).collect();
    let estimate = |m: usize, n: usize| -> Option<RigidTransform2D> {
        if let Some(r) = by_pair.get(&(m, n)) {
            return r.transform;
        }
        by_pair.get(&(n, m)).and_then(|r| r.transform).map(|t| t.inverse())
    };
    let gt_pairs = ds.manifest.pairs_in(split);
    let evals: Vec<PairEvaluation> = gt_pairs
        .iter()
        .map(|p| {
            let (fm, fnn) = (&ds.manifest.fragments[p.id_m], &ds.manifest.fragments[p.id_n]);
            let contour_n = fnn.contour().points;
            PairEvaluation {
                id_m: p.id_m,
                id_n: p.id_n,
                difficulty: p.difficulty,
                est: estimate(p.id_m, p.id_n),
                gt: p.transform,
                matched_n: p.matches.iter().map(|&[_, j]| contour_n[j]).collect(),
                contour_n,
                area_m: fm.area as f64,
                area_n: fnn.area as f64,
            }
        })
        .collect();
    let report = stratified_report(&evals, ranks.as_ref(), cfg.tau_rr)?;
    let overlays = render_samples(cfg, &ds.manifest, &gt_pairs, &evals, &by_pair)?;
    let summary = EvalSummary {
        format_version: FORMAT_VERSION,
        split: split_label(split),
        pairs_source: matches.pairs_source,
        oracle: matches.oracle,
        dataset: ds.manifest.counts(),
        report,
        overlays,
    };
    write_json(&run.join(layout::REPORT), &summary)?;
    atomic_write(&run.join(layout::REPORT_CSV), summary.report.to_csv().as_bytes())?;
    Ok(summary)
}

/// Renders `cfg.render_samples` seeded pairs; previous overlays are removed.
fn render_samples(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    gt_pairs: &[&PairEntry],
    evals: &[PairEvaluation],
    by_pair: &HashMap<(usize, usize), &PairMatch>,
) -> Result<Vec<String>> {
    let dir = cfg.paths.run.join(layout::OVERLAYS);
    if dir.exists() {
        for e in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if name.starts_with("pair_") && name.ends_with(".svg") {
                std::fs::remove_file(e.path()).map_err(|err| Error::io(e.path(), err))?;
            }
        }
    }
    let n = cfg.render_samples.min(evals.len());
    if n < cfg.render_samples {
        log::warn!("only {n} pairs available for {} requested overlays", cfg.render_samples);
    }
    let mut picks = rand::seq::index::sample(&mut stream(cfg.seed, "render"), evals.len(), n).into_vec();
    picks.sort_unstable();
    let mut names = Vec::with_capacity(n);
    for k in picks {
        let (p, e) = (gt_pairs[k], &evals[k]);
        let corr: Vec<(usize, usize)> = match (by_pair.get(&(p.id_m, p.id_n)), by_pair.get(&(p.id_n, p.id_m))) {
            (Some(r), _) => r.correspondences.iter().map(|c| (c.i, c.j)).collect(),
            (None, Some(r)) => r.correspondences.iter().map(|c| (c.j, c.i)).collect(),
            _ => Vec::new(),
        };
        let svg = render_overlay(
            &manifest.fragments[p.id_m].contour().points,
            &e.contour_n,
            &e.gt,
            e.est.as_ref(),
            &corr,
            &format!("fragments {} and {} ({})", p.id_m, p.id_n, p.difficulty.name()),
        );
        let name = format!("pair_{:05}_{:05}.svg", p.id_m, p.id_n);
        atomic_write(&dir.join(&name), svg.as_bytes())?;
        names.push(name);
    }
    Ok(names)
}

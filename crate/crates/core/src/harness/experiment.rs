use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backend::{load_network, neural_features, Retriever};
use super::config::{derive_seed, Attack, ExperimentConfig, QueryMode, Transform};
use super::dataset::{load_dataset, Dataset, QuerySpec};
use super::synth::{render_collection, write_collection, SynthImage, SynthSpec};
use crate::evalmetrics::{average_precision, mean_average_precision, ssim, Judgments};
use crate::imagecore::{add_gaussian_noise, calibrate_sigma, crop, crop_box, resize, round_trip_8bit, Image};
use crate::localfeat::{detect_sift, inject_keypoints, recover_color, remove_keypoints_smoothing};
use crate::neuralnet::{NetworkWeights, WorkingSize};
use crate::pire::{pire, FinalizeMode};
use crate::{par, Error, Result};

const STREAM_QUERY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INJECT: u64 = 3;
const STREAM_LEAK: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub image_id: String,
    pub ap: f64,
    /// SSIM of the quantised modified query against the unmodified one.
    pub ssim: f64,
    /// Attack-specific detail such as the calibrated noise sigma.
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub rows: Vec<QueryResult>,
    pub map: f64,
    pub mean_ssim: f64,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    /// Config, dataset and per-query numbers, ignoring wall-clock time.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        self.config == other.config
            && self.dataset == other.dataset
            && self.rows == other.rows
            && self.map.to_bits() == other.map.to_bits()
            && self.mean_ssim.to_bits() == other.mean_ssim.to_bits()
    }
}

/// The query image before modification: the box crop in BB mode.
pub fn query_base(ds: &Dataset, q: &QuerySpec, mode: QueryMode) -> Result<Image> {
    let img = ds.image(&q.image_id)?;
    match (mode, q.bbox) {
        (QueryMode::Bb, Some(b)) => crop_box(img, b.x1, b.y1, b.x2, b.y2),
        _ => Ok(img.clone()),
    }
}

pub fn apply_transform(img: &Image, t: &Transform) -> Result<Image> {
    match *t {
        Transform::None => Ok(img.clone()),
        Transform::Resize { percent } => resize(img, percent),
        Transform::Crop { percent } => crop(img, percent),
    }
}

/// Runs PIRE through the working-size wrapper.
pub fn pire_attack(
    net: &NetworkWeights,
    cfg: &ExperimentConfig,
    img: &Image,
    iterations: usize,
    finalize: FinalizeMode,
    seed: u64,
) -> Result<Image> {
    let mut pc = cfg.pire.to_config(seed, finalize);
    pc.iterations = iterations;
    Ok(pire(img, &WorkingSize::new(net, cfg.network.working_side), &pc)?.adversarial)
}

/// Applies the configured attack; returns the modified image and a note.
pub fn apply_attack(net: &NetworkWeights, cfg: &ExperimentConfig, img: &Image, index: u64) -> Result<(Image, String)> {
    let seed = derive_seed(cfg.seed, STREAM_QUERY, index);
    match cfg.attack {
        Attack::None => Ok((img.clone(), String::new())),
        Attack::Pire | Attack::PireRefined => {
            let mode = if cfg.attack == Attack::Pire { FinalizeMode::OriginalX10 } else { FinalizeMode::Refined };
            Ok((pire_attack(net, cfg, img, cfg.pire.iterations, mode, seed)?, String::new()))
        }
        Attack::Ls | Attack::Inject | Attack::LsInject => {
            let k = &cfg.kri;
            let mut gray = img.to_grayscale();
            let mut note = Vec::new();
            if matches!(cfg.attack, Attack::Ls | Attack::LsInject) {
                let kps = match detect_sift(&gray, &k.sift) {
                    Err(Error::UndersizedInput(_)) => Vec::new(),
                    other => other?,
                };
                note.push(format!("smoothed={}", kps.len()));
                gray = remove_keypoints_smoothing(&gray, &kps, k.smooth_sigma)?;
            }
            if matches!(cfg.attack, Attack::Inject | Attack::LsInject) {
                let inj = inject_keypoints(&gray, k.inject_count, derive_seed(cfg.seed, STREAM_INJECT, index))?;
                note.push(format!("injected={}/{}", inj.placed, inj.requested));
                gray = inj.image;
            }
            let rec = recover_color(img, &gray)?;
            note.push(format!("clipped={}", rec.clipped));
            Ok((rec.image, note.join(" ")))
        }
        Attack::Gaussian => {
            let g = &cfg.gaussian;
            let nseed = derive_seed(cfg.seed, STREAM_NOISE, index);
            let sigma = match (g.sigma, g.target_ssim) {
                (Some(s), _) => s,
                (None, Some(target)) => {
                    calibrate_sigma(target, g.tolerance, |s| ssim(img, &round_trip_8bit(&add_gaussian_noise(img, s, nseed)?)))?
                        .sigma
                }
                (None, None) => return Err(Error::Config("gaussian attack needs sigma or target_ssim".into())),
            };
            Ok((add_gaussian_noise(img, sigma, nseed)?, format!("sigma={sigma:.6}")))
        }
    }
}

/// Modified query as retrieval sees it: attack, transform, 8-bit round trip.
/// The SSIM compares the quantised attacked image with the unmodified query
/// before the transform, so it measures the attack alone.
pub fn prepare_query(
    net: &NetworkWeights,
    cfg: &ExperimentConfig,
    base: &Image,
    index: u64,
) -> Result<(Image, f64, String)> {
    finish_query(cfg, base, apply_attack(net, cfg, base, index)?)
}

fn finish_query(cfg: &ExperimentConfig, base: &Image, attacked: (Image, String)) -> Result<(Image, f64, String)> {
    let (attacked, note) = attacked;
    let saved = round_trip_8bit(&attacked);
    let quality = ssim(base, &saved)?;
    let final_q = match cfg.transform {
        Transform::None => saved,
        ref t => round_trip_8bit(&apply_transform(&attacked, t)?),
    };
    Ok((final_q, quality, note))
}

/// Attacked queries keyed by everything that determines them, so several
/// experiments over one dataset can share expensive PIRE runs.
#[derive(Debug, Default)]
pub struct AttackCache {
    entries: Mutex<HashMap<String, (Image, String)>>,
}

impl AttackCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(cfg: &ExperimentConfig, index: u64) -> Result<String> {
        let relevant = (
            cfg.attack,
            cfg.queries,
            &cfg.pire,
            &cfg.network,
            &cfg.kri,
            &cfg.gaussian,
            cfg.seed,
            index,
        );
        Ok(serde_json::to_string(&relevant)?)
    }

    fn get_or_run(
        &self,
        net: &NetworkWeights,
        cfg: &ExperimentConfig,
        base: &Image,
        index: u64,
    ) -> Result<(Image, String)> {
        let key = Self::key(cfg, index)?;
        if let Some(hit) = self.entries.lock().ok().and_then(|m| m.get(&key).cloned()) {
            return Ok(hit);
        }
        let out = apply_attack(net, cfg, base, index)?;
        if let Ok(mut m) = self.entries.lock() {
            m.insert(key, out.clone());
        }
        Ok(out)
    }
}

fn collection_of(ds: &Dataset) -> Vec<(String, Image)> {
    ds.images.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

fn judgments<'a>(ds: &'a Dataset, q: &QuerySpec) -> Result<&'a Judgments> {
    ds.judgments
        .get(&q.name)
        .ok_or_else(|| Error::Data(format!("no judgments for query '{}'", q.name)))
}

pub fn run_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentReport> {
    run_experiment_cached(cfg, ds, &AttackCache::new())
}

/// [`run_experiment`] reusing attacked queries from `cache`.
pub fn run_experiment_cached(cfg: &ExperimentConfig, ds: &Dataset, cache: &AttackCache) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let net = load_network(cfg)?;
    let retriever = Retriever::build(cfg, &net, &collection_of(ds))?;
    let queries: Vec<(u64, &QuerySpec)> = ds.manifest.queries.iter().enumerate().map(|(i, q)| (i as u64, q)).collect();
    let rows = par::try_map(&queries, |&(i, q)| {
        let base = query_base(ds, q, cfg.queries)?;
        let (query, quality, note) = finish_query(cfg, &base, cache.get_or_run(&net, cfg, &base, i)?)?;
        let ap = average_precision(&retriever.rank(&query)?, judgments(ds, q)?)?;
        Ok::<_, Error>(QueryResult { query_id: q.name.clone(), image_id: q.image_id.clone(), ap, ssim: quality, note })
    })?;
    let aps: Vec<f64> = rows.iter().map(|r| r.ap).collect();
    let map = mean_average_precision(&aps)?;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
    Ok(ExperimentReport {
        config: cfg.clone(),
        dataset: ds.manifest.name.clone(),
        rows,
        map,
        mean_ssim,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakRow {
    pub background: String,
    pub query: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub query_id: String,
    /// Relevant images swapped for their perturbed versions.
    pub replaced: Vec<String>,
    pub rows: Vec<LeakRow>,
    pub runtime_secs: f64,
}

/// Replaces every good/ok image of `query_name` with a PIRE version and
/// compares four background/query pairings.
pub fn run_leak_experiment(cfg: &ExperimentConfig, ds: &Dataset, query_name: &str) -> Result<LeakReport> {
    cfg.validate()?;
    let leak = cfg
        .leak
        .clone()
        .ok_or_else(|| Error::Config("leak experiment needs leak settings".into()))?;
    let start = Instant::now();
    let q = ds.query(query_name)?;
    let judg = judgments(ds, q)?;
    let relevant: Vec<String> = judg.relevant().into_iter().map(String::from).collect();
    if relevant.is_empty() {
        return Err(Error::Data(format!("query '{query_name}' has no relevant images")));
    }
    let net = load_network(cfg)?;
    let mode = if cfg.attack == Attack::Pire { FinalizeMode::OriginalX10 } else { FinalizeMode::Refined };
    let qindex = ds.manifest.queries.iter().position(|x| x.name == q.name).unwrap_or(0) as u64;
    let qseed = derive_seed(cfg.seed, STREAM_QUERY, qindex);

    let original = collection_of(ds);
    let swaps = par::try_map(&relevant, |id| {
        let pos = original.iter().position(|(k, _)| k == id).unwrap_or(0) as u64;
        let adv = pire_attack(&net, cfg, ds.image(id)?, leak.replacement_iterations, mode, derive_seed(cfg.seed, STREAM_LEAK, pos))?;
        Ok::<_, Error>((id.clone(), round_trip_8bit(&adv)))
    })?;
    let mut replaced = original.clone();
    for (id, img) in &swaps {
        if let Some(slot) = replaced.iter_mut().find(|(k, _)| k == id) {
            slot.1 = img.clone();
        }
    }

    let base = query_base(ds, q, cfg.queries)?;
    let prep = |iterations: usize| -> Result<Image> {
        let adv = pire_attack(&net, cfg, &base, iterations, mode, qseed)?;
        Ok(round_trip_8bit(&apply_transform(&adv, &cfg.transform)?))
    };
    let q_orig = round_trip_8bit(&apply_transform(&base, &cfg.transform)?);
    let q_rep = prep(leak.replacement_iterations)?;
    let q_cross = prep(leak.query_iterations)?;

    let bg_orig = Retriever::build(cfg, &net, &original)?;
    let bg_rep = Retriever::build(cfg, &net, &replaced)?;
    let tr = leak.replacement_iterations;
    let tq = leak.query_iterations;
    let cases: [(&Retriever, &Image, String, String); 4] = [
        (&bg_orig, &q_orig, "original".into(), "original".into()),
        (&bg_orig, &q_rep, "original".into(), format!("pire T={tr}")),
        (&bg_rep, &q_rep, format!("replaced T={tr}"), format!("pire T={tr}")),
        (&bg_rep, &q_cross, format!("replaced T={tr}"), format!("pire T={tq}")),
    ];
    let mut rows = Vec::with_capacity(4);
    for (r, img, background, query) in cases {
        rows.push(LeakRow { background, query, ap: average_precision(&r.rank(img)?, judg)? });
    }
    Ok(LeakReport {
        config: cfg.clone(),
        dataset: ds.manifest.name.clone(),
        query_id: q.name.clone(),
        replaced: relevant,
        rows,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Class separation measured while generating a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBuild {
    pub spec: SynthSpec,
    pub requested_seed: u64,
    /// Seed the written collection was rendered from.
    pub seed: u64,
    pub attempts: usize,
    pub intra_distance: f64,
    pub inter_distance: f64,
}

pub const SYNTH_ATTEMPTS: usize = 16;

/// Mean squared feature distance within and across landmark classes.
pub fn class_separation(net: &NetworkWeights, side: usize, images: &[SynthImage]) -> Result<(f64, f64)> {
    let landmarks: Vec<&SynthImage> = images.iter().filter(|im| im.class.is_some()).collect();
    let feats = par::try_map(&landmarks, |im| neural_features(net, side, &im.image))?;
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..landmarks.len() {
        for j in i + 1..landmarks.len() {
            let d: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if landmarks[i].class == landmarks[j].class {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 {
        return Err(Error::Data("need two classes with two views each to measure separation".into()));
    }
    Ok((intra / ni as f64, inter / nx as f64))
}

/// Renders and writes a synthetic dataset, re-rendering with the next derived
/// seed while the mean inter-class distance does not exceed the intra-class one.
pub fn build_synthetic_dataset(spec: &SynthSpec, seed: u64, cfg: &ExperimentConfig, root: &Path) -> Result<SynthBuild> {
    spec.validate()?;
    let net = load_network(cfg)?;
    let side = cfg.network.working_side;
    for attempt in 0..SYNTH_ATTEMPTS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, 99, attempt as u64) };
        let images = render_collection(spec, s)?;
        let (intra, inter) = if spec.classes >= 2 { class_separation(&net, side, &images)? } else { (0.0, 1.0) };
        if inter > intra {
            write_collection(spec, &images, root)?;
            let build = SynthBuild {
                spec: spec.clone(),
                requested_seed: seed,
                seed: s,
                attempts: attempt + 1,
                intra_distance: intra,
                inter_distance: inter,
            };
            let p = root.join("synth_build.json");
            std::fs::write(&p, serde_json::to_vec_pretty(&build)?).map_err(|e| Error::io(&p, e))?;
            return Ok(build);
        }
    }
    Err(Error::Data(format!("no seed in {SYNTH_ATTEMPTS} attempts separated the classes")))
}

/// Builds the dataset if `root` has none yet, then loads it.
pub fn ensure_synthetic_dataset(spec: &SynthSpec, seed: u64, cfg: &ExperimentConfig, root: &Path) -> Result<Dataset> {
    if !root.join("synth_build.json").exists() {
        build_synthetic_dataset(spec, seed, cfg, root)?;
    }
    load_dataset(root)
}

//! Oxford-style ground truth: `<name>_query.txt` plus `_good`, `_ok`, `_junk` lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evalmetrics::{Judgments, RelevanceJudgments};
use crate::imagecore::{load_image, Image};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    /// Ground-truth file stem, e.g. `all_souls_1`.
    pub name: String,
    pub image_id: String,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub images_dir: PathBuf,
    pub gt_dir: PathBuf,
    /// Image id to file, sorted by id.
    pub collection: BTreeMap<String, PathBuf>,
    pub queries: Vec<QuerySpec>,
}

/// Manifest, judgments keyed by query name, and the decoded collection.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub judgments: RelevanceJudgments,
    pub images: BTreeMap<String, Image>,
}

impl Dataset {
    pub fn image(&self, id: &str) -> Result<&Image> {
        self.images
            .get(id)
            .ok_or_else(|| Error::Data(format!("image '{id}' is not in the collection")))
    }

    pub fn query(&self, name: &str) -> Result<&QuerySpec> {
        self.manifest
            .queries
            .iter()
            .find(|q| q.name == name)
            .ok_or_else(|| Error::Data(format!("unknown query '{name}'")))
    }
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "pnm"];

/// Maps image stems to files for every supported image in `dir`.
pub fn scan_collection(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Data(format!(
                    "image id '{stem}' appears twice ({} and {})",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Picks the image id a query line refers to. Ground-truth files may prefix
/// stems with a collection token (`oxc1_all_souls_000013`); against a known
/// collection the longest suffix that names an image wins, otherwise the
/// first token is dropped when at least two remain.
fn resolve_stem(stem: &str, collection: Option<&BTreeSet<String>>) -> Option<String> {
    match collection {
        Some(c) => {
            let mut rest = stem;
            loop {
                if c.contains(rest) {
                    return Some(rest.to_string());
                }
                rest = rest.split_once('_')?.1;
            }
        }
        None => match stem.split_once('_') {
            Some((_, rest)) if rest.contains('_') => Some(rest.to_string()),
            _ => Some(stem.to_string()),
        },
    }
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, reason: reason.into() }
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.split_whitespace().count() != 1 {
            return Err(parse_error(path, i + 1, "expected one image id per line"));
        }
        out.push(line.to_string());
    }
    Ok(out)
}

fn parse_query_line(path: &Path, collection: Option<&BTreeSet<String>>) -> Result<(String, Option<BBox>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut found = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if found.is_some() {
            return Err(parse_error(path, i + 1, "more than one query line"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let bbox = match tokens.len() {
            1 => None,
            5 => {
                let mut c = [0.0; 4];
                for (slot, tok) in c.iter_mut().zip(&tokens[1..]) {
                    *slot = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_error(path, i + 1, format!("bad coordinate '{tok}'")))?;
                }
                Some(BBox { x1: c[0], y1: c[1], x2: c[2], y2: c[3] })
            }
            n => return Err(parse_error(path, i + 1, format!("expected 1 or 5 fields, found {n}"))),
        };
        let id = resolve_stem(tokens[0], collection)
            .ok_or_else(|| parse_error(path, i + 1, format!("query image '{}' not in the collection", tokens[0])))?;
        found = Some((id, bbox));
    }
    found.ok_or_else(|| parse_error(path, 1, "empty query file"))
}

/// Parses every `*_query.txt` in `dir` with its three judgment lists.
pub fn load_oxford_groundtruth(
    dir: &Path,
    collection: Option<&BTreeSet<String>>,
) -> Result<(Vec<QuerySpec>, RelevanceJudgments)> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix("_query.txt")) {
            names.insert(name.to_string());
        }
    }
    if names.is_empty() {
        return Err(Error::Data(format!("no *_query.txt files in {}", dir.display())));
    }
    let mut queries = Vec::with_capacity(names.len());
    let mut judgments = RelevanceJudgments::new();
    for name in names {
        let (image_id, bbox) = parse_query_line(&dir.join(format!("{name}_query.txt")), collection)?;
        let mut lists = Vec::with_capacity(3);
        for kind in ["good", "ok", "junk"] {
            let p = dir.join(format!("{name}_{kind}.txt"));
            if !p.exists() {
                return Err(Error::Data(format!("query '{name}' is missing {}", p.display())));
            }
            lists.push(read_list(&p)?);
        }
        let junk = lists.pop().unwrap_or_default();
        let ok = lists.pop().unwrap_or_default();
        let good = lists.pop().unwrap_or_default();
        let j = Judgments::new(image_id.clone(), good, ok, junk)
            .map_err(|e| Error::Data(format!("query '{name}': {e}")))?;
        judgments.insert(name.clone(), j);
        queries.push(QuerySpec { name, image_id, bbox });
    }
    Ok((queries, judgments))
}

fn check_bbox(q: &QuerySpec, path: &Path) -> Result<()> {
    let Some(b) = q.bbox else { return Ok(()) };
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let inside = 0.0 <= b.x1 && b.x1 < b.x2 && b.x2 <= f64::from(w) && 0.0 <= b.y1 && b.y1 < b.y2 && b.y2 <= f64::from(h);
    if !inside {
        return Err(Error::Data(format!(
            "query '{}': box ({}, {}, {}, {}) exceeds the {w}x{h} image",
            q.name, b.x1, b.y1, b.x2, b.y2
        )));
    }
    Ok(())
}

/// Reads `<root>/images` and `<root>/gt` and checks that every reference resolves.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let images_dir = root.join("images");
    let gt_dir = root.join("gt");
    let collection = scan_collection(&images_dir)?;
    if collection.is_empty() {
        return Err(Error::Data(format!("no images in {}", images_dir.display())));
    }
    let ids: BTreeSet<String> = collection.keys().cloned().collect();
    let (queries, judgments) = load_oxford_groundtruth(&gt_dir, Some(&ids))?;
    for q in &queries {
        check_bbox(q, &collection[&q.image_id])?;
        for id in judgments[&q.name].good.iter().chain(&judgments[&q.name].ok) {
            if !ids.contains(id) {
                return Err(Error::Data(format!("query '{}' lists unknown image '{id}'", q.name)));
            }
        }
    }
    let name = dataset_name(root);
    Ok(DatasetManifest { name, images_dir, gt_dir, collection, queries })
}

fn dataset_name(root: &Path) -> String {
    #[derive(Deserialize)]
    struct Named {
        name: String,
    }
    fs::read(root.join("synth_spec.json"))
        .ok()
        .and_then(|raw| serde_json::from_slice::<Named>(&raw).ok())
        .map(|n| n.name)
        .or_else(|| root.file_name().and_then(|n| n.to_str()).map(String::from))
        .unwrap_or_else(|| "dataset".into())
}

/// Loads the manifest and decodes every collection image.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = load_manifest(root)?;
    let ids: BTreeSet<String> = manifest.collection.keys().cloned().collect();
    let (_, judgments) = load_oxford_groundtruth(&manifest.gt_dir, Some(&ids))?;
    let entries: Vec<(&String, &PathBuf)> = manifest.collection.iter().collect();
    let decoded = par::try_map(&entries, |(id, path)| Ok::<_, Error>(((*id).clone(), load_image(path)?)))?;
    Ok(Dataset { manifest, judgments, images: decoded.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_resolve_against_collection() {
        let c: BTreeSet<String> = ["all_souls_000013", "paris_defense_000605"].iter().map(|s| s.to_string()).collect();
        assert_eq!(resolve_stem("oxc1_all_souls_000013", Some(&c)).unwrap(), "all_souls_000013");
        assert_eq!(resolve_stem("paris_defense_000605", Some(&c)).unwrap(), "paris_defense_000605");
        assert_eq!(resolve_stem("oxc1_nothing_1", Some(&c)), None);
        assert_eq!(resolve_stem("oxc1_allsouls_000013", None).unwrap(), "allsouls_000013");
        assert_eq!(resolve_stem("allsouls_000013", None).unwrap(), "allsouls_000013");
    }
}

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::he::signature_unchecked;
use super::{hamming, Codebook, HeParams, HE_BITS};
use crate::evalmetrics::{Ranked, RankedList};
use crate::imagecore::Image;
use crate::localfeat::{detect_and_describe, SiftParams};
use crate::{par, Error, Result};

pub const DEFAULT_HE_THRESHOLD: u32 = 24;

/// Immutable once built; safe to query from several threads.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub codebook: Codebook,
    pub he: HeParams,
    pub sift: SiftParams,
    image_ids: Vec<String>,
    descriptor_counts: Vec<u32>,
    /// Per word: (image index, signature), ascending image index.
    postings: Vec<Vec<(u32, u64)>>,
    idf: Vec<f64>,
    /// L2 norm of each image's tf-idf vector.
    norms: Vec<f64>,
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn descriptor_counts(&self) -> &[u32] {
        &self.descriptor_counts
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn postings(&self, word: usize) -> &[(u32, u64)] {
        &self.postings[word]
    }

    fn from_parts(
        codebook: Codebook,
        he: HeParams,
        sift: SiftParams,
        image_ids: Vec<String>,
        descriptor_counts: Vec<u32>,
        postings: Vec<Vec<(u32, u64)>>,
    ) -> Self {
        let n = image_ids.len();
        let idf: Vec<f64> = postings
            .iter()
            .map(|p| {
                let mut seen: Vec<u32> = p.iter().map(|e| e.0).collect();
                seen.dedup();
                if seen.is_empty() {
                    0.0
                } else {
                    (n as f64 / seen.len() as f64).ln()
                }
            })
            .collect();
        let mut sq = vec![0.0f64; n];
        for (p, w_idf) in postings.iter().zip(&idf) {
            let mut i = 0;
            while i < p.len() {
                let img = p[i].0;
                let mut tf = 0;
                while i < p.len() && p[i].0 == img {
                    tf += 1;
                    i += 1;
                }
                sq[img as usize] += (f64::from(tf) * w_idf).powi(2);
            }
        }
        Self {
            codebook,
            he,
            sift,
            image_ids,
            descriptor_counts,
            postings,
            idf,
            norms: sq.into_iter().map(f64::sqrt).collect(),
        }
    }

    fn encode(&self, descriptors: &[Vec<f32>]) -> Vec<(usize, u64)> {
        par::map(descriptors, |d| {
            let (w, _) = self.codebook.assign(d);
            let proj = self.he.project(d);
            (w, signature_unchecked(&proj, &self.he.thresholds[w * HE_BITS..(w + 1) * HE_BITS]))
        })
    }
}

fn check_compatible(codebook: &Codebook, he: &HeParams) -> Result<()> {
    if he.k() != codebook.k || he.dim != codebook.dim {
        return Err(Error::invalid("HE parameters do not match the codebook"));
    }
    Ok(())
}

/// Builds the index from per-image descriptor sets.
pub fn index_descriptors(
    entries: &[(String, Vec<Vec<f32>>)],
    codebook: &Codebook,
    he: &HeParams,
    sift: &SiftParams,
) -> Result<InvertedIndex> {
    if entries.is_empty() {
        return Err(Error::Data("cannot index an empty collection".into()));
    }
    check_compatible(codebook, he)?;
    if entries.len() > u32::MAX as usize {
        return Err(Error::Data("too many images for a u32 id".into()));
    }
    let mut seen = HashSet::new();
    for (id, descs) in entries {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate image id '{id}'")));
        }
        if descs.iter().any(|d| d.len() != codebook.dim) {
            return Err(Error::mismatch(codebook.dim, descs.iter().map(Vec::len).find(|&l| l != codebook.dim).unwrap_or(0)));
        }
    }
    let mut index = InvertedIndex::from_parts(
        codebook.clone(),
        he.clone(),
        *sift,
        Vec::new(),
        Vec::new(),
        vec![Vec::new(); codebook.k],
    );
    let encoded: Vec<Vec<(usize, u64)>> = entries.iter().map(|(_, d)| index.encode(d)).collect();
    let mut postings = vec![Vec::new(); codebook.k];
    for (img, codes) in encoded.iter().enumerate() {
        for &(w, sig) in codes {
            postings[w].push((img as u32, sig));
        }
    }
    let ids = entries.iter().map(|(id, _)| id.clone()).collect();
    let counts = entries.iter().map(|(_, d)| d.len() as u32).collect();
    index = InvertedIndex::from_parts(codebook.clone(), he.clone(), *sift, ids, counts, postings);
    Ok(index)
}

pub(crate) fn sift_descriptors(img: &Image, sift: &SiftParams) -> Result<Vec<Vec<f32>>> {
    let d = detect_and_describe(&img.to_grayscale(), sift)?;
    Ok(d.descriptors.into_iter().map(|d| d.0).collect())
}

/// Extracts SIFT from each image and indexes the descriptors.
pub fn index_images(
    images: &[(String, Image)],
    codebook: &Codebook,
    he: &HeParams,
    sift: &SiftParams,
) -> Result<InvertedIndex> {
    let entries = par::try_map(images, |(id, img)| Ok::<_, Error>((id.clone(), sift_descriptors(img, sift)?)))?;
    index_descriptors(&entries, codebook, he, sift)
}

/// Scores every indexed image: each query descriptor votes `idf^2` for postings
/// of its word within `he_threshold` bits, normalised by tf-idf vector norms.
pub fn query_descriptors(descriptors: &[Vec<f32>], index: &InvertedIndex, he_threshold: u32) -> Result<RankedList> {
    if he_threshold as usize > HE_BITS {
        return Err(Error::invalid(format!("HE threshold {he_threshold} exceeds {HE_BITS}")));
    }
    if let Some(d) = descriptors.iter().find(|d| d.len() != index.codebook.dim) {
        return Err(Error::mismatch(index.codebook.dim, d.len()));
    }
    let codes = index.encode(descriptors);
    let mut tf = vec![0u32; index.codebook.k];
    let mut scores = vec![0.0f64; index.len()];
    for &(w, sig) in &codes {
        tf[w] += 1;
        let weight = index.idf[w] * index.idf[w];
        if weight == 0.0 {
            continue;
        }
        for &(img, s) in &index.postings[w] {
            if hamming(sig, s) <= he_threshold {
                scores[img as usize] += weight;
            }
        }
    }
    let q_norm = tf
        .iter()
        .zip(&index.idf)
        .map(|(&t, idf)| (f64::from(t) * idf).powi(2))
        .sum::<f64>()
        .sqrt();
    let entries = scores
        .into_iter()
        .zip(&index.norms)
        .zip(&index.image_ids)
        .map(|((s, n), id)| {
            let denom = n * q_norm;
            Ranked { id: id.clone(), score: if denom > 0.0 { s / denom } else { 0.0 } }
        })
        .collect();
    RankedList::by_score(entries)
}

pub fn query_bovw(img: &Image, index: &InvertedIndex, he_threshold: u32) -> Result<RankedList> {
    query_descriptors(&sift_descriptors(img, &index.sift)?, index, he_threshold)
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    k: usize,
    seed: u64,
    idf: Vec<f64>,
    images: Vec<ImageEntry>,
    posting_lengths: Vec<usize>,
    codebook: Codebook,
    he: HeParams,
    sift: SiftParams,
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    id: String,
    descriptors: u32,
}

const POSTING_BYTES: usize = 12;

/// JSON header plus a word-sorted little-endian posting file (u32 image, u64 signature).
pub fn save_index(index: &InvertedIndex, header_path: &Path, postings_path: &Path) -> Result<()> {
    let header = IndexHeader {
        k: index.codebook.k,
        seed: index.codebook.seed,
        idf: index.idf.clone(),
        images: index
            .image_ids
            .iter()
            .zip(&index.descriptor_counts)
            .map(|(id, &descriptors)| ImageEntry { id: id.clone(), descriptors })
            .collect(),
        posting_lengths: index.postings.iter().map(Vec::len).collect(),
        codebook: index.codebook.clone(),
        he: index.he.clone(),
        sift: index.sift,
    };
    let mut blob = Vec::with_capacity(header.posting_lengths.iter().sum::<usize>() * POSTING_BYTES);
    for p in &index.postings {
        for &(img, sig) in p {
            blob.extend_from_slice(&img.to_le_bytes());
            blob.extend_from_slice(&sig.to_le_bytes());
        }
    }
    fs::write(header_path, serde_json::to_vec(&header)?).map_err(|e| Error::io(header_path, e))?;
    fs::write(postings_path, blob).map_err(|e| Error::io(postings_path, e))
}

pub fn load_index(header_path: &Path, postings_path: &Path) -> Result<InvertedIndex> {
    let raw = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: IndexHeader = serde_json::from_slice(&raw)?;
    check_compatible(&header.codebook, &header.he)?;
    if header.k != header.codebook.k || header.posting_lengths.len() != header.k || header.idf.len() != header.k {
        return Err(Error::Data("index header is inconsistent".into()));
    }
    let blob = fs::read(postings_path).map_err(|e| Error::io(postings_path, e))?;
    let total: usize = header.posting_lengths.iter().sum();
    if blob.len() != total * POSTING_BYTES {
        return Err(Error::Data(format!(
            "posting file holds {} bytes, header expects {}",
            blob.len(),
            total * POSTING_BYTES
        )));
    }
    let n = header.images.len();
    let mut chunks = blob.chunks_exact(POSTING_BYTES);
    let mut postings = Vec::with_capacity(header.k);
    for &len in &header.posting_lengths {
        let mut p = Vec::with_capacity(len);
        for c in chunks.by_ref().take(len) {
            let img = u32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let sig = u64::from_le_bytes(c[4..].try_into().expect("8 bytes"));
            if img as usize >= n {
                return Err(Error::Data(format!("posting references unknown image {img}")));
            }
            p.push((img, sig));
        }
        postings.push(p);
    }
    let ids = header.images.iter().map(|e| e.id.clone()).collect();
    let counts = header.images.iter().map(|e| e.descriptors).collect();
    Ok(InvertedIndex::from_parts(header.codebook, header.he, header.sift, ids, counts, postings))
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Codebook;
use crate::{Error, Result};

pub const HE_BITS: usize = 64;

/// Orthonormal projection plus per-word median thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeParams {
    pub dim: usize,
    pub seed: u64,
    /// `HE_BITS x dim`, row-major.
    pub projection: Vec<f64>,
    /// `k x HE_BITS`, row-major.
    pub thresholds: Vec<f64>,
    /// Words that had no training descriptors; their thresholds default to 0.
    pub empty_words: Vec<usize>,
}

impl HeParams {
    pub fn k(&self) -> usize {
        self.thresholds.len() / HE_BITS
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.projection[r * self.dim..(r + 1) * self.dim]
    }

    pub fn project(&self, x: &[f32]) -> [f64; HE_BITS] {
        let mut out = [0.0; HE_BITS];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * f64::from(*b)).sum();
        }
        out
    }
}

fn orthonormal_rows(dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < HE_BITS {
        return Err(Error::invalid(format!("HE needs descriptor dimension >= {HE_BITS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(HE_BITS);
    while rows.len() < HE_BITS {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two passes of modified Gram-Schmidt keep the rows orthogonal to ~1e-15
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= d * ri;
                }
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Ok(rows.concat())
}

fn median(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

pub fn train_he(descriptors: &[Vec<f32>], codebook: &Codebook, seed: u64) -> Result<HeParams> {
    if descriptors.is_empty() {
        return Err(Error::Data("HE training needs descriptors".into()));
    }
    if descriptors.iter().any(|d| d.len() != codebook.dim) {
        return Err(Error::mismatch(codebook.dim, descriptors[0].len()));
    }
    let mut he = HeParams {
        dim: codebook.dim,
        seed,
        projection: orthonormal_rows(codebook.dim, seed)?,
        thresholds: vec![0.0; codebook.k * HE_BITS],
        empty_words: Vec::new(),
    };
    let mut per_word: Vec<Vec<[f64; HE_BITS]>> = vec![Vec::new(); codebook.k];
    for (d, (w, _)) in descriptors.iter().zip(codebook.assign_all(descriptors)) {
        per_word[w].push(he.project(d));
    }
    for (w, projs) in per_word.iter().enumerate() {
        if projs.is_empty() {
            he.empty_words.push(w);
            continue;
        }
        for b in 0..HE_BITS {
            let mut vals: Vec<f64> = projs.iter().map(|p| p[b]).collect();
            he.thresholds[w * HE_BITS + b] = median(&mut vals);
        }
    }
    Ok(he)
}

/// Bit `b` is set iff projection `b` strictly exceeds the word's threshold.
pub fn he_signature(descriptor: &[f32], word: usize, he: &HeParams) -> Result<u64> {
    if word >= he.k() {
        return Err(Error::invalid(format!("word {word} out of range for k = {}", he.k())));
    }
    if descriptor.len() != he.dim {
        return Err(Error::mismatch(he.dim, descriptor.len()));
    }
    Ok(signature_unchecked(&he.project(descriptor), &he.thresholds[word * HE_BITS..(word + 1) * HE_BITS]))
}

pub(crate) fn signature_unchecked(proj: &[f64; HE_BITS], thresholds: &[f64]) -> u64 {
    proj.iter()
        .zip(thresholds)
        .enumerate()
        .fold(0u64, |acc, (b, (p, t))| if p > t { acc | (1 << b) } else { acc })
}

#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_codebook(k: usize, dim: usize) -> Codebook {
        Codebook {
            k,
            dim,
            seed: 0,
            centroids: (0..k * dim).map(|i| if i % dim == i / dim { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[test]
    fn rows_orthonormal_and_seeded() {
        let p = orthonormal_rows(128, 4).unwrap();
        assert_eq!(p, orthonormal_rows(128, 4).unwrap());
        for i in 0..HE_BITS {
            for j in 0..HE_BITS {
                let d: f64 = (0..128).map(|t| p[i * 128 + t] * p[j * 128 + t]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn at_threshold_gives_zero() {
        let cb = toy_codebook(2, 128);
        let mut he = train_he(&vec![vec![0.0; 128]; 4], &cb, 1).unwrap();
        let probe: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
        let proj = he.project(&probe);
        he.thresholds[..HE_BITS].copy_from_slice(&proj);
        assert_eq!(he_signature(&probe, 0, &he).unwrap(), 0);
        assert!(he_signature(&probe, 2, &he).is_err());
    }

    #[test]
    fn crossing_one_threshold_flips_one_bit() {
        let cb = toy_codebook(2, 128);
        let mut he = train_he(&vec![vec![0.0; 128]; 4], &cb, 1).unwrap();
        let probe: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).cos()).collect();
        let proj = he.project(&probe);
        for b in 0..HE_BITS {
            // bit 5 sits exactly on its threshold, the rest well clear of theirs
            let margin = if b == 5 { 0.0 } else if b % 2 == 0 { 0.1 } else { -0.1 };
            he.thresholds[b] = proj[b] + margin;
        }
        let before = he_signature(&probe, 0, &he).unwrap();
        let moved: Vec<f32> = probe.iter().zip(he.row(5)).map(|(p, r)| p + (1e-3 * r) as f32).collect();
        let after = he_signature(&moved, 0, &he).unwrap();
        assert_eq!(before ^ after, 1 << 5);
    }
}

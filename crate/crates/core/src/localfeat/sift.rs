//! Difference-of-Gaussians keypoints with 4x4x8 gradient-histogram descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::scalespace::{build_pyramid, Plane, Pyramid};
use crate::imagecore::GrayImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftParams {
    pub octave_layers: usize,
    pub sigma: f64,
    /// Applied to the refined DoG value scaled by `octave_layers`.
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    /// Double the image before building the pyramid.
    pub upsample: bool,
    pub max_octaves: usize,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octave_layers: 3,
            sigma: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            upsample: true,
            max_octaves: 8,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<()> {
        if self.octave_layers == 0 || !(self.sigma > 0.0) || !(self.edge_threshold > 1.0) {
            return Err(Error::invalid("SIFT parameters out of range"));
        }
        if !(self.contrast_threshold >= 0.0) || self.max_octaves == 0 {
            return Err(Error::invalid("SIFT parameters out of range"));
        }
        Ok(())
    }
}

/// Keypoint in original image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Gaussian sigma in original pixels.
    pub scale: f64,
    /// Radians in [0, 2π), measured from +x towards +y (image rows grow downward).
    pub orientation: f64,
    pub response: f64,
    /// Pyramid octave (0 is the upsampled base when upsampling is on).
    pub octave: usize,
    pub layer: usize,
}

/// 128 non-negative values with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftDescriptor(pub Vec<f32>);

impl SiftDescriptor {
    pub const LEN: usize = 128;

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Descriptors for the keypoints whose support window fits in the image.
#[derive(Debug, Clone, Default)]
pub struct Described {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<SiftDescriptor>,
    /// Indices (into the input list) of keypoints skipped at the border.
    pub skipped: Vec<usize>,
}

const BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_RADIUS_FACTOR: f64 = 3.0;
const ORI_PEAK_RATIO: f64 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE_FACTOR: f64 = 3.0;
const DESCR_CLIP: f64 = 0.2;
const MIN_SIDE: usize = 32;

fn check_size(img: &GrayImage) -> Result<()> {
    if img.height() < MIN_SIDE || img.width() < MIN_SIDE {
        return Err(Error::UndersizedInput(format!(
            "SIFT needs at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

pub fn detect_sift(img: &GrayImage, params: &SiftParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    check_size(img)?;
    let pyr = build_pyramid(img, params);
    Ok(detect_in(&pyr, params))
}

pub fn describe(img: &GrayImage, kps: &[Keypoint], params: &SiftParams) -> Result<Described> {
    params.validate()?;
    if kps.is_empty() {
        return Ok(Described::default());
    }
    check_size(img)?;
    let pyr = build_pyramid(img, params);
    Ok(describe_in(&pyr, kps, params))
}

pub fn detect_and_describe(img: &GrayImage, params: &SiftParams) -> Result<Described> {
    params.validate()?;
    check_size(img)?;
    let pyr = build_pyramid(img, params);
    let kps = detect_in(&pyr, params);
    Ok(describe_in(&pyr, &kps, params))
}

fn detect_in(pyr: &Pyramid, params: &SiftParams) -> Vec<Keypoint> {
    let s = params.octave_layers;
    let pre = 0.5 * params.contrast_threshold / s as f64;
    let mut out = Vec::new();
    for (o, oct) in pyr.octaves.iter().enumerate() {
        let (h, w) = (oct.dog[0].h, oct.dog[0].w);
        if h <= 2 * BORDER || w <= 2 * BORDER {
            continue;
        }
        let mut accepted = Vec::new();
        for l in 1..=s {
            let cur = &oct.dog[l];
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = cur.at(y, x);
                    if v.abs() <= pre || !is_extremum(&oct.dog, l, y, x, v) {
                        continue;
                    }
                    if let Some(c) = refine(&oct.dog, l, y, x, params) {
                        // neighbouring samples can refine onto the same extremum
                        let dup = accepted.iter().any(|&(xf, yf, lf): &(f64, f64, f64)| {
                            (xf - c.xf).abs() < 0.5 && (yf - c.yf).abs() < 0.5 && (lf - c.layer_f).abs() < 0.5
                        });
                        if dup {
                            continue;
                        }
                        accepted.push((c.xf, c.yf, c.layer_f));
                        let octave_scale = pyr.base_scale * (1u64 << o) as f64;
                        let sigma_oct = params.sigma * 2f64.powf(c.layer_f / s as f64);
                        for ori in orientations(&oct.gauss[c.layer], c.y, c.x, sigma_oct) {
                            out.push(Keypoint {
                                x: to_original(c.xf, o, pyr.base_scale),
                                y: to_original(c.yf, o, pyr.base_scale),
                                scale: sigma_oct * octave_scale,
                                orientation: ori,
                                response: c.response,
                                octave: o,
                                layer: c.layer,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

// Octave o samples base pixel 2^o * i; the base relates to the original by half-pixel centres.
fn to_original(c: f64, octave: usize, base_scale: f64) -> f64 {
    (c * (1u64 << octave) as f64 + 0.5) * base_scale - 0.5
}

fn to_octave(c: f64, octave: usize, base_scale: f64) -> f64 {
    ((c + 0.5) / base_scale - 0.5) / (1u64 << octave) as f64
}

fn is_extremum(dog: &[Plane], l: usize, y: usize, x: usize, v: f64) -> bool {
    let mut is_max = true;
    let mut is_min = true;
    for plane in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = plane.at(yy, xx);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

struct Candidate {
    x: usize,
    y: usize,
    layer: usize,
    xf: f64,
    yf: f64,
    layer_f: f64,
    response: f64,
}

fn derivatives(dog: &[Plane], l: usize, y: usize, x: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let (p, c, n) = (&dog[l - 1], &dog[l], &dog[l + 1]);
    let v2 = 2.0 * c.at(y, x);
    let g = [
        0.5 * (c.at(y, x + 1) - c.at(y, x - 1)),
        0.5 * (c.at(y + 1, x) - c.at(y - 1, x)),
        0.5 * (n.at(y, x) - p.at(y, x)),
    ];
    let dxx = c.at(y, x + 1) + c.at(y, x - 1) - v2;
    let dyy = c.at(y + 1, x) + c.at(y - 1, x) - v2;
    let dss = n.at(y, x) + p.at(y, x) - v2;
    let dxy = 0.25 * (c.at(y + 1, x + 1) - c.at(y + 1, x - 1) - c.at(y - 1, x + 1) + c.at(y - 1, x - 1));
    let dxs = 0.25 * (n.at(y, x + 1) - n.at(y, x - 1) - p.at(y, x + 1) + p.at(y, x - 1));
    let dys = 0.25 * (n.at(y + 1, x) - n.at(y - 1, x) - p.at(y + 1, x) + p.at(y - 1, x));
    (g, [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-18 {
        return None;
    }
    let mut x = [0.0; 3];
    for (i, xi) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][i] = b[r];
        }
        *xi = det(m) / d;
    }
    Some(x)
}

fn refine(dog: &[Plane], l0: usize, y0: usize, x0: usize, params: &SiftParams) -> Option<Candidate> {
    let s = params.octave_layers;
    let (h, w) = (dog[0].h, dog[0].w);
    let (mut l, mut y, mut x) = (l0 as isize, y0 as isize, x0 as isize);
    let mut offset = [0.0; 3];
    let mut converged = false;
    let mut prev = None;
    for _ in 0..MAX_INTERP_STEPS {
        let (g, hess) = derivatives(dog, l as usize, y as usize, x as usize);
        let step = solve3(hess, g)?;
        offset = [-step[0], -step[1], -step[2]];
        // an extremum halfway between samples makes the step bounce between the two
        let bounce = prev == Some((l + offset[2].round() as isize, y + offset[1].round() as isize, x + offset[0].round() as isize));
        if offset.iter().all(|v| v.abs() < 0.5) || (bounce && offset.iter().all(|v| v.abs() < 0.6)) {
            converged = true;
            break;
        }
        if offset.iter().any(|v| v.abs() > 1e3) {
            return None;
        }
        prev = Some((l, y, x));
        x += offset[0].round() as isize;
        y += offset[1].round() as isize;
        l += offset[2].round() as isize;
        if l < 1 || l > s as isize || x < BORDER as isize || y < BORDER as isize {
            return None;
        }
        if x >= (w - BORDER) as isize || y >= (h - BORDER) as isize {
            return None;
        }
    }
    if !converged {
        return None;
    }
    let (l, y, x) = (l as usize, y as usize, x as usize);
    let (g, hess) = derivatives(dog, l, y, x);
    let t: f64 = g.iter().zip(&offset).map(|(a, b)| a * b).sum();
    let contrast = dog[l].at(y, x) + 0.5 * t;
    if contrast.abs() * (s as f64) < params.contrast_threshold {
        return None;
    }
    let tr = hess[0][0] + hess[1][1];
    let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[0][1];
    let r = params.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some(Candidate {
        x,
        y,
        layer: l,
        xf: x as f64 + offset[0],
        yf: y as f64 + offset[1],
        layer_f: l as f64 + offset[2],
        response: contrast.abs(),
    })
}

#[inline]
fn gradient(img: &Plane, y: usize, x: usize) -> (f64, f64) {
    (
        img.at(y, x + 1) - img.at(y, x - 1),
        img.at(y + 1, x) - img.at(y - 1, x),
    )
}

fn orientations(img: &Plane, y: usize, x: usize, sigma_oct: f64) -> Vec<f64> {
    let sw = ORI_SIGMA_FACTOR * sigma_oct;
    let radius = (ORI_RADIUS_FACTOR * sw).round() as isize;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        let yy = y as isize + dy;
        if yy <= 0 || yy >= img.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = x as isize + dx;
            if xx <= 0 || xx >= img.w as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, yy as usize, xx as usize);
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * sw * sw)).exp();
            let angle = gy.atan2(gx);
            let bin = ((ORI_BINS as f64 * angle / (2.0 * PI)).round() as isize).rem_euclid(ORI_BINS as isize);
            hist[bin as usize] += weight * (gx * gx + gy * gy).sqrt();
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * 4.0 / 16.0
                + hist[i] * 6.0 / 16.0
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, c, r) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let bin = i as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
            let ori = (2.0 * PI * bin / n as f64).rem_euclid(2.0 * PI);
            out.push(if ori >= 2.0 * PI { 0.0 } else { ori });
        }
    }
    out
}

fn describe_in(pyr: &Pyramid, kps: &[Keypoint], params: &SiftParams) -> Described {
    let mut out = Described::default();
    for (i, kp) in kps.iter().enumerate() {
        match descriptor_for(pyr, kp, params) {
            Some(d) => {
                out.keypoints.push(*kp);
                out.descriptors.push(d);
            }
            None => out.skipped.push(i),
        }
    }
    out
}

fn descriptor_for(pyr: &Pyramid, kp: &Keypoint, params: &SiftParams) -> Option<SiftDescriptor> {
    let oct = pyr.octaves.get(kp.octave)?;
    let img = oct.gauss.get(kp.layer)?;
    let octave_scale = pyr.base_scale * (1u64 << kp.octave) as f64;
    let xo = to_octave(kp.x, kp.octave, pyr.base_scale);
    let yo = to_octave(kp.y, kp.octave, pyr.base_scale);
    let sigma_oct = kp.scale / octave_scale;
    let hist_width = DESCR_SCALE_FACTOR * sigma_oct;
    let d = DESCR_WIDTH as f64;
    let radius = (hist_width * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
    let (cx, cy) = (xo.round() as isize, yo.round() as isize);
    if cx - radius < 1 || cy - radius < 1 || cx + radius > img.w as isize - 2 || cy + radius > img.h as isize - 2 {
        return None;
    }
    let (sin_t, cos_t) = kp.orientation.sin_cos();
    let nb = DESCR_BINS;
    let dw = DESCR_WIDTH + 2;
    let mut hist = vec![0.0f64; dw * dw * (nb + 2)];
    let bins_per_rad = nb as f64 / (2.0 * PI);
    let weight_scale = -1.0 / (2.0 * (0.5 * d) * (0.5 * d));
    for i in -radius..=radius {
        for j in -radius..=radius {
            let x_rot = (cos_t * j as f64 + sin_t * i as f64) / hist_width;
            let y_rot = (-sin_t * j as f64 + cos_t * i as f64) / hist_width;
            let rbin = y_rot + d / 2.0 - 0.5;
            let cbin = x_rot + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (gx, gy) = gradient(img, (cy + i) as usize, (cx + j) as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let w = (weight_scale * (x_rot * x_rot + y_rot * y_rot)).exp() * mag;
            let mut obin = (gy.atan2(gx) - kp.orientation).rem_euclid(2.0 * PI) * bins_per_rad;
            if obin >= nb as f64 {
                obin -= nb as f64;
            }
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        let idx = ((r0 + ri) * dw + c0 + ci) * (nb + 2) + o0 + oi;
                        hist[idx] += w * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut desc = vec![0.0f64; DESCR_WIDTH * DESCR_WIDTH * nb];
    for r in 0..DESCR_WIDTH {
        for c in 0..DESCR_WIDTH {
            let base = ((r + 1) * dw + c + 1) * (nb + 2);
            let cell = &hist[base..base + nb + 2];
            let out = &mut desc[(r * DESCR_WIDTH + c) * nb..(r * DESCR_WIDTH + c + 1) * nb];
            for k in 0..nb {
                out[k] = cell[k];
            }
            // orientation bins wrap around
            out[0] += cell[nb];
            out[1 % nb] += cell[nb + 1];
        }
    }
    let _ = params;
    Some(SiftDescriptor(normalize_clip(desc)))
}

pub(crate) fn normalize_clip(mut desc: Vec<f64>) -> Vec<f32> {
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        // flat patch: fall back to a uniform unit vector
        let u = 1.0 / (desc.len() as f64).sqrt();
        return desc.iter().map(|_| u as f32).collect();
    }
    for v in desc.iter_mut() {
        *v = (*v / norm).min(DESCR_CLIP);
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    desc.iter().map(|v| (v / norm) as f32).collect()
}

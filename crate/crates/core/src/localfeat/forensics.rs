//! Keypoint removal by local smoothing and keypoint injection by small DoG bumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalespace::gaussian_blur;
use super::Keypoint;
use crate::imagecore::GrayImage;
use crate::{Error, Result};

/// Width of the linear blend ring around each smoothed disc, in pixels.
const FEATHER: f64 = 2.0;
/// Disc radius in units of keypoint scale.
const DISC_FACTOR: f64 = 3.0;

/// Blurs the image inside a disc of radius `3 * scale` around each keypoint.
pub fn remove_keypoints_smoothing(img: &GrayImage, kps: &[Keypoint], sigma_smooth: f64) -> Result<GrayImage> {
    if !(sigma_smooth >= 0.0) {
        return Err(Error::invalid("smoothing sigma must be non-negative"));
    }
    if kps.is_empty() || sigma_smooth == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let blurred = gaussian_blur(img.data(), h, w, sigma_smooth);
    let mut mask = vec![0.0f64; h * w];
    for kp in kps {
        let r = DISC_FACTOR * kp.scale;
        let outer = r + FEATHER;
        let y0 = (kp.y - outer).floor().max(0.0) as usize;
        let x0 = (kp.x - outer).floor().max(0.0) as usize;
        let y1 = ((kp.y + outer).ceil().max(0.0) as usize).min(h - 1);
        let x1 = ((kp.x + outer).ceil().max(0.0) as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - kp.x).hypot(y as f64 - kp.y);
                let m = ((outer - d) / FEATHER).clamp(0.0, 1.0);
                let slot = &mut mask[y * w + x];
                *slot = slot.max(m);
            }
        }
    }
    let data = img
        .data()
        .iter()
        .zip(&blurred)
        .zip(&mask)
        .map(|((&o, &b), &m)| if m == 0.0 { o } else { (1.0 - m) * o + m * b })
        .collect();
    GrayImage::from_clamped(h, w, data)
}

pub const INJECT_AMPLITUDE: f64 = 0.06;
pub const INJECT_SIGMA: f64 = 2.0;
/// Minimum distance of a bump centre from the image border.
const INJECT_MARGIN: f64 = 16.0;
/// Minimum distance between bump centres.
const INJECT_SPACING: f64 = 12.0;
const OUTER_RATIO: f64 = 1.6;
/// tanh gain that flattens the bump top; a plain DoG profile capped at the
/// amplitude limit stays under the detector's contrast threshold.
const SATURATION: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct Injection {
    pub image: GrayImage,
    pub requested: usize,
    pub placed: usize,
}

fn bump_profile(r2: f64) -> f64 {
    let s1 = INJECT_SIGMA * INJECT_SIGMA;
    let s2 = s1 * OUTER_RATIO * OUTER_RATIO;
    let peak = 1.0 / s1 - 1.0 / s2;
    let dog = ((-r2 / (2.0 * s1)).exp() / s1 - (-r2 / (2.0 * s2)).exp() / s2) / peak;
    (SATURATION * dog).tanh() / SATURATION.tanh()
}

/// Adds up to `count` DoG-shaped bumps of random sign at seeded positions.
pub fn inject_keypoints(img: &GrayImage, count: usize, seed: u64) -> Result<Injection> {
    let (h, w) = img.dims();
    if count == 0 {
        return Ok(Injection { image: img.clone(), requested: 0, placed: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<(f64, f64, f64)> = Vec::new();
    let (lo_y, hi_y) = (INJECT_MARGIN, h as f64 - 1.0 - INJECT_MARGIN);
    let (lo_x, hi_x) = (INJECT_MARGIN, w as f64 - 1.0 - INJECT_MARGIN);
    if hi_y >= lo_y && hi_x >= lo_x {
        let mut attempts = 0;
        while centres.len() < count && attempts < 200 * count {
            attempts += 1;
            let cy = rng.random_range(lo_y..=hi_y).round();
            let cx = rng.random_range(lo_x..=hi_x).round();
            if centres.iter().any(|&(y, x, _)| (y - cy).hypot(x - cx) < INJECT_SPACING) {
                continue;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            centres.push((cy, cx, sign));
        }
    }
    let reach = (4.0 * INJECT_SIGMA * OUTER_RATIO).ceil();
    let mut delta = vec![0.0f64; h * w];
    for &(cy, cx, sign) in &centres {
        let (y0, y1) = ((cy - reach).max(0.0) as usize, ((cy + reach) as usize).min(h - 1));
        let (x0, x1) = ((cx - reach).max(0.0) as usize, ((cx + reach) as usize).min(w - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                delta[y * w + x] += sign * INJECT_AMPLITUDE * bump_profile(r2);
            }
        }
    }
    let data = img
        .data()
        .iter()
        .zip(&delta)
        .map(|(v, d)| v + d.clamp(-INJECT_AMPLITUDE, INJECT_AMPLITUDE))
        .collect();
    Ok(Injection {
        image: GrayImage::from_clamped(h, w, data)?,
        requested: count,
        placed: centres.len(),
    })
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Image;
use crate::evalmetrics::ssim;
use crate::{Error, Result};

/// Upper end of the sigma search interval.
pub const MAX_NOISE_SIGMA: f64 = 0.5;
/// Bisection step budget for [`calibrate_noise_to_ssim`].
pub const CALIBRATION_STEPS: usize = 40;

/// Adds i.i.d. `N(0, sigma^2)` to every sample and clips to `[0, 1]`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(img.map_clamped(|_, v| v + normal.sample(&mut rng)))
}

/// Outcome of a sigma search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma: f64,
    pub achieved_ssim: f64,
    pub steps: usize,
}

/// Bisects sigma in `[0, 0.5]` so that `SSIM(img, noisy)` lands within `tol`
/// of `target`.
pub fn calibrate_noise_to_ssim(img: &Image, target_ssim: f64, tol: f64, seed: u64) -> Result<NoiseCalibration> {
    calibrate_sigma(target_ssim, tol, |sigma| {
        let noisy = add_gaussian_noise(img, sigma, seed)?;
        ssim(img, &noisy)
    })
}

/// Generic bisection over a similarity curve that decreases with sigma.
///
/// `eval(sigma)` returns the similarity obtained with noise level `sigma`.
/// When the target cannot be reached inside the interval the error carries
/// the best sigma found.
pub fn calibrate_sigma(
    target: f64,
    tol: f64,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<NoiseCalibration> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be > 0")));
    }
    if !target.is_finite() || target > 1.0 {
        return Err(Error::invalid(format!("target SSIM {target} must be <= 1")));
    }
    let at_zero = eval(0.0)?;
    if (at_zero - target).abs() <= tol {
        return Ok(NoiseCalibration { sigma: 0.0, achieved_ssim: at_zero, steps: 0 });
    }
    let at_max = eval(MAX_NOISE_SIGMA)?;
    let mut best = NoiseCalibration { sigma: MAX_NOISE_SIGMA, achieved_ssim: at_max, steps: 1 };
    if target < at_max - tol {
        return Err(Error::NoiseTargetUnreachable {
            target,
            best_sigma: best.sigma,
            best_ssim: best.achieved_ssim,
        });
    }
    if (at_max - target).abs() <= tol {
        return Ok(best);
    }
    let (mut lo, mut hi) = (0.0, MAX_NOISE_SIGMA);
    for step in 1..=CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let s = eval(mid)?;
        if (s - target).abs() < (best.achieved_ssim - target).abs() {
            best = NoiseCalibration { sigma: mid, achieved_ssim: s, steps: step };
        }
        if (s - target).abs() <= tol {
            return Ok(NoiseCalibration { sigma: mid, achieved_ssim: s, steps: step });
        }
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoiseTargetUnreachable {
        target,
        best_sigma: best.sigma,
        best_ssim: best.achieved_ssim,
    })
}

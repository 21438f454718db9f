use crate::imagecore::{GrayImage, Image};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01 * L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// `(0.03 * L)^2` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalised 1-D Gaussian of length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM between the grayscale conversions of `a` and `b`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    ssim_gray(&a.to_grayscale(), &b.to_grayscale())
}

/// Mean SSIM over every valid position of an 11x11 Gaussian window
/// (sigma 1.5). Images smaller than the window use a window clipped to the
/// image size.
pub fn ssim_gray(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    let (h, w) = a.dims();
    let wy = gaussian_window(SSIM_WINDOW.min(h), SSIM_SIGMA);
    let wx = gaussian_window(SSIM_WINDOW.min(w), SSIM_SIGMA);
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(x, h, w, &wy, &wx);
    let mu_y = filter_valid(y, h, w, &wy, &wx);
    let e_xx = filter_valid(&xx, h, w, &wy, &wx);
    let e_yy = filter_valid(&yy, h, w, &wy, &wx);
    let e_xy = filter_valid(&xy, h, w, &wy, &wx);

    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// Separable correlation keeping only positions where the window fits.
fn filter_valid(src: &[f64], h: usize, w: usize, ky: &[f64], kx: &[f64]) -> Vec<f64> {
    let ow = w - kx.len() + 1;
    let oh = h - ky.len() + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let out = &mut rows[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            *o = kx.iter().zip(&line[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, kv) in ky.iter().enumerate() {
            let r = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(r) {
                *o += kv * v;
            }
        }
    }
    out
}

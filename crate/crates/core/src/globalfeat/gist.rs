//! Gabor-energy layout descriptor: oriented band-pass energies on a 4x4 grid.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{GlobalKind, GlobalVector};
use crate::imagecore::{resize_gray_to, to_grayscale, Image};
use crate::{par, Result};

pub const GIST_SCALES: usize = 4;
pub const GIST_ORIENTATIONS: usize = 8;
pub const GIST_GRID: usize = 4;
pub const GIST_LEN: usize = GIST_SCALES * GIST_ORIENTATIONS * GIST_GRID * GIST_GRID;

const SIDE: usize = 128;
/// Centre frequencies in cycles per pixel, finest first.
const CENTRES: [f64; GIST_SCALES] = [0.25, 0.125, 0.0625, 0.03125];
/// Radial log-Gabor bandwidth (sigma over centre frequency).
const RADIAL_SIGMA: f64 = 0.55;
const ANGULAR_SIGMA: f64 = PI / 8.0;

type Bank = Vec<Vec<f64>>;

/// Frequency of FFT bin `i` in cycles per pixel.
fn freq(i: usize) -> f64 {
    let i = if i < SIDE / 2 { i as f64 } else { i as f64 - SIDE as f64 };
    i / SIDE as f64
}

/// Orientation `o` looks at frequencies pointing along `o * 45` degrees, with
/// angles measured from +x towards +y (rows grow downward).
fn filter_bank() -> &'static Bank {
    static BANK: OnceLock<Bank> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut bank = Vec::with_capacity(GIST_SCALES * GIST_ORIENTATIONS);
        for f0 in CENTRES {
            for o in 0..GIST_ORIENTATIONS {
                let theta0 = 2.0 * PI * o as f64 / GIST_ORIENTATIONS as f64;
                let mut h = vec![0.0; SIDE * SIDE];
                for ky in 0..SIDE {
                    for kx in 0..SIDE {
                        let (fx, fy) = (freq(kx), freq(ky));
                        let r = fx.hypot(fy);
                        if r == 0.0 {
                            continue;
                        }
                        let radial = (-(r / f0).ln().powi(2) / (2.0 * RADIAL_SIGMA.ln().powi(2))).exp();
                        let d = (fy.atan2(fx) - theta0 + PI).rem_euclid(2.0 * PI) - PI;
                        let angular = (-d * d / (2.0 * ANGULAR_SIGMA * ANGULAR_SIGMA)).exp();
                        h[ky * SIDE + kx] = radial * angular;
                    }
                }
                bank.push(h);
            }
        }
        bank
    })
}

fn fft2(data: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(SIDE) } else { planner.plan_fft_forward(SIDE) };
    for row in data.chunks_exact_mut(SIDE) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); SIDE];
    for x in 0..SIDE {
        for y in 0..SIDE {
            col[y] = data[y * SIDE + x];
        }
        fft.process(&mut col);
        for y in 0..SIDE {
            data[y * SIDE + x] = col[y];
        }
    }
}

pub fn gist(img: &Image) -> Result<GlobalVector> {
    let gray = to_grayscale(img);
    let gray = if gray.dims() == (SIDE, SIDE) { gray } else { resize_gray_to(&gray, SIDE, SIDE)? };
    let mut spectrum: Vec<Complex<f64>> = gray.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut spectrum, false);
    let norm = 1.0 / (SIDE * SIDE) as f64;
    let cell = SIDE / GIST_GRID;
    let blocks = par::map(filter_bank(), |h| {
        let mut resp: Vec<Complex<f64>> = spectrum.iter().zip(h).map(|(s, g)| s * g).collect();
        fft2(&mut resp, true);
        let mut out = [0.0; GIST_GRID * GIST_GRID];
        for y in 0..SIDE {
            for x in 0..SIDE {
                out[(y / cell) * GIST_GRID + x / cell] += (resp[y * SIDE + x] * norm).norm_sqr();
            }
        }
        out.map(|v| v / (cell * cell) as f64)
    });
    Ok(GlobalVector { kind: GlobalKind::Gist, values: blocks.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_near_zero() {
        let v = gist(&Image::filled(64, 80, [0.6, 0.2, 0.9]).unwrap()).unwrap();
        assert_eq!(v.values.len(), GIST_LEN);
        assert!(v.values.iter().all(|x| x.abs() < 1e-20), "{:?}", v.values.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn fft_round_trip() {
        let orig: Vec<Complex<f64>> = (0..SIDE * SIDE).map(|i| Complex::new((i as f64 * 0.37).sin(), 0.0)).collect();
        let mut d = orig.clone();
        fft2(&mut d, false);
        fft2(&mut d, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / (SIDE * SIDE) as f64 - b).norm() < 1e-9);
        }
    }
}

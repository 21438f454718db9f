//! Gaussian scale space and difference-of-Gaussians pyramid.

use super::SiftParams;
use crate::imagecore::{resize_gray_to, GrayImage};

/// Single-channel float plane, row-major.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * y, 2 * x));
            }
        }
        Plane { h, w, data }
    }
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // reflect-101: -1 -> 1, n -> n - 2
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

fn blur_plane(p: &Plane, sigma: f64) -> Plane {
    Plane {
        h: p.h,
        w: p.w,
        data: gaussian_blur(&p.data, p.h, p.w, sigma),
    }
}

pub(crate) struct Octave {
    pub gauss: Vec<Plane>,
    pub dog: Vec<Plane>,
}

pub(crate) struct Pyramid {
    pub octaves: Vec<Octave>,
    /// Original-image pixels per base-octave pixel (0.5 when upsampled).
    pub base_scale: f64,
}

/// Blur assumed to be present in the input image.
const INPUT_BLUR: f64 = 0.5;
/// Smallest octave side kept in the pyramid.
const MIN_OCTAVE_SIDE: usize = 12;

pub(crate) fn build_pyramid(img: &GrayImage, params: &SiftParams) -> Pyramid {
    let (mut base, base_scale, blur) = if params.upsample {
        let up = resize_gray_to(img, img.height() * 2, img.width() * 2).expect("non-empty image");
        (
            Plane { h: up.height(), w: up.width(), data: up.data().to_vec() },
            0.5,
            2.0 * INPUT_BLUR,
        )
    } else {
        (
            Plane { h: img.height(), w: img.width(), data: img.data().to_vec() },
            1.0,
            INPUT_BLUR,
        )
    };
    base = blur_plane(&base, (params.sigma * params.sigma - blur * blur).max(0.01).sqrt());

    let s = params.octave_layers;
    let k = 2f64.powf(1.0 / s as f64);
    // incremental blur between consecutive layers
    let steps: Vec<f64> = (1..s + 3)
        .map(|i| {
            let prev = params.sigma * k.powi(i as i32 - 1);
            let total = prev * k;
            (total * total - prev * prev).sqrt()
        })
        .collect();

    let mut octaves = Vec::new();
    let mut next_base = Some(base);
    while let Some(b) = next_base.take() {
        if b.h.min(b.w) < MIN_OCTAVE_SIDE || octaves.len() >= params.max_octaves {
            break;
        }
        let mut gauss = vec![b];
        for step in &steps {
            let g = blur_plane(gauss.last().expect("non-empty"), *step);
            gauss.push(g);
        }
        let dog = gauss
            .windows(2)
            .map(|pair| Plane {
                h: pair[0].h,
                w: pair[0].w,
                data: pair[1].data.iter().zip(&pair[0].data).map(|(a, b)| a - b).collect(),
            })
            .collect();
        next_base = Some(gauss[s].downsample());
        octaves.push(Octave { gauss, dog });
    }
    Pyramid { octaves, base_scale }
}

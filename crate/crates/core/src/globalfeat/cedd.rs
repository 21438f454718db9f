//! Simplified color and edge directivity histogram: 24 fuzzy HSV colors by
//! 6 texture classes over the 2x2 pixel blocks of a 240x240 resample.

use super::{GlobalKind, GlobalVector};
use crate::imagecore::{resize_to, Image, GRAY_WEIGHTS};
use crate::Result;

pub const CEDD_TEXTURES: usize = 6;
pub const CEDD_COLORS: usize = 24;
pub const CEDD_LEN: usize = CEDD_TEXTURES * CEDD_COLORS;

const SIDE: usize = 240;
const EDGE_THRESHOLD: f64 = 14.0 / 255.0;

/// Texture classes, in histogram order.
pub const TEXTURE_NAMES: [&str; CEDD_TEXTURES] =
    ["no_edge", "non_directional", "horizontal", "vertical", "diagonal_45", "diagonal_135"];

/// Hue centres in degrees for the chromatic colors.
const HUES: [f64; 7] = [0.0, 30.0, 60.0, 120.0, 180.0, 240.0, 300.0];

/// Colors 0..3 are black, grey, white; then each hue in `HUES` as dark, normal, light.
pub fn cedd_bin(texture: usize, color: usize) -> usize {
    texture * CEDD_COLORS + color
}

pub(crate) fn chromatic_bin(hue: usize, variant: usize) -> usize {
    3 + hue * 3 + variant
}

fn ramp(x: f64, from: f64, to: f64) -> f64 {
    // 0 at `from`, 1 at `to`
    ((x - from) / (to - from)).clamp(0.0, 1.0)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max > 0.0 { delta / max } else { 0.0 };
    (h, s, max)
}

/// Fuzzy membership of one RGB value across the 24 colors; sums to 1.
pub(crate) fn color_memberships(rgb: [f64; 3]) -> [f64; CEDD_COLORS] {
    let (h, s, v) = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
    let mut m = [0.0; CEDD_COLORS];
    let black = ramp(v, 0.25, 0.1);
    let rest = 1.0 - black;
    let achromatic = rest * ramp(s, 0.35, 0.15);
    let chromatic = rest - achromatic;
    m[0] = black;
    // achromatic mass spread over black / grey / white by value
    let (lo, hi) = (ramp(v, 0.5, 0.0), ramp(v, 0.5, 1.0));
    m[0] += achromatic * lo;
    m[1] += achromatic * (1.0 - lo - hi);
    m[2] += achromatic * hi;
    if chromatic > 0.0 {
        let dark = ramp(v, 0.7, 0.4);
        let light = (1.0 - dark) * ramp(s, 0.75, 0.5);
        let variants = [dark, 1.0 - dark - light, light];
        // triangular hue memberships between neighbouring centres
        for i in 0..HUES.len() {
            let a = HUES[i];
            let b = if i + 1 < HUES.len() { HUES[i + 1] } else { 360.0 };
            let hh = if h < a { h + 360.0 } else { h };
            if hh >= a && hh < b {
                let t = (hh - a) / (b - a);
                let j = (i + 1) % HUES.len();
                for (k, w) in variants.iter().enumerate() {
                    m[chromatic_bin(i, k)] += chromatic * (1.0 - t) * w;
                    m[chromatic_bin(j, k)] += chromatic * t * w;
                }
                break;
            }
        }
    }
    m
}

/// MPEG-7 style edge filters on a 2x2 block `[a0 a1; a2 a3]`.
pub(crate) fn texture_class(block: [f64; 4]) -> usize {
    let s2 = std::f64::consts::SQRT_2;
    let filters: [[f64; 4]; 5] = [
        [2.0, -2.0, -2.0, 2.0],  // non-directional
        [1.0, 1.0, -1.0, -1.0],  // horizontal edge
        [1.0, -1.0, 1.0, -1.0],  // vertical edge
        [0.0, s2, -s2, 0.0],     // 45 degrees
        [s2, 0.0, 0.0, -s2],     // 135 degrees
    ];
    let mut best = (0.0, 0);
    for (i, f) in filters.iter().enumerate() {
        let r = (block.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / 4.0).abs();
        if r > best.0 {
            best = (r, i + 1);
        }
    }
    if best.0 < EDGE_THRESHOLD {
        0
    } else {
        best.1
    }
}

pub fn cedd(img: &Image) -> Result<GlobalVector> {
    let img = if img.dims() == (SIDE, SIDE) { img.clone() } else { resize_to(img, SIDE, SIDE)? };
    let lum = |y: usize, x: usize| -> f64 {
        let p = img.pixel(y, x);
        p.iter().zip(GRAY_WEIGHTS).map(|(v, w)| v * w).sum()
    };
    let mut hist = vec![0.0f64; CEDD_LEN];
    for by in 0..SIDE / 2 {
        for bx in 0..SIDE / 2 {
            let (y, x) = (2 * by, 2 * bx);
            let cells = [(y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)];
            let texture = texture_class(cells.map(|(yy, xx)| lum(yy, xx)));
            let mut mean = [0.0; 3];
            for (yy, xx) in cells {
                for (m, v) in mean.iter_mut().zip(img.pixel(yy, xx)) {
                    *m += v / 4.0;
                }
            }
            for (c, w) in color_memberships(mean).iter().enumerate() {
                hist[cedd_bin(texture, c)] += w;
            }
        }
    }
    let total: f64 = hist.iter().sum();
    let values = if total > 0.0 {
        hist.into_iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / CEDD_LEN as f64; CEDD_LEN]
    };
    Ok(GlobalVector { kind: GlobalKind::Cedd, values })
}

use super::{GrayImage, Image};
use crate::{Error, Result};

/// Largest accepted resize percentage.
pub const MAX_SCALE_PERCENT: f64 = 400.0;

fn scaled_dim(dim: usize, scale: f64) -> usize {
    ((dim as f64 * scale / 100.0).round() as usize).max(1)
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= MAX_SCALE_PERCENT) {
        return Err(Error::invalid(format!(
            "resize scale {scale}% outside (0, {MAX_SCALE_PERCENT}]"
        )));
    }
    Ok(())
}

/// Bilinear resize by a percentage of the original size.
pub fn resize(img: &Image, scale: f64) -> Result<Image> {
    check_scale(scale)?;
    resize_to(img, scaled_dim(img.height(), scale), scaled_dim(img.width(), scale))
}

pub fn resize_gray(img: &GrayImage, scale: f64) -> Result<GrayImage> {
    check_scale(scale)?;
    resize_gray_to(img, scaled_dim(img.height(), scale), scaled_dim(img.width(), scale))
}

/// Bilinear resize to an explicit size using pixel-centre alignment.
pub fn resize_to(img: &Image, height: usize, width: usize) -> Result<Image> {
    if (height, width) == img.dims() {
        return Ok(img.clone());
    }
    let data = bilinear(img.data(), img.height(), img.width(), 3, height, width);
    Image::from_clamped(height, width, data)
}

pub fn resize_gray_to(img: &GrayImage, height: usize, width: usize) -> Result<GrayImage> {
    if (height, width) == img.dims() {
        return Ok(img.clone());
    }
    let data = bilinear(img.data(), img.height(), img.width(), 1, height, width);
    GrayImage::from_clamped(height, width, data)
}

/// Source coordinate, lower index and blend weight for each output index.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn bilinear(src: &[f64], sh: usize, sw: usize, ch: usize, dh: usize, dw: usize) -> Vec<f64> {
    if dh == 0 || dw == 0 {
        return Vec::new();
    }
    let ys = sample_positions(sh, dh);
    let xs = sample_positions(sw, dw);
    let mut out = Vec::with_capacity(dh * dw * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let at = |y: usize, x: usize| src[(y * sw + x) * ch + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Bilinear resampling written out as a sparse linear map, so it can be
/// applied to interleaved buffers and transposed for gradients.
#[derive(Debug, Clone)]
pub struct BilinearMap {
    pub src: (usize, usize),
    pub dst: (usize, usize),
    ys: Vec<(usize, usize, f64)>,
    xs: Vec<(usize, usize, f64)>,
}

impl BilinearMap {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Self {
        Self {
            src,
            dst,
            ys: sample_positions(src.0, dst.0),
            xs: sample_positions(src.1, dst.1),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.src == self.dst
    }

    /// Resamples an interleaved buffer with `ch` channels.
    pub fn apply(&self, input: &[f64], ch: usize) -> Vec<f64> {
        if self.is_identity() {
            return input.to_vec();
        }
        bilinear(input, self.src.0, self.src.1, ch, self.dst.0, self.dst.1)
    }

    /// Adjoint of [`apply`](Self::apply): scatters output gradients back.
    pub fn transpose(&self, grad_out: &[f64], ch: usize) -> Vec<f64> {
        if self.is_identity() {
            return grad_out.to_vec();
        }
        let sw = self.src.1;
        let mut grad = vec![0.0; self.src.0 * sw * ch];
        let mut k = 0;
        for &(y0, y1, fy) in &self.ys {
            for &(x0, x1, fx) in &self.xs {
                for c in 0..ch {
                    let g = grad_out[k];
                    k += 1;
                    grad[(y0 * sw + x0) * ch + c] += g * (1.0 - fy) * (1.0 - fx);
                    grad[(y0 * sw + x1) * ch + c] += g * (1.0 - fy) * fx;
                    grad[(y1 * sw + x0) * ch + c] += g * fy * (1.0 - fx);
                    grad[(y1 * sw + x1) * ch + c] += g * fy * fx;
                }
            }
        }
        grad
    }
}

/// Size with the longer side equal to `side`, aspect ratio kept.
pub fn fit_longer_side(height: usize, width: usize, side: usize) -> (usize, usize) {
    let longer = height.max(width) as f64;
    let s = side as f64 / longer;
    (
        ((height as f64 * s).round() as usize).max(1),
        ((width as f64 * s).round() as usize).max(1),
    )
}

/// Centre-anchored crop keeping `area_fraction` percent of the area; each side
/// scales by `sqrt(area_fraction / 100)`.
pub fn crop(img: &Image, area_fraction: f64) -> Result<Image> {
    if !(area_fraction > 0.0 && area_fraction <= 100.0) {
        return Err(Error::invalid(format!("crop fraction {area_fraction}% outside (0, 100]")));
    }
    let side = (area_fraction / 100.0).sqrt();
    let h = (img.height() as f64 * side).round() as usize;
    let w = (img.width() as f64 * side).round() as usize;
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "crop {area_fraction}% of {}x{} is empty",
            img.height(),
            img.width()
        )));
    }
    let y0 = ((img.height() - h) as f64 / 2.0).round() as usize;
    let x0 = ((img.width() - w) as f64 / 2.0).round() as usize;
    window(img, y0, x0, h, w)
}

/// Crops the axis-aligned box `[x1, x2) x [y1, y2)` given in pixel
/// coordinates; fractional edges are rounded outward-in to whole pixels.
pub fn crop_box(img: &Image, x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Image> {
    let (h, w) = (img.height() as f64, img.width() as f64);
    if !(0.0 <= x1 && x1 < x2 && x2 <= w && 0.0 <= y1 && y1 < y2 && y2 <= h) {
        return Err(Error::invalid(format!(
            "box ({x1}, {y1}, {x2}, {y2}) outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let (cx0, cy0) = (x1.round() as usize, y1.round() as usize);
    let cx1 = (x2.round() as usize).clamp(cx0 + 1, img.width());
    let cy1 = (y2.round() as usize).clamp(cy0 + 1, img.height());
    window(img, cy0, cx0, cy1 - cy0, cx1 - cx0)
}

fn window(img: &Image, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
    let mut data = Vec::with_capacity(h * w * 3);
    for y in y0..y0 + h {
        let row = (y * img.width() + x0) * 3;
        data.extend_from_slice(&img.data()[row..row + w * 3]);
    }
    Image::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_rgb(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(h, w, |y, x| [f(y, x); 3]).unwrap()
    }

    #[test]
    fn resize_identity_at_100() {
        let img = gray_rgb(5, 3, |y, x| (y * 3 + x) as f64 / 15.0);
        assert_eq!(resize(&img, 100.0).unwrap(), img);
    }

    #[test]
    fn checkerboard_upscale_matches_hand_weights() {
        // [[1, 0], [0, 1]] upscaled 2x: sample positions -0.25→0, 0.25, 0.75, 1.25→1
        let img = gray_rgb(2, 2, |y, x| if (y + x) % 2 == 0 { 1.0 } else { 0.0 });
        let out = resize(&img, 200.0).unwrap();
        assert_eq!(out.dims(), (4, 4));
        let pos = [0.0, 0.25, 0.75, 1.0];
        for (i, &fy) in pos.iter().enumerate() {
            for (j, &fx) in pos.iter().enumerate() {
                // bilinear of the checkerboard: (1-fy)(1-fx) + fy*fx
                let expect = (1.0 - fy) * (1.0 - fx) + fy * fx;
                assert!((out.get(i, j, 0) - expect).abs() < 1e-12, "({i},{j})");
            }
        }
        assert!((out.get(1, 1, 0) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn downscale_constant_stays_constant() {
        let img = Image::filled(4, 4, [0.3, 0.6, 0.9]).unwrap();
        let out = resize(&img, 50.0).unwrap();
        assert_eq!(out.dims(), (2, 2));
        for p in out.data().chunks(3) {
            assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12 && (p[2] - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_map_transpose_is_adjoint() {
        let m = BilinearMap::new((5, 7), (9, 4));
        let x: Vec<f64> = (0..5 * 7 * 3).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let g: Vec<f64> = (0..9 * 4 * 3).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
        let lhs: f64 = m.apply(&x, 3).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(m.transpose(&g, 3)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn longer_side_fit() {
        assert_eq!(fit_longer_side(100, 50, 128), (128, 64));
        assert_eq!(fit_longer_side(64, 96, 128), (85, 128));
    }

    #[test]
    fn resize_rejects_bad_scale() {
        let img = Image::filled(4, 4, [0.5; 3]).unwrap();
        assert!(resize(&img, 0.0).is_err());
        assert!(resize(&img, -10.0).is_err());
        assert!(resize(&img, 401.0).is_err());
        assert_eq!(resize(&img, 1.0).unwrap().dims(), (1, 1));
    }

    #[test]
    fn crop_quarter_area_is_centered() {
        let img = gray_rgb(10, 10, |y, x| (y * 10 + x) as f64 / 100.0);
        let out = crop(&img, 25.0).unwrap();
        assert_eq!(out.dims(), (5, 5));
        // top-left of the window is pixel (3, 3), bottom-right (7, 7)
        assert!((out.get(0, 0, 0) - 0.33).abs() < 1e-12);
        assert!((out.get(4, 4, 0) - 0.77).abs() < 1e-12);
        assert_eq!(crop(&img, 100.0).unwrap(), img);
        assert!(crop(&img, 0.0).is_err());
        assert!(crop(&img, 0.1).is_err());
    }

    #[test]
    fn crop_box_validates_bounds() {
        let img = gray_rgb(10, 20, |_, _| 0.5);
        assert_eq!(crop_box(&img, 2.0, 1.0, 12.0, 9.0).unwrap().dims(), (8, 10));
        assert!(crop_box(&img, 2.0, 1.0, 21.0, 9.0).is_err());
        assert!(crop_box(&img, 5.0, 1.0, 5.0, 9.0).is_err());
    }

    proptest! {
        #[test]
        fn up_then_down_restores_dims(h in 1usize..40, w in 1usize..40) {
            let img = gray_rgb(h, w, |_, _| 0.5);
            let back = resize(&resize(&img, 200.0).unwrap(), 50.0).unwrap();
            prop_assert_eq!(back.dims(), img.dims());
        }

        #[test]
        fn crop_area_close_to_fraction(h in 40usize..120, w in 40usize..120, f in 20.0f64..100.0) {
            let img = gray_rgb(h, w, |_, _| 0.5);
            let out = crop(&img, f).unwrap();
            let ratio = (out.height() * out.width()) as f64 / (h * w) as f64;
            prop_assert!((ratio - f / 100.0).abs() <= 0.02 + 1e-12, "ratio {} vs {}", ratio, f);
        }
    }
}

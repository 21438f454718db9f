use crate::imagecore::{GrayImage, Image, GRAY_WEIGHTS};
use crate::{Error, Result};

/// Recovered color image plus the number of channel values clipped to [0, 1].
#[derive(Debug, Clone)]
pub struct ColorRecovery {
    pub image: Image,
    pub clipped: usize,
    /// Pixels where the original gray level was too dark for a stable ratio.
    pub guarded: usize,
}

const DARK_GUARD: f64 = 1.0 / 255.0;

/// Scales every channel of `original` by the per-pixel ratio of modified to original gray.
pub fn recover_color(original: &Image, modified_gray: &GrayImage) -> Result<ColorRecovery> {
    let (h, w) = original.dims();
    if (h, w) != (modified_gray.height(), modified_gray.width()) {
        return Err(Error::mismatch(
            format!("{h}x{w}"),
            format!("{}x{}", modified_gray.height(), modified_gray.width()),
        ));
    }
    let src = original.data();
    let mut data = Vec::with_capacity(src.len());
    let (mut clipped, mut guarded) = (0, 0);
    for (px, &m) in src.chunks_exact(3).zip(modified_gray.data()) {
        let gray: f64 = px.iter().zip(GRAY_WEIGHTS).map(|(v, w)| v * w).sum();
        if gray < DARK_GUARD {
            guarded += 1;
            data.extend([m, m, m]);
            continue;
        }
        let alpha = m / gray;
        for v in px {
            let s = v * alpha;
            if !(0.0..=1.0).contains(&s) {
                clipped += 1;
            }
            data.push(s.clamp(0.0, 1.0));
        }
    }
    Ok(ColorRecovery {
        image: Image::new(h, w, data)?,
        clipped,
        guarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::to_grayscale;
    use proptest::prelude::*;

    #[test]
    fn identity_when_unmodified() {
        let img = Image::from_fn(5, 4, |y, x| [0, 1, 2].map(|c| 0.1 + 0.05 * (y + 2 * x + c) as f64)).unwrap();
        let rec = recover_color(&img, &to_grayscale(&img)).unwrap();
        assert!(rec.image.max_abs_diff(&img) < 1e-12);
        assert_eq!(rec.clipped, 0);
    }

    #[test]
    fn halving_gray_halves_channels() {
        let img = Image::filled(1, 1, [0.4; 3]).unwrap();
        let m = GrayImage::filled(1, 1, 0.2).unwrap();
        let rec = recover_color(&img, &m).unwrap();
        for v in rec.image.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn dark_pixels_take_modified_gray() {
        let img = Image::filled(2, 2, [0.0; 3]).unwrap();
        let m = GrayImage::filled(2, 2, 0.3).unwrap();
        let rec = recover_color(&img, &m).unwrap();
        assert_eq!(rec.guarded, 4);
        assert!(rec.image.data().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn size_mismatch_rejected() {
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        assert!(recover_color(&img, &GrayImage::filled(2, 3, 0.5).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn gray_round_trip(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(6, 6, |_, _| [rng.random::<f64>(), rng.random(), rng.random()]).unwrap();
            let m = GrayImage::from_fn(6, 6, |_, _| rng.random::<f64>()).unwrap();
            let rec = recover_color(&img, &m).unwrap();
            let back = to_grayscale(&rec.image);
            let gray = to_grayscale(&img);
            for i in 0..36 {
                let orig = &img.data()[3 * i..3 * i + 3];
                let alpha = m.data()[i] / gray.data()[i];
                let clipped = orig.iter().any(|v| v * alpha > 1.0);
                if !clipped {
                    prop_assert!((back.data()[i] - m.data()[i]).abs() <= 1.0 / 255.0);
                }
            }
        }
    }
}

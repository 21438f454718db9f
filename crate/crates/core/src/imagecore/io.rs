use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader, RgbImage};

use super::{dequantize, quantize, Image, QuantizedImage, MAX_SAMPLES};
use crate::{Error, Result};

/// Formats this crate writes. JPEG is accepted on input only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => Ok(ImageFormat::Png),
            "ppm" | "pnm" => Ok(ImageFormat::Ppm),
            other => Err(Error::UnsupportedFormat(format!(
                "cannot write '.{other}' ({}), use .png or .ppm",
                path.display()
            ))),
        }
    }
}

/// Reads a PNG, binary PPM or JPEG file into a continuous RGB image.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = ImageReader::new(BufReader::new(file))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Pnm | image::ImageFormat::Jpeg) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?} ({})", path.display()))),
        None => return Err(Error::UnsupportedFormat(format!("unrecognised ({})", path.display()))),
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w.checked_mul(h).and_then(|n| n.checked_mul(3)).is_none_or(|n| n > MAX_SAMPLES) {
        return Err(Error::Data(format!("dimension overflow: {h}x{w} ({})", path.display())));
    }
    Ok(dequantize(&QuantizedImage {
        height: h,
        width: w,
        channels: 3,
        data: rgb.into_raw(),
    }))
}

/// Writes the 8-bit quantization of `img`; the format follows the extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let q = quantize(img);
    let (w, h) = (
        u32::try_from(q.width).map_err(|_| Error::Data("width overflow".into()))?,
        u32::try_from(q.height).map_err(|_| Error::Data("height overflow".into()))?,
    );
    let buf = RgbImage::from_raw(w, h, q.data).ok_or_else(|| Error::Data("buffer size".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let written = match format {
        ImageFormat::Png => buf.write_to(&mut out, image::ImageFormat::Png),
        ImageFormat::Ppm => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(buf.as_raw(), w, h, ExtendedColorType::Rgb8),
    };
    written.map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::round_trip_8bit;

    fn gradient_image() -> Image {
        Image::from_fn(7, 5, |y, x| [y as f64 / 6.0, x as f64 / 4.0, 0.3 + 0.001 * (x * y) as f64]).unwrap()
    }

    #[test]
    fn png_round_trip_matches_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = gradient_image();
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, round_trip_8bit(&img));
        // second pass is byte stable
        save_image(&back, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), back);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let img = gradient_image();
        save_image(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..2], b"P6");
        assert_eq!(load_image(&p).unwrap(), round_trip_8bit(&img));
    }

    #[test]
    fn quarter_gray_writes_64() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        save_image(&Image::filled(4, 4, [0.25; 3]).unwrap(), &p).unwrap();
        let raw = image::open(&p).unwrap().to_rgb8().into_raw();
        assert!(raw.iter().all(|&b| b == 64));
    }

    #[test]
    fn truncated_png_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_image(&gradient_image(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Decode { .. })));
    }

    #[test]
    fn unsupported_extension_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient_image();
        assert!(matches!(
            save_image(&img, dir.path().join("x.jpg")),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"hello world, not an image").unwrap();
        assert!(load_image(&junk).is_err());
    }
}

//! 8-bit PNG and binary PPM images mapped to `[0, 1]` tensors.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageReader};

use crate::error::{contract_err, Error, Result};
use crate::tensor::ImageTensor;

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Loads an 8-bit image as `3×H×W`; grayscale is replicated to three
/// channels and alpha is dropped.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_err(path, e))?;
    let img = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::Format(format!("{}: {}", path.display(), u)),
        ImageError::IoError(io) => decode_err(path, io),
        other => decode_err(path, other),
    })?;
    from_dynamic(img, path)
}

fn from_dynamic(img: DynamicImage, path: &Path) -> Result<ImageTensor> {
    let rgb = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => img.to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel format {:?}; only 8-bit images are accepted",
                path.display(),
                other
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    ImageTensor::from_vec(&[3, h, w], data)
}

/// Writes a `3×H×W` (or `1×H×W`) tensor with values in `[0, 1]`, rounding to
/// 8 bits. The format follows the extension: `.ppm` gives binary P6,
/// anything else PNG.
pub fn save_image(t: &ImageTensor, path: &Path) -> Result<()> {
    let (c, h, w) = t.chw()?;
    if c != 3 && c != 1 {
        return contract_err(format!("cannot save a {}-channel image", c));
    }
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return contract_err(format!("pixel value {} outside [0, 1]", v));
    }
    let plane = h * w;
    let mut buf = vec![0u8; 3 * plane];
    for i in 0..plane {
        for k in 0..3 {
            let src = if c == 3 { k } else { 0 };
            buf[3 * i + k] = (t.data()[src * plane + i] * 255.0).round() as u8;
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let res = if is_ppm {
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&buf, w as u32, h as u32, ExtendedColorType::Rgb8)
    } else {
        PngEncoder::new(file).write_image(&buf, w as u32, h as u32, ExtendedColorType::Rgb8)
    };
    res.map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

/// PNG and PPM files of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "ppm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

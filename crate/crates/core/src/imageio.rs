//! 8-bit grayscale image and mask I/O (PGM P5 and PNG).

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader};
use ndarray::{Array2, ArrayView2};

use crate::metrics::RegionMask;
use crate::{Error, ImageMatrix, Result};

fn to_gray(img: DynamicImage, path: &Path) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Config(format!(
            "{}: only 8-bit grayscale images are supported (got {:?})",
            path.display(),
            other.color()
        ))),
    }
}

pub fn read_grayscale(path: impl AsRef<Path>) -> Result<ImageMatrix> {
    let path = path.as_ref();
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let gray = to_gray(img, path)?;
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        f64::from(gray.get_pixel(j as u32, i as u32)[0])
    }))
}

/// Nonzero pixels of a grayscale image form the region.
pub fn read_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    Ok(RegionMask::new(read_grayscale(path)?.mapv(|v| v > 0.0)))
}

/// Clamp to `[0, max_value]` and round to integer intensities.
pub fn quantize_image(image: ArrayView2<'_, f64>, max_value: u32) -> Array2<u8> {
    let top = f64::from(max_value.min(255));
    image.mapv(|v| v.clamp(0.0, top).round() as u8)
}

pub fn to_gray_image(image: ArrayView2<'_, f64>, max_value: u32) -> GrayImage {
    let q = quantize_image(image, max_value);
    let (h, w) = q.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([q[[y as usize, x as usize]]]))
}

/// Write as PNG, or PGM when the extension is `.pgm`.
pub fn write_grayscale(path: impl AsRef<Path>, image: ArrayView2<'_, f64>, max_value: u32) -> Result<()> {
    let path = path.as_ref();
    let gray = to_gray_image(image, max_value);
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    if format == image::ImageFormat::Pnm {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let enc = image::codecs::pnm::PnmEncoder::new(file).with_subtype(image::codecs::pnm::PnmSubtype::Graymap(
            image::codecs::pnm::SampleEncoding::Binary,
        ));
        gray.write_with_encoder(enc)?;
    } else {
        gray.save_with_format(path, format)?;
    }
    Ok(())
}

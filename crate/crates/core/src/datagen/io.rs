//! 8-bit RGB PNG round trip for `3×H×W` tensors in `[0, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::Dimension(format!(
            "PNG export needs 3 channels, got {c}"
        )));
    }
    let d = img.data();
    let plane = h * w;
    let buf: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([
            quantize(d[i]),
            quantize(d[plane + i]),
            quantize(d[2 * plane + i]),
        ])
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let raw = img.as_raw();
    Tensor::new(
        &[3, h, w],
        (0..3 * plane)
            .map(|i| raw[(i % plane) * 3 + i / plane] as f64 / 255.0)
            .collect(),
    )
}

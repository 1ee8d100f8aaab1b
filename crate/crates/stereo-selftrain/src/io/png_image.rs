//! 8-bit PNG input/output for stereo images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Image;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: message.into(),
    }
}

/// Loads a PNG as an RGB image with values in `[0, 1]`. Grayscale inputs
/// are replicated to three channels; alpha is dropped.
pub fn read_image_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)
        .map_err(|e| format_err(path, format!("png decode failed: {e}")))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::new(3, w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out.set(c, x, y, p[c] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Saves an image as 8-bit RGB PNG (values clamped to `[0, 1]`).
pub fn write_image_png(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 3 && img.channels() != 1 {
        return Err(Error::invalid(format!(
            "expected 1- or 3-channel image, got {}",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| {
                let ch = if img.channels() == 1 { 0 } else { c };
                (img.get(ch, x, y).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            rgb.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    rgb.save(path)
        .map_err(|e| format_err(path, format!("png encode failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip_at_8bit_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::new(3, 9, 5);
        for (i, v) in img.values_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        write_image_png(&img, &path).unwrap();
        let back = read_image_png(&path).unwrap();
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
        }
    }
}

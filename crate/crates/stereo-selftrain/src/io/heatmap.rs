//! Grayscale heatmap export for reliability, variance and error maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Grid;

/// Writes a grid as an 8-bit grayscale PNG, mapping `[0, 1]` linearly to
/// `[0, 255]` (values outside are clamped).
pub fn write_heatmap_png(grid: &Grid, path: &Path) -> Result<()> {
    let (w, h) = (grid.width(), grid.height());
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (grid.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("png encode failed: {e}"),
    })?;
    Ok(())
}

/// Like [`write_heatmap_png`] but first scales the grid by its maximum, so
/// unbounded statistics (variance, delta, error) use the full range.
pub fn write_heatmap_png_normalized(grid: &Grid, path: &Path) -> Result<()> {
    let max = grid.values().iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return write_heatmap_png(grid, path);
    }
    let scaled = grid.map(|v| v / max);
    write_heatmap_png(&scaled, path)
}

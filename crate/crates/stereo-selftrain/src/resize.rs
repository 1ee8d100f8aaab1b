//! Bilinear resampling for images and disparity maps.
//!
//! Sampling is corner-aligned: source coordinate `x_s = x_d * (sw-1)/(dw-1)`,
//! so the four corners map exactly onto each other and a factor-1 resize is
//! the identity. Disparity values are additionally scaled by the width
//! ratio, because disparity is a horizontal offset measured in pixels of
//! its own resolution.

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{DisparityMap, Grid, Image};

/// Precomputed 1-D interpolation taps for one output axis.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(src: usize, dst: usize) -> AxisTaps {
    let mut lo = Vec::with_capacity(dst);
    let mut hi = Vec::with_capacity(dst);
    let mut frac = Vec::with_capacity(dst);
    let scale = if dst > 1 {
        (src - 1) as f64 / (dst - 1) as f64
    } else {
        0.0
    };
    for d in 0..dst {
        let s = d as f64 * scale;
        let f = s.floor();
        let mut i0 = f as usize;
        let mut t = s - f;
        if i0 >= src - 1 {
            i0 = src - 1;
            t = 0.0;
        }
        let i1 = (i0 + 1).min(src - 1);
        lo.push(i0);
        hi.push(i1);
        frac.push(t);
    }
    AxisTaps { lo, hi, frac }
}

/// Resamples a grid to `target_w x target_h` with corner-aligned bilinear
/// interpolation. Values are not rescaled.
pub fn resize_grid(src: &Grid, target_w: usize, target_h: usize) -> Result<Grid> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid("resize target dimensions must be positive"));
    }
    if src.width() == 0 || src.height() == 0 {
        return Err(Error::invalid("cannot resize an empty grid"));
    }
    if target_w == src.width() && target_h == src.height() {
        return Ok(src.clone());
    }
    let xt = axis_taps(src.width(), target_w);
    let yt = axis_taps(src.height(), target_h);
    let mut out = Grid::new(target_w, target_h);
    exec::for_each_chunk_mut_threshold(out.values_mut(), target_w, target_w * 8, |y, row| {
        let y0 = yt.lo[y];
        let y1 = yt.hi[y];
        let ty = yt.frac[y];
        let r0 = src.row(y0);
        let r1 = src.row(y1);
        for (x, o) in row.iter_mut().enumerate() {
            let (x0, x1, tx) = (xt.lo[x], xt.hi[x], xt.frac[x]);
            let top = r0[x0] + (r0[x1] - r0[x0]) * tx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * tx;
            *o = top + (bot - top) * ty;
        }
    });
    Ok(out)
}

/// Transpose of [`resize_grid`]: scatters an output-space gradient back to
/// source space with the same interpolation weights.
pub fn resize_grid_backward(
    grad_out: &Grid,
    src_w: usize,
    src_h: usize,
) -> Grid {
    let mut grad_src = Grid::new(src_w, src_h);
    if grad_out.width() == src_w && grad_out.height() == src_h {
        grad_src
            .values_mut()
            .copy_from_slice(grad_out.values());
        return grad_src;
    }
    let xt = axis_taps(src_w, grad_out.width());
    let yt = axis_taps(src_h, grad_out.height());
    for y in 0..grad_out.height() {
        let (y0, y1, ty) = (yt.lo[y], yt.hi[y], yt.frac[y]);
        for x in 0..grad_out.width() {
            let (x0, x1, tx) = (xt.lo[x], xt.hi[x], xt.frac[x]);
            let g = grad_out.get(x, y);
            let w00 = (1.0 - tx) * (1.0 - ty);
            let w10 = tx * (1.0 - ty);
            let w01 = (1.0 - tx) * ty;
            let w11 = tx * ty;
            grad_src.set(x0, y0, grad_src.get(x0, y0) + g * w00);
            grad_src.set(x1, y0, grad_src.get(x1, y0) + g * w10);
            grad_src.set(x0, y1, grad_src.get(x0, y1) + g * w01);
            grad_src.set(x1, y1, grad_src.get(x1, y1) + g * w11);
        }
    }
    grad_src
}

/// Resizes an image by `factor`; output dimensions are `round(factor * dims)`.
pub fn resize_image(image: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) {
        return Err(Error::invalid(format!(
            "resize factor must be positive, got {}",
            factor
        )));
    }
    let tw = ((image.width() as f64 * factor).round() as usize).max(1);
    let th = ((image.height() as f64 * factor).round() as usize).max(1);
    if tw == image.width() && th == image.height() {
        return Ok(image.clone());
    }
    let mut out = Image::new(image.channels(), tw, th);
    for c in 0..image.channels() {
        let src = Grid::from_vec(image.width(), image.height(), image.channel_plane(c).to_vec())?;
        let resized = resize_grid(&src, tw, th)?;
        for y in 0..th {
            out.row_mut(c, y).copy_from_slice(resized.row(y));
        }
    }
    Ok(out)
}

/// Resizes a disparity map to `target_w x target_h`.
///
/// After bilinear resampling, values are multiplied by
/// `target_w / source_w` so that a disparity keeps pointing at the same
/// physical correspondence at the new resolution.
pub fn resize_disparity(
    map: &DisparityMap,
    target_w: usize,
    target_h: usize,
) -> Result<DisparityMap> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid("resize target dimensions must be positive"));
    }
    let scale = target_w as f64 / map.width() as f64;
    let mut grid = resize_grid(map.grid(), target_w, target_h)?;
    if scale != 1.0 {
        for v in grid.values_mut() {
            *v *= scale;
        }
    }
    Ok(DisparityMap::from_grid(grid))
}

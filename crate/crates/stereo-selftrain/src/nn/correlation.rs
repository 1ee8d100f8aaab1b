//! Local correlation lookup along the epipolar line.
//!
//! For every pixel of the left feature map and every integer offset
//! `o in [-radius, radius]`, correlates the left feature vector with the
//! right feature map sampled (linearly, along x) at `x + d + o`, where `d`
//! is the current disparity estimate. Sampling beyond the image border
//! contributes zero. The lookup is differentiable in both feature maps and
//! in the disparity.
//!
//! The `x + d` direction matches this crate's synthesis convention, where
//! the content of the right view at column `x` is the left view at `x - d`.

use crate::exec;
use crate::types::Grid;

use super::tensor::Tensor;

/// Interpolated right-feature taps at continuous column `u` of row `y`.
#[inline]
fn sample_taps(w: usize, u: f64) -> Option<(usize, usize, f64)> {
    // Returns (i0, i1, frac) with out-of-range neighbors encoded as i == w.
    if !(u > -1.0 && u < w as f64) {
        return None;
    }
    let f = u.floor();
    let t = u - f;
    let i0 = if f < 0.0 { w } else { f as usize };
    let i1 = {
        let n = f + 1.0;
        if n >= w as f64 {
            w
        } else {
            n as usize
        }
    };
    Some((i0, i1, t))
}

/// Correlation volume of shape `(2*radius+1, h, w)`.
pub fn correlation_lookup(left: &Tensor, right: &Tensor, disp: &Grid, radius: usize) -> Tensor {
    debug_assert_eq!(left.ch, right.ch);
    debug_assert_eq!(left.h, right.h);
    debug_assert_eq!(left.w, right.w);
    debug_assert_eq!(disp.width(), left.w);
    debug_assert_eq!(disp.height(), left.h);
    let (c, h, w) = (left.ch, left.h, left.w);
    let taps = 2 * radius + 1;
    let inv_c = 1.0 / c as f64;
    let mut out = Tensor::zeros(taps, h, w);
    let plane = h * w;
    let work = plane * c * 8;
    exec::for_each_chunk_mut_threshold(&mut out.data, plane, work, |tap, out_plane| {
        let offset = tap as f64 - radius as f64;
        for y in 0..h {
            let drow = disp.row(y);
            let out_row = &mut out_plane[y * w..(y + 1) * w];
            for x in 0..w {
                let u = x as f64 + drow[x] + offset;
                let Some((i0, i1, t)) = sample_taps(w, u) else {
                    out_row[x] = 0.0;
                    continue;
                };
                let mut acc = 0.0;
                for ch in 0..c {
                    let l = left.data[(ch * h + y) * w + x];
                    let r_row = &right.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let r0 = if i0 < w { r_row[i0] } else { 0.0 };
                    let r1 = if i1 < w { r_row[i1] } else { 0.0 };
                    acc += l * (r0 + (r1 - r0) * t);
                }
                out_row[x] = acc * inv_c;
            }
        }
    });
    out
}

pub struct CorrGrads {
    pub dleft: Tensor,
    pub dright: Tensor,
    pub ddisp: Grid,
}

/// Gradients of [`correlation_lookup`] w.r.t. both feature maps and the
/// disparity estimate.
pub fn correlation_lookup_backward(
    left: &Tensor,
    right: &Tensor,
    disp: &Grid,
    radius: usize,
    dcorr: &Tensor,
) -> CorrGrads {
    let (c, h, w) = (left.ch, left.h, left.w);
    let taps = 2 * radius + 1;
    debug_assert_eq!(dcorr.ch, taps);
    let inv_c = 1.0 / c as f64;

    // dleft / dright: parallel over channels, disjoint planes.
    let mut dleft = Tensor::zeros(c, h, w);
    let plane = h * w;
    let work = plane * taps * 8;
    exec::for_each_chunk_mut_threshold(&mut dleft.data, plane, work, |ch, dl_plane| {
        for tap in 0..taps {
            let offset = tap as f64 - radius as f64;
            let dc_plane = dcorr.plane(tap);
            for y in 0..h {
                let drow = disp.row(y);
                let r_row = &right.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                for x in 0..w {
                    let g = dc_plane[y * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    let u = x as f64 + drow[x] + offset;
                    let Some((i0, i1, t)) = sample_taps(w, u) else {
                        continue;
                    };
                    let r0 = if i0 < w { r_row[i0] } else { 0.0 };
                    let r1 = if i1 < w { r_row[i1] } else { 0.0 };
                    dl_plane[y * w + x] += g * inv_c * (r0 + (r1 - r0) * t);
                }
            }
        }
    });

    let mut dright = Tensor::zeros(c, h, w);
    exec::for_each_chunk_mut_threshold(&mut dright.data, plane, work, |ch, dr_plane| {
        for tap in 0..taps {
            let offset = tap as f64 - radius as f64;
            let dc_plane = dcorr.plane(tap);
            for y in 0..h {
                let drow = disp.row(y);
                for x in 0..w {
                    let g = dc_plane[y * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    let u = x as f64 + drow[x] + offset;
                    let Some((i0, i1, t)) = sample_taps(w, u) else {
                        continue;
                    };
                    let l = left.data[(ch * h + y) * w + x];
                    let gl = g * inv_c * l;
                    if i0 < w {
                        dr_plane[y * w + i0] += gl * (1.0 - t);
                    }
                    if i1 < w {
                        dr_plane[y * w + i1] += gl * t;
                    }
                }
            }
        }
    });

    // ddisp: parallel over rows.
    let mut ddisp = Grid::new(w, h);
    let row_work = w * taps * c * 4;
    exec::for_each_chunk_mut_threshold(ddisp.values_mut(), w, row_work, |y, dd_row| {
        let drow = disp.row(y);
        for tap in 0..taps {
            let offset = tap as f64 - radius as f64;
            let dc_plane = dcorr.plane(tap);
            for x in 0..w {
                let g = dc_plane[y * w + x];
                if g == 0.0 {
                    continue;
                }
                let u = x as f64 + drow[x] + offset;
                let Some((i0, i1, _)) = sample_taps(w, u) else {
                    continue;
                };
                let mut slope = 0.0;
                for ch in 0..c {
                    let l = left.data[(ch * h + y) * w + x];
                    let r_row = &right.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let r0 = if i0 < w { r_row[i0] } else { 0.0 };
                    let r1 = if i1 < w { r_row[i1] } else { 0.0 };
                    slope += l * (r1 - r0);
                }
                dd_row[x] += g * inv_c * slope;
            }
        }
    });

    CorrGrads {
        dleft,
        dright,
        ddisp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::test_rng_fill;

    #[test]
    fn gradients_match_finite_differences() {
        let (c, h, w) = (3, 4, 9);
        let radius = 2;
        let mut left = Tensor::zeros(c, h, w);
        test_rng_fill(&mut left.data, 10);
        let mut right = Tensor::zeros(c, h, w);
        test_rng_fill(&mut right.data, 11);
        // Disparities strictly inside cells so interpolation is smooth.
        let mut dvals = vec![0.0; h * w];
        test_rng_fill(&mut dvals, 12);
        for v in &mut dvals {
            *v = v.abs() * 3.0 + 0.13;
        }
        let disp = Grid::from_vec(w, h, dvals).unwrap();

        let out = correlation_lookup(&left, &right, &disp, radius);
        let mut coef = vec![0.0; out.data.len()];
        test_rng_fill(&mut coef, 13);
        let mut dcorr = Tensor::zeros(out.ch, h, w);
        dcorr.data.copy_from_slice(&coef);
        let grads = correlation_lookup_backward(&left, &right, &disp, radius, &dcorr);

        let objective = |l: &Tensor, r: &Tensor, d: &Grid| -> f64 {
            correlation_lookup(l, r, d, radius)
                .data
                .iter()
                .zip(&coef)
                .map(|(a, b)| a * b)
                .sum()
        };
        let step = 1e-6;
        for idx in (0..left.data.len()).step_by(7) {
            let mut p = left.clone();
            p.data[idx] += step;
            let mut m = left.clone();
            m.data[idx] -= step;
            let fd = (objective(&p, &right, &disp) - objective(&m, &right, &disp)) / (2.0 * step);
            let an = grads.dleft.data[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "dleft {} vs {}", fd, an);
        }
        for idx in (0..right.data.len()).step_by(7) {
            let mut p = right.clone();
            p.data[idx] += step;
            let mut m = right.clone();
            m.data[idx] -= step;
            let fd = (objective(&left, &p, &disp) - objective(&left, &m, &disp)) / (2.0 * step);
            let an = grads.dright.data[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "dright {} vs {}", fd, an);
        }
        for idx in (0..h * w).step_by(5) {
            let mut p = disp.clone();
            p.values_mut()[idx] += step;
            let mut m = disp.clone();
            m.values_mut()[idx] -= step;
            let fd = (objective(&left, &right, &p) - objective(&left, &right, &m)) / (2.0 * step);
            let an = grads.ddisp.values()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "ddisp {} vs {}", fd, an);
        }
    }

    #[test]
    fn zero_disparity_center_tap_is_feature_dot() {
        let (c, h, w) = (2, 2, 5);
        let mut left = Tensor::zeros(c, h, w);
        test_rng_fill(&mut left.data, 20);
        let right = left.clone();
        let disp = Grid::new(w, h);
        let out = correlation_lookup(&left, &right, &disp, 1);
        // Center tap correlates each pixel with itself.
        for y in 0..h {
            for x in 0..w {
                let mut want = 0.0;
                for ch in 0..c {
                    want += left.at(ch, y, x) * left.at(ch, y, x);
                }
                want /= c as f64;
                assert!((out.at(1, y, x) - want).abs() < 1e-12);
            }
        }
    }
}

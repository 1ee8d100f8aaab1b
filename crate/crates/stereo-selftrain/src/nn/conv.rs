//! Direct 2-D convolution with explicit backward pass.
//!
//! Weights are laid out `[out_ch][in_ch][ky][kx]`. The 3x3 / stride-1 /
//! pad-1 case (the bulk of the network) runs through a row-accumulator
//! fast path that keeps the output row in registers across all input
//! channels and taps; everything else takes the generic path. Both paths
//! produce identical results and parallelize over disjoint output chunks
//! only, so outputs are bit-stable across thread schedules.

use crate::exec;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(out_ch: usize, in_ch: usize, ksize: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            out_ch,
            in_ch,
            ksize,
            stride,
            pad,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.ksize * self.ksize
    }

    fn is_k3s1p1(&self) -> bool {
        self.ksize == 3 && self.stride == 1 && self.pad == 1
    }
}

pub fn conv_out_dim(n: usize, ksize: usize, stride: usize, pad: usize) -> usize {
    assert!(n + 2 * pad >= ksize, "input dim {} too small for kernel {}", n, ksize);
    (n + 2 * pad - ksize) / stride + 1
}

/// Output-column range for which `ox*stride + k_off - pad` stays inside `[0, in_w)`.
#[inline]
fn valid_out_range(in_n: usize, out_n: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let start = if k_off >= pad {
        0
    } else {
        (pad - k_off + stride - 1) / stride
    };
    let lim = (in_n + pad).saturating_sub(k_off); // exclusive on ox*stride
    let end = if lim == 0 { 0 } else { ((lim - 1) / stride + 1).min(out_n) };
    (start.min(end), end)
}

/// Adds `w0*in[ox-1] + w1*in[ox] + w2*in[ox+1]` (zero-padded) to `acc`.
#[inline]
fn accumulate_row_k3(acc: &mut [f64], in_row: &[f64], w0: f64, w1: f64, w2: f64) {
    let w = acc.len();
    debug_assert_eq!(in_row.len(), w);
    if w == 1 {
        acc[0] += w1 * in_row[0];
        return;
    }
    acc[0] += w1 * in_row[0] + w2 * in_row[1];
    for ox in 1..w - 1 {
        acc[ox] += w0 * in_row[ox - 1] + w1 * in_row[ox] + w2 * in_row[ox + 1];
    }
    acc[w - 1] += w0 * in_row[w - 2] + w1 * in_row[w - 1];
}

fn conv2d_k3s1p1(x: &Tensor, weight: &[f64], bias: &[f64], spec: &ConvSpec, out: &mut Tensor) {
    let (h, w) = (x.h, x.w);
    let plane = h * w;
    let work = plane * spec.in_ch * 18;
    exec::for_each_chunk_mut_threshold(&mut out.data, plane, work, |oc, out_plane| {
        let mut acc = vec![0.0f64; w];
        for oy in 0..h {
            acc.fill(bias[oc]);
            for ic in 0..spec.in_ch {
                let x_plane = x.plane(ic);
                let wbase = ((oc * spec.in_ch + ic) * 3) * 3;
                for ky in 0..3usize {
                    let iy = oy + ky;
                    if iy < 1 || iy - 1 >= h {
                        continue;
                    }
                    let in_row = &x_plane[(iy - 1) * w..(iy - 1 + 1) * w];
                    let wk = &weight[wbase + ky * 3..wbase + ky * 3 + 3];
                    accumulate_row_k3(&mut acc, in_row, wk[0], wk[1], wk[2]);
                }
            }
            out_plane[oy * w..(oy + 1) * w].copy_from_slice(&acc);
        }
    });
}

fn conv2d_generic(x: &Tensor, weight: &[f64], bias: &[f64], spec: &ConvSpec, out: &mut Tensor) {
    let k = spec.ksize;
    let (s, p) = (spec.stride, spec.pad);
    let (oh, ow) = (out.h, out.w);
    let plane = oh * ow;
    let (xh, xw) = (x.h, x.w);
    let work = plane * spec.in_ch * 2 * k * k;
    exec::for_each_chunk_mut_threshold(&mut out.data, plane, work, |oc, out_plane| {
        out_plane.fill(bias[oc]);
        for ic in 0..spec.in_ch {
            let x_plane = x.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let w = weight[((oc * spec.in_ch + ic) * k + ky) * k + kx];
                    let (ox0, ox1) = valid_out_range(xw, ow, kx, s, p);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= xh {
                            continue;
                        }
                        let in_row = &x_plane[(iy - p) * xw..(iy - p + 1) * xw];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            out_row[ox] += w * in_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    });
}

/// Zero-padded convolution: `y[oc] = b[oc] + sum_{ic,ky,kx} w * x`.
pub fn conv2d(x: &Tensor, weight: &[f64], bias: &[f64], spec: &ConvSpec) -> Tensor {
    debug_assert_eq!(x.ch, spec.in_ch);
    debug_assert_eq!(weight.len(), spec.weight_len());
    debug_assert_eq!(bias.len(), spec.out_ch);
    let oh = conv_out_dim(x.h, spec.ksize, spec.stride, spec.pad);
    let ow = conv_out_dim(x.w, spec.ksize, spec.stride, spec.pad);
    let mut out = Tensor::zeros(spec.out_ch, oh, ow);
    if spec.is_k3s1p1() {
        conv2d_k3s1p1(x, weight, bias, spec, &mut out);
    } else {
        conv2d_generic(x, weight, bias, spec, &mut out);
    }
    out
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

fn conv2d_backward_k3s1p1(x: &Tensor, weight: &[f64], dy: &Tensor, spec: &ConvSpec) -> ConvGrads {
    let (h, w) = (x.h, x.w);
    let plane = h * w;

    let db: Vec<f64> = exec::map_indexed(spec.out_ch, |oc| dy.plane(oc).iter().sum());

    // dw: for each (oc, ic, ky), three shifted dot products in one pass.
    let mut dw = vec![0.0; spec.weight_len()];
    let per_oc = spec.in_ch * 9;
    let work = plane * spec.in_ch * 18;
    exec::for_each_chunk_mut_threshold(&mut dw, per_oc, work, |oc, dw_oc| {
        let dy_plane = dy.plane(oc);
        for ic in 0..spec.in_ch {
            let x_plane = x.plane(ic);
            for ky in 0..3usize {
                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for oy in 0..h {
                    let iy = oy + ky;
                    if iy < 1 || iy - 1 >= h {
                        continue;
                    }
                    let in_row = &x_plane[(iy - 1) * w..iy * w];
                    let dy_row = &dy_plane[oy * w..(oy + 1) * w];
                    // kx = 0: in[ox - 1]; kx = 1: in[ox]; kx = 2: in[ox + 1]
                    for ox in 1..w {
                        s0 += dy_row[ox] * in_row[ox - 1];
                    }
                    let mut m = 0.0;
                    for ox in 0..w {
                        m += dy_row[ox] * in_row[ox];
                    }
                    s1 += m;
                    for ox in 0..w - 1 {
                        s2 += dy_row[ox] * in_row[ox + 1];
                    }
                }
                let base = (ic * 3 + ky) * 3;
                dw_oc[base] = s0;
                dw_oc[base + 1] = s1;
                dw_oc[base + 2] = s2;
            }
        }
    });

    // dx: correlation of dy with the flipped kernel; same row-accumulator
    // shape as the forward pass, parallel over input channels.
    let mut dx = Tensor::zeros(x.ch, h, w);
    let work = plane * spec.out_ch * 18;
    exec::for_each_chunk_mut_threshold(&mut dx.data, plane, work, |ic, dx_plane| {
        let mut acc = vec![0.0f64; w];
        for iy in 0..h {
            acc.fill(0.0);
            for oc in 0..spec.out_ch {
                let dy_plane = dy.plane(oc);
                let wbase = ((oc * spec.in_ch + ic) * 3) * 3;
                for ky in 0..3usize {
                    // forward: iy = oy + ky - 1  =>  oy = iy + 1 - ky
                    let oy = iy + 1;
                    if oy < ky || oy - ky >= h {
                        continue;
                    }
                    let oy = oy - ky;
                    let dy_row = &dy_plane[oy * w..(oy + 1) * w];
                    let wk = &weight[wbase + ky * 3..wbase + ky * 3 + 3];
                    // dx[ix] += sum_kx w[kx] * dy[ix + 1 - kx]: flipped taps.
                    accumulate_row_k3(&mut acc, dy_row, wk[2], wk[1], wk[0]);
                }
            }
            dx_plane[iy * w..(iy + 1) * w].copy_from_slice(&acc);
        }
    });

    ConvGrads { dx, dw, db }
}

fn conv2d_backward_generic(x: &Tensor, weight: &[f64], dy: &Tensor, spec: &ConvSpec) -> ConvGrads {
    let k = spec.ksize;
    let (s, p) = (spec.stride, spec.pad);
    let (oh, ow) = (dy.h, dy.w);

    let db: Vec<f64> = exec::map_indexed(spec.out_ch, |oc| dy.plane(oc).iter().sum());

    let mut dw = vec![0.0; spec.weight_len()];
    let per_oc = spec.in_ch * k * k;
    let work = oh * ow * spec.in_ch * 2 * k * k;
    exec::for_each_chunk_mut_threshold(&mut dw, per_oc, work, |oc, dw_oc| {
        let dy_plane = dy.plane(oc);
        for ic in 0..spec.in_ch {
            let x_plane = x.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let (ox0, ox1) = valid_out_range(x.w, ow, kx, s, p);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= x.h {
                            continue;
                        }
                        let in_row = &x_plane[(iy - p) * x.w..(iy - p + 1) * x.w];
                        let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                        let mut sum = 0.0;
                        for ox in ox0..ox1 {
                            sum += in_row[ox * s + kx - p] * dy_row[ox];
                        }
                        acc += sum;
                    }
                    dw_oc[(ic * k + ky) * k + kx] = acc;
                }
            }
        }
    });

    let mut dx = Tensor::zeros(x.ch, x.h, x.w);
    let in_plane = x.h * x.w;
    let work = oh * ow * spec.out_ch * 2 * k * k;
    exec::for_each_chunk_mut_threshold(&mut dx.data, in_plane, work, |ic, dx_plane| {
        for oc in 0..spec.out_ch {
            let dy_plane = dy.plane(oc);
            for ky in 0..k {
                for kx in 0..k {
                    let w = weight[((oc * spec.in_ch + ic) * k + ky) * k + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = valid_out_range(x.w, ow, kx, s, p);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= x.h {
                            continue;
                        }
                        let dx_row = &mut dx_plane[(iy - p) * x.w..(iy - p + 1) * x.w];
                        let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            dx_row[ox * s + kx - p] += w * dy_row[ox];
                        }
                    }
                }
            }
        }
    });

    ConvGrads { dx, dw, db }
}

/// Gradients of a [`conv2d`] call w.r.t. input, weights and bias.
pub fn conv2d_backward(x: &Tensor, weight: &[f64], dy: &Tensor, spec: &ConvSpec) -> ConvGrads {
    debug_assert_eq!(dy.ch, spec.out_ch);
    if spec.is_k3s1p1() {
        conv2d_backward_k3s1p1(x, weight, dy, spec)
    } else {
        conv2d_backward_generic(x, weight, dy, spec)
    }
}

//! CHW tensor of f64 values.

use crate::types::{Grid, Image};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub ch: usize,
    pub h: usize,
    pub w: usize,
}

impl Tensor {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Tensor {
            data: vec![0.0; ch * h * w],
            ch,
            h,
            w,
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor {
            data: img.values().to_vec(),
            ch: img.channels(),
            h: img.height(),
            w: img.width(),
        }
    }

    pub fn from_grid(grid: &Grid) -> Self {
        Tensor {
            data: grid.values().to_vec(),
            ch: 1,
            h: grid.height(),
            w: grid.width(),
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[f64] {
        let start = (c * self.h + y) * self.w;
        &self.data[start..start + self.w]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Channel-wise concatenation; all inputs must share H and W.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let h = parts[0].h;
        let w = parts[0].w;
        debug_assert!(parts.iter().all(|p| p.h == h && p.w == w));
        let ch = parts.iter().map(|p| p.ch).sum();
        let mut data = Vec::with_capacity(ch * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor { data, ch, h, w }
    }

    /// Extracts channels `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor {
        debug_assert!(from < to && to <= self.ch);
        Tensor {
            data: self.data[from * self.h * self.w..to * self.h * self.w].to_vec(),
            ch: to - from,
            h: self.h,
            w: self.w,
        }
    }

    /// Single-channel tensor viewed as a grid.
    pub fn to_grid(&self) -> Grid {
        debug_assert_eq!(self.ch, 1);
        Grid::from_vec(self.w, self.h, self.data.clone()).expect("consistent dims")
    }
}

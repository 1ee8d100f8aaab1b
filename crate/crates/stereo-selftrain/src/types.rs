//! Shared domain types: images, disparity maps, masks, prediction traces.
//!
//! All types here are immutable value objects once constructed; operations
//! on them are pure functions, so everything is safe to share across
//! threads. Invalid pixels are always carried in a separate [`Mask`],
//! never as sentinel values inside arithmetic.

use crate::error::{Error, Result};

/// A dense per-pixel scalar field, row-major.
///
/// The workhorse buffer for variance maps, delta maps, error maps and
/// anything else that is "one f64 per pixel" without further semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    data: Vec<f64>,
    width: usize,
    height: usize,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            data: vec![value; width * height],
            width,
            height,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{}x{} = {} values", width, height, width * height),
                format!("{} values", data.len()),
            ));
        }
        Ok(Grid {
            data,
            width,
            height,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            width: self.width,
            height: self.height,
        }
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }
}

/// Boolean per-pixel mask, row-major. `true` marks usable pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    data: Vec<bool>,
    width: usize,
    height: usize,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            data: vec![value; width * height],
            width,
            height,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{}x{}", width, height),
                format!("{} values", data.len()),
            ));
        }
        Ok(Mask {
            data,
            width,
            height,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// A multi-channel image in CHW layout with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f64>,
    channels: usize,
    width: usize,
    height: usize,
}

impl Image {
    pub fn new(channels: usize, width: usize, height: usize) -> Self {
        Image {
            data: vec![0.0; channels * width * height],
            channels,
            width,
            height,
        }
    }

    pub fn from_vec(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::shape(
                format!("{}x{}x{}", channels, height, width),
                format!("{} values", data.len()),
            ));
        }
        Ok(Image {
            data,
            channels,
            width,
            height,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels
            && self.width == other.width
            && self.height == other.height
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// One channel's row as a contiguous slice.
    pub fn row(&self, c: usize, y: usize) -> &[f64] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    /// One whole channel as a contiguous row-major slice.
    pub fn channel_plane(&self, c: usize) -> &[f64] {
        let start = c * self.height * self.width;
        &self.data[start..start + self.height * self.width]
    }

    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [f64] {
        let start = (c * self.height + y) * self.width;
        &mut self.data[start..start + self.width]
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Per-pixel horizontal disparity, in pixels at this map's own resolution.
///
/// Values are finite and non-negative; invalid pixels live in a separate
/// [`Mask`] owned by whoever loaded or generated the map.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    values: Grid,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize) -> Self {
        DisparityMap {
            values: Grid::new(width, height),
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DisparityMap {
            values: Grid::filled(width, height, value),
        }
    }

    pub fn from_grid(values: Grid) -> Self {
        DisparityMap { values }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Ok(DisparityMap {
            values: Grid::from_vec(width, height, data)?,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values.get(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values.set(x, y, v);
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.values
    }

    pub fn into_grid(self) -> Grid {
        self.values
    }

    pub fn same_shape(&self, other: &DisparityMap) -> bool {
        self.values.same_shape(&other.values)
    }
}

/// Per-pixel reliability weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMap {
    weights: Grid,
}

impl ReliabilityMap {
    /// Wraps a grid, checking every value lies in `[0, 1]`.
    pub fn new(weights: Grid) -> Result<Self> {
        if let Some(v) = weights
            .values()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!(
                "reliability weight {} outside [0, 1]",
                v
            )));
        }
        Ok(ReliabilityMap { weights })
    }

    pub fn all_ones(width: usize, height: usize) -> Self {
        ReliabilityMap {
            weights: Grid::filled(width, height, 1.0),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.weights.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.weights.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights.get(x, y)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.values().iter().sum::<f64>() / self.weights.len() as f64
    }

    /// Fraction of pixels with weight strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        let n = self
            .weights
            .values()
            .iter()
            .filter(|&&w| w < threshold)
            .count();
        n as f64 / self.weights.len() as f64
    }
}

/// A rectified stereo pair with optional ground truth.
#[derive(Debug, Clone)]
pub struct StereoSample {
    pub left: Image,
    pub right: Image,
    gt_disparity: Option<DisparityMap>,
    validity: Option<Mask>,
    pub id: String,
}

impl StereoSample {
    /// An unlabeled pair. Left and right must share their shape.
    pub fn new(left: Image, right: Image, id: impl Into<String>) -> Result<Self> {
        if !left.same_shape(&right) {
            return Err(Error::shape(left.shape_str(), right.shape_str()));
        }
        Ok(StereoSample {
            left,
            right,
            gt_disparity: None,
            validity: None,
            id: id.into(),
        })
    }

    /// Attaches ground truth. The disparity map and validity mask must both
    /// be present and match the image dimensions.
    pub fn with_ground_truth(mut self, gt: DisparityMap, validity: Mask) -> Result<Self> {
        if gt.width() != self.left.width() || gt.height() != self.left.height() {
            return Err(Error::shape(
                format!("{}x{}", self.left.height(), self.left.width()),
                format!("{}x{}", gt.height(), gt.width()),
            ));
        }
        if validity.width() != gt.width() || validity.height() != gt.height() {
            return Err(Error::shape(
                format!("{}x{}", gt.height(), gt.width()),
                format!("{}x{}", validity.height(), validity.width()),
            ));
        }
        if let Some(v) = gt
            .grid()
            .values()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::invalid(format!(
                "ground-truth disparity {} is not finite and non-negative",
                v
            )));
        }
        self.gt_disparity = Some(gt);
        self.validity = Some(validity);
        Ok(self)
    }

    pub fn gt_disparity(&self) -> Option<&DisparityMap> {
        self.gt_disparity.as_ref()
    }

    pub fn validity(&self) -> Option<&Mask> {
        self.validity.as_ref()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt_disparity.is_some()
    }

    /// Drops ground truth, e.g. to build an unlabeled split from labeled data.
    pub fn without_ground_truth(mut self) -> Self {
        self.gt_disparity = None;
        self.validity = None;
        self
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }
}

/// The ordered disparity iterates produced by one run of an iterative model.
///
/// Entry `k` is the `k`-th refinement iterate, all at the sample's original
/// resolution. Traces are immutable once produced.
#[derive(Debug, Clone)]
pub struct PredictionTrace {
    predictions: Vec<DisparityMap>,
}

impl PredictionTrace {
    /// Requires at least two iterates of identical shape.
    pub fn new(predictions: Vec<DisparityMap>) -> Result<Self> {
        if predictions.len() < 2 {
            return Err(Error::invalid(format!(
                "prediction trace needs at least 2 iterates, got {}",
                predictions.len()
            )));
        }
        let first = &predictions[0];
        for (i, p) in predictions.iter().enumerate().skip(1) {
            if !p.same_shape(first) {
                return Err(Error::shape(
                    first.grid().shape_str(),
                    format!("{} at iterate {}", p.grid().shape_str(), i),
                ));
            }
        }
        Ok(PredictionTrace { predictions })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn iterates(&self) -> &[DisparityMap] {
        &self.predictions
    }

    /// The final (most refined) prediction.
    pub fn last(&self) -> &DisparityMap {
        self.predictions.last().expect("trace is never empty")
    }

    pub fn width(&self) -> usize {
        self.predictions[0].width()
    }

    pub fn height(&self) -> usize {
        self.predictions[0].height()
    }
}

/// Disparity predictions for one sample at three input scales.
///
/// `p_high` and `p_low` are kept at their own resolutions; they are resized
/// back to `p_orig`'s shape when the variance statistic is computed.
#[derive(Debug, Clone)]
pub struct MultiScalePredictions {
    pub p_high: DisparityMap,
    pub p_orig: DisparityMap,
    pub p_low: DisparityMap,
    pub scale_high: f64,
    pub scale_low: f64,
}

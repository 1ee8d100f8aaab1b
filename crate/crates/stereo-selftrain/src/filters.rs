//! Consistency-aware soft filtering of pseudo-labels.
//!
//! Two per-pixel statistics measure how much a teacher's prediction
//! fluctuates: the variance across input resolutions
//! ([`multi_resolution_variance`]) and the mean absolute change between
//! late refinement iterates ([`iterative_delta`]). A soft threshold maps
//! each statistic to a reliability weight in `(0, 1)`; the two weights are
//! multiplied and scale a per-pixel L1 loss against the pseudo-label.
//!
//! None of these operations participates in gradient computation: they run
//! on inference-only teacher outputs, and the weighted loss treats both the
//! weights and the pseudo-label as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::resize::resize_disparity;
use crate::types::{DisparityMap, Grid, Mask, MultiScalePredictions, PredictionTrace, ReliabilityMap};

/// Parameters of the soft-threshold mapping: scale `epsilon`, threshold `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftThresholdParams {
    pub epsilon: f64,
    pub tau: f64,
}

impl SoftThresholdParams {
    pub fn new(epsilon: f64, tau: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "soft threshold scale must be positive, got {}",
                epsilon
            )));
        }
        Ok(SoftThresholdParams { epsilon, tau })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.epsilon, self.tau).map(|_| ())
    }
}

/// Orientation of the soft-threshold sigmoid.
///
/// `Decreasing` (the default) assigns lower weight to larger statistics,
/// which is what the filtering logic calls for: the more a prediction
/// fluctuates, the less it should be trusted. `Increasing` flips the sign
/// inside the exponent and exists for fidelity experiments only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmoidSign {
    #[default]
    Decreasing,
    Increasing,
}

/// Configuration of the full soft-filtering stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Soft threshold applied to the multi-resolution variance map.
    pub resolution: SoftThresholdParams,
    /// Soft threshold applied to the iteration delta map.
    pub iteration: SoftThresholdParams,
    pub enable_resolution: bool,
    pub enable_iteration: bool,
    pub sigmoid_sign: SigmoidSign,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            resolution: SoftThresholdParams {
                epsilon: 5.0,
                tau: 2.0,
            },
            iteration: SoftThresholdParams {
                epsilon: 10.0,
                tau: 0.5,
            },
            enable_resolution: true,
            enable_iteration: true,
            sigmoid_sign: SigmoidSign::Decreasing,
        }
    }
}

impl FilterConfig {
    /// A run that requests filtering must keep at least one filter enabled.
    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        self.iteration.validate()?;
        if !self.enable_resolution && !self.enable_iteration {
            return Err(Error::Config(
                "filtering requested but both consistency filters are disabled".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel population variance of the three predictions, after resizing
/// the high- and low-scale maps back to the original shape.
///
/// `sigma = (1/3) * sum_r (P_r' - mean)^2` over `r in {high, orig, low}`.
pub fn multi_resolution_variance(ms: &MultiScalePredictions) -> Result<Grid> {
    let w = ms.p_orig.width();
    let h = ms.p_orig.height();
    let high = resize_disparity(&ms.p_high, w, h)?;
    let low = resize_disparity(&ms.p_low, w, h)?;
    if !high.same_shape(&ms.p_orig) || !low.same_shape(&ms.p_orig) {
        return Err(Error::Internal(format!(
            "resized predictions disagree in shape: {} vs {} vs {}",
            high.grid().shape_str(),
            ms.p_orig.grid().shape_str(),
            low.grid().shape_str()
        )));
    }
    let mut out = Grid::new(w, h);
    let hv = high.grid().values();
    let ov = ms.p_orig.grid().values();
    let lv = low.grid().values();
    exec::for_each_chunk_mut_threshold(out.values_mut(), w, w * 12, |y, row| {
        let base = y * w;
        for (x, o) in row.iter_mut().enumerate() {
            let (a, b, c) = (hv[base + x], ov[base + x], lv[base + x]);
            // Pairwise form of (1/3) * sum (x - mean)^2: algebraically
            // identical, and exactly zero when the three values coincide.
            let (ab, bc, ac) = (a - b, b - c, a - c);
            *o = (ab * ab + bc * bc + ac * ac) / 9.0;
        }
    });
    Ok(out)
}

/// Soft-threshold mapping from a consistency statistic to reliability.
///
/// With the default decreasing orientation, `w = 1 / (1 + exp(eps*(x - tau)))`,
/// so `w(tau) = 0.5` and larger statistics give smaller weights. The
/// exponent is clamped to avoid overflow; clamping preserves monotonicity.
pub fn soft_threshold(map: &Grid, params: &SoftThresholdParams, sign: SigmoidSign) -> ReliabilityMap {
    let eps = params.epsilon;
    let tau = params.tau;
    let weights = map.map(|x| {
        let arg = match sign {
            SigmoidSign::Decreasing => eps * (x - tau),
            SigmoidSign::Increasing => -eps * (x - tau),
        };
        1.0 / (1.0 + arg.clamp(-700.0, 700.0).exp())
    });
    ReliabilityMap::new(weights).expect("sigmoid output is always in (0, 1)")
}

/// Mean absolute difference between adjacent iterates over the second half
/// of the trace.
///
/// For a trace of `n` iterates `P^1..P^n` (1-based), averages
/// `|P^{k+1} - P^k|` for `k = ceil(n/2) .. n-1`, normalizing by the number
/// of differences actually summed (`floor(n/2)`).
pub fn iterative_delta(trace: &PredictionTrace) -> Result<Grid> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "iteration delta needs at least 2 iterates, got {}",
            n
        )));
    }
    let w = trace.width();
    let h = trace.height();
    // 1-based k in [ceil(n/2), n-1] maps to 0-based pair (k-1, k).
    let first_pair = n.div_ceil(2) - 1;
    let count = (n - 1) - first_pair;
    let mut out = Grid::new(w, h);
    let iterates = trace.iterates();
    exec::for_each_chunk_mut_threshold(out.values_mut(), w, w * 4 * count, |y, row| {
        let base = y * w;
        for k in first_pair..n - 1 {
            let a = iterates[k].grid().values();
            let b = iterates[k + 1].grid().values();
            for (x, o) in row.iter_mut().enumerate() {
                *o += (b[base + x] - a[base + x]).abs();
            }
        }
        let inv = 1.0 / count as f64;
        for o in row.iter_mut() {
            *o *= inv;
        }
    });
    Ok(out)
}

/// Elementwise product of the two filter weights.
pub fn combine_weights(w_rc: &ReliabilityMap, w_ic: &ReliabilityMap) -> Result<ReliabilityMap> {
    if w_rc.width() != w_ic.width() || w_rc.height() != w_ic.height() {
        return Err(Error::shape(
            w_rc.grid().shape_str(),
            w_ic.grid().shape_str(),
        ));
    }
    let mut grid = Grid::new(w_rc.width(), w_rc.height());
    for ((o, a), b) in grid
        .values_mut()
        .iter_mut()
        .zip(w_rc.grid().values())
        .zip(w_ic.grid().values())
    {
        *o = a * b;
    }
    ReliabilityMap::new(grid)
}

/// Binary selection used by the hard-filtering ablation: weight 1 where
/// `w >= threshold` (ties select), 0 elsewhere.
pub fn hard_filter(w: &ReliabilityMap, threshold: f64) -> Result<ReliabilityMap> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "hard-filter threshold must be in [0, 1], got {}",
            threshold
        )));
    }
    let grid = w.grid().map(|v| if v >= threshold { 1.0 } else { 0.0 });
    ReliabilityMap::new(grid)
}

/// Soft-weighted pseudo-label loss: mean over valid pixels of
/// `w * |pred - pseudo|`. Returns 0 when no pixel is valid.
pub fn soft_weighted_loss(
    student_pred: &DisparityMap,
    pseudo_label: &DisparityMap,
    w_soft: &ReliabilityMap,
    valid: Option<&Mask>,
) -> Result<f64> {
    soft_weighted_loss_impl(student_pred, pseudo_label, w_soft, valid, None)
}

/// [`soft_weighted_loss`] plus its gradient w.r.t. the student prediction.
///
/// The weights and pseudo-label are constants; the gradient at pixel `i`
/// is `w_i * sign(pred_i - pseudo_i) / n_valid`.
pub fn soft_weighted_loss_with_grad(
    student_pred: &DisparityMap,
    pseudo_label: &DisparityMap,
    w_soft: &ReliabilityMap,
    valid: Option<&Mask>,
) -> Result<(f64, Grid)> {
    let mut grad = Grid::new(student_pred.width(), student_pred.height());
    let loss = soft_weighted_loss_impl(student_pred, pseudo_label, w_soft, valid, Some(&mut grad))?;
    Ok((loss, grad))
}

fn soft_weighted_loss_impl(
    student_pred: &DisparityMap,
    pseudo_label: &DisparityMap,
    w_soft: &ReliabilityMap,
    valid: Option<&Mask>,
    mut grad: Option<&mut Grid>,
) -> Result<f64> {
    if !student_pred.same_shape(pseudo_label) {
        return Err(Error::shape(
            student_pred.grid().shape_str(),
            pseudo_label.grid().shape_str(),
        ));
    }
    if w_soft.width() != student_pred.width() || w_soft.height() != student_pred.height() {
        return Err(Error::shape(
            student_pred.grid().shape_str(),
            w_soft.grid().shape_str(),
        ));
    }
    if let Some(m) = valid {
        if m.width() != student_pred.width() || m.height() != student_pred.height() {
            return Err(Error::shape(
                student_pred.grid().shape_str(),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
    }
    let pred = student_pred.grid().values();
    let pseudo = pseudo_label.grid().values();
    let weights = w_soft.grid().values();
    let n_valid = match valid {
        Some(m) => m.count_valid(),
        None => pred.len(),
    };
    if n_valid == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if let Some(m) = valid {
            if !m.values()[i] {
                continue;
            }
        }
        let diff = pred[i] - pseudo[i];
        sum += weights[i] * diff.abs();
        if let Some(g) = grad.as_deref_mut() {
            g.values_mut()[i] = weights[i] * diff.signum() / n_valid as f64;
        }
    }
    Ok(sum / n_valid as f64)
}

/// Everything the filtering stage produces for one sample, kept around for
/// logging and analysis.
#[derive(Debug, Clone)]
pub struct FilterOutputs {
    pub sigma: Grid,
    pub delta: Grid,
    pub w_rc: ReliabilityMap,
    pub w_ic: ReliabilityMap,
    pub w_soft: ReliabilityMap,
}

/// Runs both filters per `config` and combines their weights.
///
/// A disabled filter contributes an all-ones map, so its statistics are
/// still computed and reported but do not affect the combined weight.
pub fn compute_filter_outputs(
    ms: &MultiScalePredictions,
    trace: &PredictionTrace,
    config: &FilterConfig,
) -> Result<FilterOutputs> {
    let sigma = multi_resolution_variance(ms)?;
    let delta = iterative_delta(trace)?;
    let w = ms.p_orig.width();
    let h = ms.p_orig.height();
    if delta.width() != w || delta.height() != h {
        return Err(Error::shape(
            ms.p_orig.grid().shape_str(),
            delta.shape_str(),
        ));
    }
    let w_rc = if config.enable_resolution {
        soft_threshold(&sigma, &config.resolution, config.sigmoid_sign)
    } else {
        ReliabilityMap::all_ones(w, h)
    };
    let w_ic = if config.enable_iteration {
        soft_threshold(&delta, &config.iteration, config.sigmoid_sign)
    } else {
        ReliabilityMap::all_ones(w, h)
    };
    let w_soft = combine_weights(&w_rc, &w_ic)?;
    Ok(FilterOutputs {
        sigma,
        delta,
        w_rc,
        w_ic,
        w_soft,
    })
}

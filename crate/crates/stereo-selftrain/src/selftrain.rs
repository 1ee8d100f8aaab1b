//! The teacher-student self-training loop.
//!
//! One step: the teacher (inference only, never receiving gradients) runs
//! at three input scales on the clean pair; per-pixel reliability weights
//! are computed from the multi-resolution variance and the late-iteration
//! delta of its predictions; the student consumes a strongly augmented
//! copy of the pair and takes one optimizer step on the weighted L1 loss
//! against the teacher's original-resolution prediction; every
//! `ema_interval` steps the teacher is refreshed as
//! `theta_T <- lambda * theta_T + (1 - lambda) * theta_S`.
//!
//! Teacher inference and the student update are sequential within a step;
//! the three teacher scales and the samples of a batch run in parallel.
//! All parallel reductions are fixed-order, so a fixed seed reproduces the
//! loss sequence bit-for-bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::filters::{
    compute_filter_outputs, hard_filter, soft_weighted_loss_with_grad, FilterConfig,
};
use crate::io::heatmap::write_heatmap_png;
use crate::io::metrics_log::{MetricsLog, StepRecord};
use crate::io::pfm::write_pfm;
use crate::metrics::{pooled_report, EvalReport};
use crate::model::{
    backward_pass, forward_pass, infer, init_parameters, supervised_sequence_loss_with_grad,
    ModelConfig, ModelParameters,
};
use crate::nn::{one_cycle_lr, AdamW};
use crate::resize::resize_image;
use crate::types::{
    DisparityMap, Grid, Mask, MultiScalePredictions, PredictionTrace, ReliabilityMap,
    StereoSample,
};

/// Sentinel for "never refresh the teacher".
pub const EMA_NEVER: u64 = u64::MAX;

/// How pseudo-label weights enter the student loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum WeightingMode {
    /// Continuous weights from the consistency filters.
    Soft,
    /// Binary selection: weight 1 where the soft weight clears `threshold`.
    Hard { threshold: f64 },
    /// No filtering; every pixel weighs 1 (the plain self-training ablation).
    Unfiltered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    /// Upscale factor for the teacher's high-resolution pass.
    pub scale_high: f64,
    /// Downscale factor for the teacher's low-resolution pass.
    pub scale_low: f64,
    pub ema_lambda: f64,
    /// Student steps between teacher refreshes ([`EMA_NEVER`] disables them).
    pub ema_interval: u64,
    pub lr_pretrain: f64,
    pub lr_selftrain: f64,
    pub steps_pretrain: u64,
    pub steps_selftrain: u64,
    pub batch_size: usize,
    /// Decoupled weight decay of the AdamW optimizer.
    pub weight_decay: f64,
    /// One-cycle schedule: warmup fraction and final lr factor.
    pub warmup_frac: f64,
    pub final_lr_factor: f64,
    /// Per-iterate decay of the supervised sequence loss.
    pub gamma: f64,
    pub weighting: WeightingMode,
    /// Evaluate on the held-out set every this many steps (0 = only at the end).
    pub eval_interval: u64,
    /// Cycle pretraining inputs through {0.5x, 1x, 2x} sizes so the
    /// teacher's multi-scale passes later run in-distribution.
    pub pretrain_scale_jitter: bool,
    /// Teacher refinement iterations during self-training (None = the
    /// model's configured count). Running the teacher past its trained
    /// horizon exposes iteration instability to the delta filter.
    pub teacher_iters: Option<usize>,
    pub csf: FilterConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            scale_high: 2.0,
            scale_low: 0.5,
            ema_lambda: 0.99,
            ema_interval: 100,
            lr_pretrain: 2e-4,
            lr_selftrain: 1e-4,
            steps_pretrain: 2000,
            steps_selftrain: 1000,
            batch_size: 1,
            weight_decay: 1e-4,
            warmup_frac: 0.05,
            final_lr_factor: 0.01,
            gamma: 0.9,
            weighting: WeightingMode::Soft,
            eval_interval: 0,
            pretrain_scale_jitter: false,
            teacher_iters: None,
            csf: FilterConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_lambda > 0.0 && self.ema_lambda <= 1.0) {
            return Err(Error::Config(format!(
                "ema_lambda must be in (0, 1] (1 freezes the teacher), got {}",
                self.ema_lambda
            )));
        }
        if self.ema_interval == 0 {
            return Err(Error::Config(
                "ema_interval must be >= 1 (use EMA_NEVER to disable refreshes)".into(),
            ));
        }
        if !(self.scale_high > 1.0 && self.scale_low < 1.0 && self.scale_low > 0.0) {
            return Err(Error::Config(format!(
                "scales must satisfy scale_high > 1 > scale_low > 0, got {} / {}",
                self.scale_high, self.scale_low
            )));
        }
        if !(self.lr_pretrain > 0.0 && self.lr_selftrain > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1]".into()));
        }
        if let Some(n) = self.teacher_iters {
            if n < 2 {
                return Err(Error::Config(format!(
                    "teacher_iters must be at least 2, got {n}"
                )));
            }
        }
        match self.weighting {
            WeightingMode::Unfiltered => {
                // Filtering not requested; filter enable flags are irrelevant.
                self.csf.resolution.validate()?;
                self.csf.iteration.validate()?;
            }
            WeightingMode::Soft => self.csf.validate()?,
            WeightingMode::Hard { threshold } => {
                self.csf.validate()?;
                if !(0.0..=1.0).contains(&threshold) {
                    return Err(Error::Config(format!(
                        "hard-filter threshold must be in [0, 1], got {threshold}"
                    )));
                }
            }
        }
        self.augment.validate()?;
        Ok(())
    }
}

/// Teacher and student parameter sets plus optimizer state and the step
/// counter `k`.
pub struct TeacherStudentState {
    pub teacher: ModelParameters,
    pub student: ModelParameters,
    pub optimizer: AdamW,
    pub step: u64,
}

impl TeacherStudentState {
    /// Both models start from the same pretrained weights.
    pub fn new(init: ModelParameters, weight_decay: f64) -> Self {
        let optimizer = AdamW::new(init.entries(), weight_decay);
        TeacherStudentState {
            teacher: init.clone(),
            student: init,
            optimizer,
            step: 0,
        }
    }
}

/// Per-step metrics surfaced to the log.
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub loss: f64,
    pub mean_weight: f64,
    pub frac_low_weight: f64,
    pub ema_applied: bool,
}

/// EMA refresh: `theta_T <- lambda * theta_T + (1 - lambda) * theta_S` for
/// every learnable array; buffers are copied from the student.
pub fn ema_update(
    teacher: &mut ModelParameters,
    student: &ModelParameters,
    lambda: f64,
) -> Result<()> {
    teacher.check_same_structure(student)?;
    for (t, s) in teacher.entries_mut().iter_mut().zip(student.entries()) {
        for (tv, sv) in t.data.iter_mut().zip(&s.data) {
            // Written as s + lambda*(t - s): identical algebra, but an exact
            // fixed point when t == s, and the teacher-student gap contracts
            // by exactly lambda per update.
            *tv = sv + lambda * (*tv - sv);
        }
    }
    for (t, s) in teacher.buffers_mut().iter_mut().zip(student.buffers()) {
        t.data.copy_from_slice(&s.data);
    }
    Ok(())
}

/// Runs the teacher at the three configured input scales, with the same
/// iteration count at every scale.
///
/// Returns the three final disparity maps (each at its own resolution) and
/// the original-resolution prediction trace. Inference only; deterministic.
pub fn teacher_predict(
    teacher: &ModelParameters,
    sample: &StereoSample,
    scale_high: f64,
    scale_low: f64,
    n_iters: usize,
) -> Result<(MultiScalePredictions, PredictionTrace)> {
    let scaled_sample = |factor: f64| -> Result<StereoSample> {
        if factor == 1.0 {
            return Ok(sample.clone());
        }
        StereoSample::new(
            resize_image(&sample.left, factor)?,
            resize_image(&sample.right, factor)?,
            format!("{}@{}", sample.id, factor),
        )
    };
    let (high_r, (orig_r, low_r)) = exec::join(
        || scaled_sample(scale_high).and_then(|s| infer(teacher, &s, n_iters)),
        || {
            exec::join(
                || infer(teacher, sample, n_iters),
                || scaled_sample(scale_low).and_then(|s| infer(teacher, &s, n_iters)),
            )
        },
    );
    let (high, orig, low) = (high_r?, orig_r?, low_r?);
    let ms = MultiScalePredictions {
        p_high: high.last().clone(),
        p_orig: orig.last().clone(),
        p_low: low.last().clone(),
        scale_high,
        scale_low,
    };
    Ok((ms, orig))
}

/// Pseudo-label with reliability weights for one sample.
struct PseudoLabel {
    pseudo: DisparityMap,
    weights: ReliabilityMap,
}

fn pseudo_label_for(
    teacher: &ModelParameters,
    sample: &StereoSample,
    cfg: &SelfTrainConfig,
) -> Result<PseudoLabel> {
    let n_iters = cfg.teacher_iters.unwrap_or(teacher.config().n_iters);
    match cfg.weighting {
        WeightingMode::Unfiltered => {
            // Plain self-training: one original-scale inference, unit weights.
            let trace = infer(teacher, sample, n_iters)?;
            let pseudo = trace.last().clone();
            let weights = ReliabilityMap::all_ones(pseudo.width(), pseudo.height());
            Ok(PseudoLabel { pseudo, weights })
        }
        WeightingMode::Soft | WeightingMode::Hard { .. } => {
            // With the resolution filter disabled, skip the extra scales;
            // the variance map over three identical predictions is zero and
            // the disabled filter contributes all-ones anyway.
            let (ms, trace) = if cfg.csf.enable_resolution {
                teacher_predict(teacher, sample, cfg.scale_high, cfg.scale_low, n_iters)?
            } else {
                let trace = infer(teacher, sample, n_iters)?;
                let last = trace.last().clone();
                (
                    MultiScalePredictions {
                        p_high: last.clone(),
                        p_orig: last.clone(),
                        p_low: last,
                        scale_high: 1.0,
                        scale_low: 1.0,
                    },
                    trace,
                )
            };
            let outputs = compute_filter_outputs(&ms, &trace, &cfg.csf)?;
            let weights = match cfg.weighting {
                WeightingMode::Hard { threshold } => hard_filter(&outputs.w_soft, threshold)?,
                _ => outputs.w_soft,
            };
            Ok(PseudoLabel {
                pseudo: ms.p_orig,
                weights,
            })
        }
    }
}

fn augment_rng(seed: u64, step: u64, item: u64) -> ChaCha8Rng {
    let mix = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(step.wrapping_mul(0xD6E8FEB86659FD93))
        .wrapping_add(item.wrapping_mul(0x8CB92BA72F3D8DD7));
    ChaCha8Rng::seed_from_u64(mix)
}

fn dump_diagnostics(
    dir: &Path,
    step: u64,
    sample: &StereoSample,
    label: &PseudoLabel,
    pred: &Grid,
) {
    let _ = std::fs::create_dir_all(dir);
    let stem = format!("step{:06}_{}", step, sample.id);
    let _ = write_pfm(label.pseudo.grid(), None, &dir.join(format!("{stem}_pseudo.pfm")));
    let _ = write_pfm(pred, None, &dir.join(format!("{stem}_pred.pfm")));
    let _ = write_heatmap_png(label.weights.grid(), &dir.join(format!("{stem}_weights.png")));
    let _ = crate::io::png_image::write_image_png(
        &sample.left,
        &dir.join(format!("{stem}_left.png")),
    );
}

/// One self-training step over a batch: pseudo-labels and weights from the
/// current teacher, one AdamW step on the student, EMA refresh at interval
/// boundaries. Returns the step metrics.
pub fn selftrain_step(
    state: &mut TeacherStudentState,
    batch: &[StereoSample],
    cfg: &SelfTrainConfig,
    lr: f64,
    diagnostics_dir: Option<&Path>,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::invalid("self-training step needs a nonempty batch"));
    }
    let step_for_rng = state.step;

    struct ItemResult {
        loss: f64,
        grads: ModelParameters,
        mean_w: f64,
        frac_low: f64,
        pred: Grid,
        label: PseudoLabel,
    }
    let teacher = &state.teacher;
    let student = &state.student;
    let results: Vec<Result<ItemResult>> = exec::map_indexed(batch.len(), |i| {
        let sample = &batch[i];
        let label = pseudo_label_for(teacher, sample, cfg)?;
        let mut rng = augment_rng(cfg.seed, step_for_rng, i as u64);
        let augmented = strong_augment(sample, &cfg.augment, &mut rng);
        let pass = forward_pass(student, &augmented.left, &augmented.right, student.config().n_iters)?;
        let n = pass.full_res.len();
        let pred_map = DisparityMap::from_grid(pass.full_res[n - 1].clone());
        let (loss, grad_last) =
            soft_weighted_loss_with_grad(&pred_map, &label.pseudo, &label.weights, None)?;
        let mut d_full = vec![Grid::new(pred_map.width(), pred_map.height()); n];
        d_full[n - 1] = grad_last;
        let grads = backward_pass(student, &pass, &d_full);
        Ok(ItemResult {
            loss,
            grads,
            mean_w: label.weights.mean(),
            frac_low: label.weights.fraction_below(0.1),
            pred: pred_map.into_grid(),
            label,
        })
    });

    let mut total = state.student.zeros_like();
    let mut loss_sum = 0.0;
    let mut mean_w_sum = 0.0;
    let mut frac_low_sum = 0.0;
    let n_items = batch.len() as f64;
    for (i, r) in results.into_iter().enumerate() {
        let item = r?;
        if !item.loss.is_finite() {
            if let Some(dir) = diagnostics_dir {
                dump_diagnostics(dir, state.step, &batch[i], &item.label, &item.pred);
            }
            return Err(Error::NonFiniteLoss {
                step: state.step,
                dump_dir: diagnostics_dir.map(|d| d.to_path_buf()),
            });
        }
        loss_sum += item.loss;
        mean_w_sum += item.mean_w;
        frac_low_sum += item.frac_low;
        for (acc, g) in total.entries_mut().iter_mut().zip(item.grads.entries()) {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b / n_items;
            }
        }
    }

    state
        .optimizer
        .step(state.student.entries_mut(), total.entries(), lr);
    state.step += 1;

    let ema_applied = cfg.ema_interval != EMA_NEVER && state.step % cfg.ema_interval == 0;
    if ema_applied {
        let student_snapshot = state.student.clone();
        ema_update(&mut state.teacher, &student_snapshot, cfg.ema_lambda)?;
    }

    Ok(StepMetrics {
        loss: loss_sum / n_items,
        mean_weight: mean_w_sum / n_items,
        frac_low_weight: frac_low_sum / n_items,
        ema_applied,
    })
}

/// Epoch-shuffled index stream; the order depends only on the seed, so
/// runs with different weighting configs see identical data order.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(self.epoch),
        );
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor >= self.order.len() {
                self.epoch += 1;
                self.shuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Resizes a labeled sample: bilinear images, width-scaled disparity, and
/// nearest-neighbor validity.
fn resize_labeled_sample(s: &StereoSample, factor: f64) -> Result<StereoSample> {
    let left = resize_image(&s.left, factor)?;
    let right = resize_image(&s.right, factor)?;
    let (tw, th) = (left.width(), left.height());
    let mut out = StereoSample::new(left, right, format!("{}@{}", s.id, factor))?;
    if let (Some(gt), Some(valid)) = (s.gt_disparity(), s.validity()) {
        let gt_r = crate::resize::resize_disparity(gt, tw, th)?;
        let mut valid_r = Mask::filled(tw, th, false);
        for y in 0..th {
            let sy = if th > 1 {
                ((y as f64 * (valid.height() - 1) as f64 / (th - 1) as f64).round()) as usize
            } else {
                0
            };
            for x in 0..tw {
                let sx = if tw > 1 {
                    ((x as f64 * (valid.width() - 1) as f64 / (tw - 1) as f64).round()) as usize
                } else {
                    0
                };
                valid_r.set(x, y, valid.get(sx.min(valid.width() - 1), sy.min(valid.height() - 1)));
            }
        }
        out = out.with_ground_truth(gt_r, valid_r)?;
    }
    Ok(out)
}

/// Input-size cycle used when `pretrain_scale_jitter` is on: mostly native
/// resolution with periodic half- and double-size steps.
fn jitter_scale(step: u64) -> f64 {
    match step % 10 {
        3 => 0.5,
        7 => 2.0,
        _ => 1.0,
    }
}

/// Supervised pretraining on labeled data with the sequence loss.
pub fn pretrain(
    labeled: &[StereoSample],
    model_cfg: &ModelConfig,
    cfg: &SelfTrainConfig,
    log: &mut MetricsLog,
) -> Result<ModelParameters> {
    cfg.validate()?;
    model_cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("pretraining needs a nonempty labeled set"));
    }
    for (i, s) in labeled.iter().enumerate() {
        if !s.has_ground_truth() {
            return Err(Error::invalid(format!(
                "labeled sample {} ({}) has no ground truth",
                i, s.id
            )));
        }
    }
    let mut params = init_parameters(model_cfg, cfg.seed);
    if cfg.steps_pretrain == 0 {
        return Ok(params);
    }
    let mut opt = AdamW::new(params.entries(), cfg.weight_decay);
    let mut stream = BatchStream::new(labeled.len(), cfg.seed);
    for step in 0..cfg.steps_pretrain {
        let lr = one_cycle_lr(
            step,
            cfg.steps_pretrain,
            cfg.lr_pretrain,
            cfg.warmup_frac,
            cfg.final_lr_factor,
        );
        let indices = stream.next_batch(cfg.batch_size);
        let scale = if cfg.pretrain_scale_jitter {
            jitter_scale(step)
        } else {
            1.0
        };
        let results: Vec<Result<(f64, ModelParameters)>> =
            exec::map_indexed(indices.len(), |bi| {
                let sample;
                let s = if scale == 1.0 {
                    &labeled[indices[bi]]
                } else {
                    sample = resize_labeled_sample(&labeled[indices[bi]], scale)?;
                    &sample
                };
                let pass = forward_pass(&params, &s.left, &s.right, model_cfg.n_iters)?;
                let trace = PredictionTrace::new(
                    pass.full_res
                        .iter()
                        .cloned()
                        .map(DisparityMap::from_grid)
                        .collect(),
                )?;
                let (loss, d_full) = supervised_sequence_loss_with_grad(
                    &trace,
                    s.gt_disparity().expect("checked above"),
                    s.validity().expect("checked above"),
                    cfg.gamma,
                )?;
                let grads = backward_pass(&params, &pass, &d_full);
                Ok((loss, grads))
            });
        let mut total = params.zeros_like();
        let mut loss_sum = 0.0;
        let n_items = indices.len() as f64;
        for r in results {
            let (loss, grads) = r?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    dump_dir: None,
                });
            }
            loss_sum += loss;
            for (acc, g) in total.entries_mut().iter_mut().zip(grads.entries()) {
                for (a, b) in acc.data.iter_mut().zip(&g.data) {
                    *a += b / n_items;
                }
            }
        }
        opt.step(params.entries_mut(), total.entries(), lr);
        log.record(&StepRecord {
            step: step + 1,
            phase: "pretrain".into(),
            loss: loss_sum / n_items,
            mean_weight: 1.0,
            frac_low_weight: 0.0,
            lr,
            ema_applied: false,
        });
    }
    Ok(params)
}

/// Outcome of a self-training run.
pub struct SelfTrainOutcome {
    /// The trained student: this is the model the procedure returns.
    pub student: ModelParameters,
    pub teacher: ModelParameters,
    pub final_eval: Option<EvalReport>,
}

/// Evaluates final-iterate predictions, pooling valid pixels across samples.
pub fn evaluate_model(params: &ModelParameters, samples: &[StereoSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation needs a nonempty sample set"));
    }
    let results: Vec<Result<(DisparityMap, DisparityMap, Mask)>> =
        exec::map_indexed(samples.len(), |i| {
            let s = &samples[i];
            let gt = s
                .gt_disparity()
                .ok_or_else(|| Error::invalid(format!("sample {} has no ground truth", s.id)))?;
            let trace = infer(params, s, params.config().n_iters)?;
            Ok((trace.last().clone(), gt.clone(), s.validity().unwrap().clone()))
        });
    let items = results.into_iter().collect::<Result<Vec<_>>>()?;
    pooled_report(&items)
}

/// Runs the full self-training loop and returns the trained student.
pub fn run_selftraining(
    unlabeled: &[StereoSample],
    eval: Option<&[StereoSample]>,
    init: ModelParameters,
    cfg: &SelfTrainConfig,
    log: &mut MetricsLog,
    diagnostics_dir: Option<&Path>,
) -> Result<SelfTrainOutcome> {
    cfg.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::invalid(
            "self-training needs a nonempty unlabeled set",
        ));
    }
    let mut state = TeacherStudentState::new(init, cfg.weight_decay);
    if cfg.steps_selftrain == 0 {
        let final_eval = eval.map(|e| evaluate_model(&state.student, e)).transpose()?;
        return Ok(SelfTrainOutcome {
            student: state.student,
            teacher: state.teacher,
            final_eval,
        });
    }
    let mut stream = BatchStream::new(unlabeled.len(), cfg.seed);
    for step in 0..cfg.steps_selftrain {
        let lr = one_cycle_lr(
            step,
            cfg.steps_selftrain,
            cfg.lr_selftrain,
            cfg.warmup_frac,
            cfg.final_lr_factor,
        );
        let indices = stream.next_batch(cfg.batch_size);
        let batch: Vec<StereoSample> = indices
            .iter()
            .map(|&i| unlabeled[i].clone().without_ground_truth())
            .collect();
        let metrics = selftrain_step(&mut state, &batch, cfg, lr, diagnostics_dir)?;
        log.record(&StepRecord {
            step: state.step,
            phase: "selftrain".into(),
            loss: metrics.loss,
            mean_weight: metrics.mean_weight,
            frac_low_weight: metrics.frac_low_weight,
            lr,
            ema_applied: metrics.ema_applied,
        });
        if let (Some(eval_set), true) = (
            eval,
            cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0,
        ) {
            let report = evaluate_model(&state.student, eval_set)?;
            log.push_line(format!(
                "eval step={} epe={:.9e} d1={:.9e} n_valid={}",
                state.step, report.epe, report.d1, report.n_valid
            ));
        }
    }
    let final_eval = eval.map(|e| evaluate_model(&state.student, e)).transpose()?;
    if let Some(r) = &final_eval {
        log.push_line(format!(
            "eval step={} epe={:.9e} d1={:.9e} n_valid={}",
            state.step, r.epe, r.d1, r.n_valid
        ));
    }
    Ok(SelfTrainOutcome {
        student: state.student,
        teacher: state.teacher,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{domain_a, generate_set};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            feature_channels: 8,
            hidden_channels: 8,
            downsample_factor: 4,
            n_iters: 3,
            max_disparity: 8.0,
        }
    }

    fn tiny_cfg() -> SelfTrainConfig {
        SelfTrainConfig {
            steps_pretrain: 2,
            steps_selftrain: 2,
            batch_size: 1,
            seed: 11,
            ..SelfTrainConfig::default()
        }
    }

    fn tiny_samples(n: usize) -> Vec<StereoSample> {
        generate_set(&domain_a(32, 20, 5.0, 3), 0, n).unwrap()
    }

    #[test]
    fn ema_matches_paper_arithmetic() {
        let cfg = tiny_model();
        let mut teacher = init_parameters(&cfg, 0);
        let mut student = init_parameters(&cfg, 0);
        for e in teacher.entries_mut() {
            e.data.fill(1.0);
        }
        for e in student.entries_mut() {
            e.data.fill(0.0);
        }
        ema_update(&mut teacher, &student, 0.99).unwrap();
        for e in teacher.entries() {
            for &v in &e.data {
                assert!((v - 0.99).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ema_fixed_point_when_equal() {
        let cfg = tiny_model();
        let mut teacher = init_parameters(&cfg, 5);
        let student = teacher.clone();
        ema_update(&mut teacher, &student, 0.99).unwrap();
        assert_eq!(teacher, student);
    }

    #[test]
    fn ema_gap_decays_geometrically() {
        let cfg = tiny_model();
        let mut teacher = init_parameters(&cfg, 1);
        let student = init_parameters(&cfg, 2);
        let lambda: f64 = 0.99;
        let gap0: Vec<Vec<f64>> = teacher
            .entries()
            .iter()
            .zip(student.entries())
            .map(|(t, s)| t.data.iter().zip(&s.data).map(|(a, b)| a - b).collect())
            .collect();
        let m = 7;
        for _ in 0..m {
            ema_update(&mut teacher, &student, lambda).unwrap();
        }
        let factor = lambda.powi(m);
        for (ei, (t, s)) in teacher.entries().iter().zip(student.entries()).enumerate() {
            for (i, (tv, sv)) in t.data.iter().zip(&s.data).enumerate() {
                let want = gap0[ei][i] * factor;
                assert!(
                    ((tv - sv) - want).abs() < 1e-6,
                    "gap deviates from lambda^m law"
                );
            }
        }
    }

    #[test]
    fn ema_rejects_structure_mismatch() {
        let mut teacher = init_parameters(&tiny_model(), 0);
        let student = init_parameters(
            &ModelConfig {
                feature_channels: 16,
                ..tiny_model()
            },
            0,
        );
        assert!(matches!(
            ema_update(&mut teacher, &student, 0.99),
            Err(Error::StructureMismatch(_))
        ));
    }

    #[test]
    fn pretrain_zero_steps_returns_initialization() {
        let samples = tiny_samples(2);
        let cfg = SelfTrainConfig {
            steps_pretrain: 0,
            ..tiny_cfg()
        };
        let mut log = MetricsLog::in_memory();
        let got = pretrain(&samples, &tiny_model(), &cfg, &mut log).unwrap();
        let want = init_parameters(&tiny_model(), cfg.seed);
        assert_eq!(got, want);
    }

    #[test]
    fn pretrain_requires_labeled_samples() {
        let mut log = MetricsLog::in_memory();
        assert!(matches!(
            pretrain(&[], &tiny_model(), &tiny_cfg(), &mut log),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn one_step_decreases_fixed_batch_loss() {
        let samples = tiny_samples(1);
        let model_cfg = tiny_model();
        let cfg = SelfTrainConfig {
            steps_pretrain: 1,
            lr_pretrain: 1e-4,
            ..tiny_cfg()
        };
        let s = &samples[0];
        let loss_of = |p: &ModelParameters| {
            let trace = infer(p, s, model_cfg.n_iters).unwrap();
            crate::model::supervised_sequence_loss(
                &trace,
                s.gt_disparity().unwrap(),
                s.validity().unwrap(),
                cfg.gamma,
            )
            .unwrap()
        };
        let init = init_parameters(&model_cfg, cfg.seed);
        let before = loss_of(&init);
        let mut log = MetricsLog::in_memory();
        let after_params = pretrain(&samples, &model_cfg, &cfg, &mut log).unwrap();
        let after = loss_of(&after_params);
        assert!(
            after < before,
            "one small step did not descend: {} -> {}",
            before,
            after
        );
    }

    #[test]
    fn selftrain_zero_steps_returns_init_weights() {
        let samples = tiny_samples(2);
        let init = init_parameters(&tiny_model(), 3);
        let cfg = SelfTrainConfig {
            steps_selftrain: 0,
            ..tiny_cfg()
        };
        let mut log = MetricsLog::in_memory();
        let out = run_selftraining(&samples, None, init.clone(), &cfg, &mut log, None).unwrap();
        assert_eq!(out.student, init);
        assert_eq!(out.teacher, init);
    }

    #[test]
    fn selftrain_requires_unlabeled_samples() {
        let init = init_parameters(&tiny_model(), 3);
        let mut log = MetricsLog::in_memory();
        assert!(matches!(
            run_selftraining(&[], None, init, &tiny_cfg(), &mut log, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ema_fires_exactly_at_interval_boundaries() {
        let samples = tiny_samples(2);
        let init = init_parameters(&tiny_model(), 3);
        let cfg = SelfTrainConfig {
            steps_selftrain: 0,
            ema_interval: 3,
            ..tiny_cfg()
        };
        let mut state = TeacherStudentState::new(init, cfg.weight_decay);
        let mut fired = Vec::new();
        for step in 0..6u64 {
            let teacher_before = state.teacher.clone();
            let m = selftrain_step(&mut state, &samples[..1], &cfg, 1e-4, None).unwrap();
            fired.push(m.ema_applied);
            if !m.ema_applied {
                assert_eq!(
                    teacher_before, state.teacher,
                    "teacher changed outside an EMA boundary at step {}",
                    step
                );
            } else {
                assert!(teacher_before.max_abs_diff(&state.teacher) > 0.0);
            }
        }
        assert_eq!(fired, vec![false, false, true, false, false, true]);
    }

    #[test]
    fn fully_filtered_batch_changes_student_only_by_weight_decay() {
        let samples = tiny_samples(1);
        let init = init_parameters(&tiny_model(), 3);
        // tau -> -inf on the decreasing sigmoid drives every weight to ~0.
        let mut cfg = tiny_cfg();
        cfg.csf.resolution.tau = -1e9;
        cfg.csf.iteration.tau = -1e9;
        let lr = 1e-3;
        let mut state = TeacherStudentState::new(init.clone(), cfg.weight_decay);
        let metrics = selftrain_step(&mut state, &samples[..1], &cfg, lr, None).unwrap();
        assert!(metrics.loss.abs() < 1e-200, "loss {} not ~0", metrics.loss);
        assert!(metrics.mean_weight < 1e-200);
        // Weight-decay-only prediction: p * (1 - lr * wd).
        let decay = 1.0 - lr * cfg.weight_decay;
        for (after, before) in state.student.entries().iter().zip(init.entries()) {
            for (a, b) in after.data.iter().zip(&before.data) {
                let want = b * decay;
                assert!(
                    (a - want).abs() <= 1e-12 * (1.0 + want.abs()),
                    "student moved beyond weight decay: {} vs {}",
                    a,
                    want
                );
            }
        }
    }

    #[test]
    fn unfiltered_mode_equals_all_ones_weights() {
        let samples = tiny_samples(1);
        let init = init_parameters(&tiny_model(), 3);
        let mut cfg_unfiltered = tiny_cfg();
        cfg_unfiltered.weighting = WeightingMode::Unfiltered;
        // Soft mode with thresholds so permissive every weight saturates to 1.
        let mut cfg_ones = tiny_cfg();
        cfg_ones.csf.resolution.tau = 1e9;
        cfg_ones.csf.iteration.tau = 1e9;

        let mut s1 = TeacherStudentState::new(init.clone(), cfg_unfiltered.weight_decay);
        let m1 = selftrain_step(&mut s1, &samples[..1], &cfg_unfiltered, 1e-4, None).unwrap();
        let mut s2 = TeacherStudentState::new(init, cfg_ones.weight_decay);
        let m2 = selftrain_step(&mut s2, &samples[..1], &cfg_ones, 1e-4, None).unwrap();
        assert_eq!(m1.loss, m2.loss);
        assert_eq!(s1.student, s2.student);
    }

    #[test]
    fn run_is_deterministic_for_fixed_seed() {
        let samples = tiny_samples(3);
        let init = init_parameters(&tiny_model(), 3);
        let cfg = SelfTrainConfig {
            steps_selftrain: 3,
            ..tiny_cfg()
        };
        let mut log_a = MetricsLog::in_memory();
        let out_a =
            run_selftraining(&samples, None, init.clone(), &cfg, &mut log_a, None).unwrap();
        let mut log_b = MetricsLog::in_memory();
        let out_b = run_selftraining(&samples, None, init, &cfg, &mut log_b, None).unwrap();
        assert_eq!(log_a.lines(), log_b.lines());
        assert_eq!(out_a.student, out_b.student);
    }

    #[test]
    fn degenerate_equal_scales_give_zero_variance() {
        let samples = tiny_samples(1);
        let params = init_parameters(&tiny_model(), 3);
        let (ms, trace) = teacher_predict(&params, &samples[0], 1.0, 1.0, 3).unwrap();
        let sigma = crate::filters::multi_resolution_variance(&ms).unwrap();
        for &v in sigma.values() {
            assert_eq!(v, 0.0);
        }
        assert_eq!(trace.len(), 3);
        // Repeated call is identical.
        let (ms2, _) = teacher_predict(&params, &samples[0], 1.0, 1.0, 3).unwrap();
        assert_eq!(ms.p_orig.grid().values(), ms2.p_orig.grid().values());
    }
}

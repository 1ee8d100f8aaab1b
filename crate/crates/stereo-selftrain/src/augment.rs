//! Strong photometric augmentations for the student's input.
//!
//! Only appearance changes, never geometry: no flips, crops or warps, so
//! the augmented pair stays pixel-aligned with the pseudo-labels computed
//! from the clean pair. Saturation and brightness use one shared factor
//! for both views; occlusion rectangles hit the right view only; noise and
//! blur are drawn per view. Ground truth and validity pass through
//! untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Image, StereoSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub saturation_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub occlusion_count_range: (u32, u32),
    /// Rectangle edge lengths in pixels at a 256-px-wide image; scaled
    /// linearly with actual width.
    pub occlusion_size_range: (f64, f64),
    pub gaussian_noise_std_range: (f64, f64),
    pub gaussian_blur_sigma_range: (f64, f64),
    pub prob_saturation: f64,
    pub prob_brightness: f64,
    pub prob_occlusion: f64,
    pub prob_noise: f64,
    pub prob_blur: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            saturation_range: (0.0, 1.4),
            brightness_range: (0.8, 1.2),
            occlusion_count_range: (0, 2),
            occlusion_size_range: (20.0, 60.0),
            gaussian_noise_std_range: (0.0, 0.02),
            gaussian_blur_sigma_range: (0.0, 1.0),
            prob_saturation: 0.5,
            prob_brightness: 0.5,
            prob_occlusion: 0.5,
            prob_noise: 0.5,
            prob_blur: 0.5,
        }
    }
}

impl AugmentConfig {
    /// All augmentations disabled; the identity transform.
    pub fn disabled() -> Self {
        AugmentConfig {
            prob_saturation: 0.0,
            prob_brightness: 0.0,
            prob_occlusion: 0.0,
            prob_noise: 0.0,
            prob_blur: 0.0,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = [
            ("saturation_range", self.saturation_range),
            ("brightness_range", self.brightness_range),
            ("occlusion_size_range", self.occlusion_size_range),
            ("gaussian_noise_std_range", self.gaussian_noise_std_range),
            ("gaussian_blur_sigma_range", self.gaussian_blur_sigma_range),
        ];
        for (name, (lo, hi)) in ordered {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} must be ordered, got ({lo}, {hi})")));
            }
        }
        if self.occlusion_count_range.0 > self.occlusion_count_range.1 {
            return Err(Error::Config("occlusion_count_range must be ordered".into()));
        }
        for (name, p) in [
            ("prob_saturation", self.prob_saturation),
            ("prob_brightness", self.prob_brightness),
            ("prob_occlusion", self.prob_occlusion),
            ("prob_noise", self.prob_noise),
            ("prob_blur", self.prob_blur),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

fn apply_saturation(img: &mut Image, factor: f64) {
    let c = img.channels();
    if c < 2 {
        return;
    }
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut gray = 0.0;
            for ch in 0..c {
                gray += img.get(ch, x, y);
            }
            gray /= c as f64;
            for ch in 0..c {
                let v = img.get(ch, x, y);
                img.set(ch, x, y, gray + factor * (v - gray));
            }
        }
    }
}

fn apply_brightness(img: &mut Image, factor: f64) {
    for v in img.values_mut() {
        *v *= factor;
    }
}

/// Replaces a rectangle with its own per-channel mean.
fn apply_mean_occlusion(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize) {
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    for c in 0..img.channels() {
        let mut mean = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                mean += img.get(c, x, y);
            }
        }
        mean /= n;
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(c, x, y, mean);
            }
        }
    }
}

fn apply_gaussian_noise(img: &mut Image, std: f64, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    for v in img.values_mut() {
        // Box-Muller keeps this free of distribution-crate versioning.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *v += std * z;
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-0.5 * (d / sigma).powi(2)).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn apply_gaussian_blur(img: &mut Image, sigma: f64) {
    if sigma <= 1e-3 {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    // Separable blur with edge clamping.
    let mut tmp = img.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sx = (x + i).saturating_sub(radius).min(w - 1);
                    acc += k * img.get(ch, sx, y);
                }
                tmp.set(ch, x, y, acc);
            }
        }
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sy = (y + i).saturating_sub(radius).min(h - 1);
                    acc += k * tmp.get(ch, x, sy);
                }
                img.set(ch, x, y, acc);
            }
        }
    }
}

fn clamp_unit(img: &mut Image) {
    for v in img.values_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Applies the configured augmentations, returning a new sample.
///
/// Deterministic given the RNG state. Requires inputs in `[0, 1]`; output
/// is clamped back to `[0, 1]`.
pub fn strong_augment(
    sample: &StereoSample,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> StereoSample {
    let mut left = sample.left.clone();
    let mut right = sample.right.clone();
    let mut touched = false;

    // Fixed decision order keeps runs reproducible.
    if rng.gen_bool(config.prob_saturation) {
        let (lo, hi) = config.saturation_range;
        let f = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        apply_saturation(&mut left, f);
        apply_saturation(&mut right, f);
        touched = true;
    }
    if rng.gen_bool(config.prob_occlusion) {
        let (nlo, nhi) = config.occlusion_count_range;
        let count = if nhi > nlo {
            rng.gen_range(nlo..=nhi)
        } else {
            nlo
        };
        let scale = right.width() as f64 / 256.0;
        for _ in 0..count {
            let (slo, shi) = config.occlusion_size_range;
            let rw = (rng.gen_range(slo..=shi) * scale).round().max(2.0) as usize;
            let rh = (rng.gen_range(slo..=shi) * scale).round().max(2.0) as usize;
            let x0 = rng.gen_range(0..right.width().max(2) - 1);
            let y0 = rng.gen_range(0..right.height().max(2) - 1);
            let x1 = (x0 + rw).min(right.width());
            let y1 = (y0 + rh).min(right.height());
            apply_mean_occlusion(&mut right, x0, y0, x1, y1);
            touched = true;
        }
    }
    if rng.gen_bool(config.prob_brightness) {
        let (lo, hi) = config.brightness_range;
        let f = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        apply_brightness(&mut left, f);
        apply_brightness(&mut right, f);
        touched = true;
    }
    if rng.gen_bool(config.prob_noise) {
        let (lo, hi) = config.gaussian_noise_std_range;
        let std_l = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let std_r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        apply_gaussian_noise(&mut left, std_l, rng);
        apply_gaussian_noise(&mut right, std_r, rng);
        touched = true;
    }
    if rng.gen_bool(config.prob_blur) {
        let (lo, hi) = config.gaussian_blur_sigma_range;
        let s_l = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let s_r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        apply_gaussian_blur(&mut left, s_l);
        apply_gaussian_blur(&mut right, s_r);
        touched = true;
    }
    if touched {
        clamp_unit(&mut left);
        clamp_unit(&mut right);
    }

    let mut out = StereoSample::new(left, right, sample.id.clone())
        .expect("augmentation preserves shapes");
    if let (Some(gt), Some(valid)) = (sample.gt_disparity(), sample.validity()) {
        out = out
            .with_ground_truth(gt.clone(), valid.clone())
            .expect("ground truth dimensions unchanged");
    }
    out
}

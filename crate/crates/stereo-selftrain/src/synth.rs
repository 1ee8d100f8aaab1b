//! Procedural stereo pairs with exact ground truth.
//!
//! A scene is a stack of analytic layers (a full-frame background plus
//! textured shapes), each at a constant disparity, ordered so that larger
//! disparities are closer and occlude. Layer content is defined in left
//! image coordinates; a surface point at left column `u` on a layer with
//! disparity `d` appears at column `u + d` in the right view, so the right
//! image at column `x` shows `left(x - d)` for whichever layer is
//! frontmost there.
//!
//! Ground truth is the frontmost layer's disparity at every left pixel;
//! validity marks left pixels whose correspondence lands inside the right
//! image on the same layer (everything else is occluded by construction).
//! Right-view regions that are invisible from the left can optionally be
//! filled with noise, which makes them unmatchable, as they would be with
//! a real sensor.
//!
//! Two texture families ("checker" and "value noise") stand in for two
//! data domains with different appearance statistics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{DisparityMap, Grid, Image, Mask, StereoSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Multi-octave interpolated lattice noise.
    ValueNoise,
    /// Checkerboard with per-cell brightness jitter.
    Checker,
}

/// Appearance statistics of a generated domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureParams {
    pub kind: TextureKind,
    /// Base feature size in pixels (lattice spacing or checker cell).
    pub scale: f64,
    /// Octave count for value noise.
    pub octaves: u32,
    /// Contrast of the primary pattern, in [0, 1].
    pub contrast: f64,
    /// Amplitude of an extra fine-grained noise overlay.
    pub noise_overlay: f64,
    /// Floor of the low-frequency contrast modulation mask; 1.0 disables
    /// it, small values produce weakly textured (ambiguous) patches.
    pub contrast_floor: f64,
    /// Amplitude of horizontally periodic stripes. Periodic texture along
    /// the epipolar direction creates aliased match hypotheses.
    pub stripe_amp: f64,
    /// Stripe period in pixels.
    pub stripe_period: f64,
    /// Fraction of the frame (roughly) covered by stripe patches.
    pub stripe_coverage: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            kind: TextureKind::ValueNoise,
            scale: 6.0,
            octaves: 3,
            contrast: 0.6,
            noise_overlay: 0.08,
            contrast_floor: 1.0,
            stripe_amp: 0.0,
            stripe_period: 5.0,
            stripe_coverage: 0.25,
        }
    }
}

/// What to put in right-view pixels that have no left correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionFill {
    /// Unmatchable random noise (default).
    #[default]
    Noise,
    /// The layer's own texture, as if the surface were visible.
    LayerTexture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    /// Total layer count including the background.
    pub n_layers: usize,
    /// Disparities are drawn from this closed interval, px.
    pub disparity_range: (f64, f64),
    pub texture: TextureParams,
    pub occlusion_fill: OcclusionFill,
    /// Domain seed; combined with the per-sample seed.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            width: 256,
            height: 128,
            n_layers: 3,
            disparity_range: (0.0, 32.0),
            texture: TextureParams::default(),
            occlusion_fill: OcclusionFill::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "synthetic frames must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.n_layers < 1 {
            return Err(Error::Config("need at least one layer".into()));
        }
        let (lo, hi) = self.disparity_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::Config(format!(
                "disparity range must satisfy 0 <= lo <= hi, got [{}, {}]",
                lo, hi
            )));
        }
        Ok(())
    }
}

/// Preset for the "source" domain: high-contrast checkerboard textures
/// with mild weak-texture patches.
pub fn domain_a(width: usize, height: usize, max_disparity: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        width,
        height,
        n_layers: 3,
        disparity_range: (0.5, max_disparity),
        texture: TextureParams {
            kind: TextureKind::Checker,
            scale: 7.0,
            octaves: 2,
            contrast: 0.9,
            noise_overlay: 0.12,
            contrast_floor: 0.55,
            stripe_amp: 0.0,
            stripe_period: 5.0,
            stripe_coverage: 0.0,
        },
        occlusion_fill: OcclusionFill::Noise,
        seed,
    }
}

/// Preset for the "target" domain: value-noise textures with strong
/// low-contrast dips and horizontally periodic stripe patches, plus one
/// extra layer. The dips and stripes are locally ambiguous to match; the
/// extra layer adds occlusion.
pub fn domain_b(width: usize, height: usize, max_disparity: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        width,
        height,
        n_layers: 4,
        disparity_range: (0.5, max_disparity),
        texture: TextureParams {
            kind: TextureKind::ValueNoise,
            scale: 7.0,
            octaves: 3,
            contrast: 0.7,
            noise_overlay: 0.03,
            contrast_floor: 0.02,
            stripe_amp: 0.55,
            stripe_period: 6.0,
            stripe_coverage: 0.35,
        },
        occlusion_fill: OcclusionFill::Noise,
        seed,
    }
}

fn hash64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn hash_unit(seed: u64, tag: u64, a: i64, b: i64) -> f64 {
    let h = hash64(
        seed ^ hash64(tag) ^ (a as u64).wrapping_mul(0x8CB92BA72F3D8DD7)
            ^ (b as u64).wrapping_mul(0xD6E8FEB86659FD93),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth interpolated lattice noise in [0, 1].
fn value_noise(seed: u64, tag: u64, x: f64, y: f64, scale: f64, octaves: u32) -> f64 {
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut s = scale.max(1.0);
    for o in 0..octaves.max(1) {
        let fx = x / s;
        let fy = y / s;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let sx = tx * tx * (3.0 - 2.0 * tx);
        let sy = ty * ty * (3.0 - 2.0 * ty);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let otag = tag.wrapping_add(o as u64).wrapping_mul(0x100000001B3);
        let v00 = hash_unit(seed, otag, ix, iy);
        let v10 = hash_unit(seed, otag, ix + 1, iy);
        let v01 = hash_unit(seed, otag, ix, iy + 1);
        let v11 = hash_unit(seed, otag, ix + 1, iy + 1);
        let top = v00 + (v10 - v00) * sx;
        let bot = v01 + (v11 - v01) * sx;
        total += amp * (top + (bot - top) * sy);
        norm += amp;
        amp *= 0.5;
        s = (s * 0.5).max(1.0);
    }
    total / norm
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Background; covers everything.
    Full,
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    shape: Shape,
    disparity: f64,
    /// Per-channel tint of the layer texture.
    color: [f64; 3],
    tex_seed: u64,
}

struct Scene {
    layers: Vec<Layer>,
    texture: TextureParams,
    noise_seed: u64,
}

impl Scene {
    /// Index of the frontmost layer covering left-coordinate `(u, y)`.
    /// Layers are sorted by disparity ascending, so the highest index wins.
    fn top_left(&self, u: f64, y: f64) -> usize {
        let mut top = 0;
        for (i, l) in self.layers.iter().enumerate().skip(1) {
            if l.shape.contains(u, y) {
                top = i;
            }
        }
        top
    }

    /// Index of the frontmost layer visible at right-image column `x`.
    fn top_right(&self, x: f64, y: f64) -> usize {
        let mut top = 0;
        for (i, l) in self.layers.iter().enumerate().skip(1) {
            if l.shape.contains(x - l.disparity, y) {
                top = i;
            }
        }
        top
    }

    fn texel(&self, layer: usize, u: f64, y: f64) -> [f64; 3] {
        let l = &self.layers[layer];
        let t = &self.texture;
        let pattern = match t.kind {
            TextureKind::ValueNoise => value_noise(l.tex_seed, 1, u, y, t.scale, t.octaves),
            TextureKind::Checker => {
                let cx = (u / t.scale).floor();
                let cy = (y / t.scale).floor();
                let parity = ((cx as i64 + cy as i64).rem_euclid(2)) as f64;
                let jitter = hash_unit(l.tex_seed, 2, cx as i64, cy as i64);
                0.15 + 0.7 * (0.25 + 0.5 * parity) + 0.2 * (jitter - 0.5)
            }
        };
        // Low-frequency contrast modulation: patches where the pattern
        // fades toward contrast_floor carry little matching signal.
        let local_contrast = if t.contrast_floor < 1.0 {
            let m = value_noise(l.tex_seed, 4, u, y, t.scale * 4.0, 1);
            let gate = (m * 1.6 - 0.3).clamp(0.0, 1.0);
            t.contrast * (t.contrast_floor + (1.0 - t.contrast_floor) * gate)
        } else {
            t.contrast
        };
        // Horizontally periodic stripe patches: ambiguous along the
        // epipolar line by construction.
        let stripes = if t.stripe_amp > 0.0 {
            let gate_noise = value_noise(l.tex_seed, 5, u, y, t.scale * 5.0, 1);
            let gate = ((gate_noise - (1.0 - t.stripe_coverage)) * 8.0).clamp(0.0, 1.0);
            t.stripe_amp * gate * (2.0 * std::f64::consts::PI * u / t.stripe_period).sin()
        } else {
            0.0
        };
        let overlay =
            t.noise_overlay * (value_noise(l.tex_seed, 3, u * 2.0, y * 2.0, 1.5, 1) - 0.5);
        let lum = 0.5 + local_contrast * (pattern - 0.5) + stripes + overlay;
        [
            (l.color[0] * lum).clamp(0.0, 1.0),
            (l.color[1] * lum).clamp(0.0, 1.0),
            (l.color[2] * lum).clamp(0.0, 1.0),
        ]
    }

    fn occlusion_noise(&self, x: f64, y: f64) -> [f64; 3] {
        [
            hash_unit(self.noise_seed, 10, x as i64, y as i64),
            hash_unit(self.noise_seed, 11, x as i64, y as i64),
            hash_unit(self.noise_seed, 12, x as i64, y as i64),
        ]
    }
}

fn build_scene(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Scene {
    let (lo, hi) = config.disparity_range;
    let w = config.width as f64;
    let h = config.height as f64;
    let mut disparities: Vec<f64> = (0..config.n_layers)
        .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect();
    disparities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut layers = Vec::with_capacity(config.n_layers);
    for (i, d) in disparities.into_iter().enumerate() {
        let shape = if i == 0 {
            Shape::Full
        } else if rng.gen_bool(0.5) {
            let cw = rng.gen_range(0.25..0.5) * w;
            let ch = rng.gen_range(0.25..0.5) * h;
            let x0 = rng.gen_range(-0.1 * w..w - 0.4 * cw);
            let y0 = rng.gen_range(-0.1 * h..h - 0.4 * ch);
            Shape::Rect {
                x0,
                y0,
                x1: x0 + cw,
                y1: y0 + ch,
            }
        } else {
            Shape::Ellipse {
                cx: rng.gen_range(0.15 * w..0.85 * w),
                cy: rng.gen_range(0.15 * h..0.85 * h),
                rx: rng.gen_range(0.12 * w..0.3 * w),
                ry: rng.gen_range(0.12 * h..0.3 * h),
            }
        };
        let color = [
            rng.gen_range(0.55..1.0),
            rng.gen_range(0.55..1.0),
            rng.gen_range(0.55..1.0),
        ];
        layers.push(Layer {
            shape,
            disparity: d,
            color,
            tex_seed: rng.gen(),
        });
    }
    Scene {
        layers,
        texture: config.texture,
        noise_seed: rng.gen(),
    }
}

/// Generates one stereo pair with dense ground truth and validity.
///
/// Deterministic in `(config, sample_seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, sample_seed: u64) -> Result<StereoSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hash64(config.seed) ^ hash64(sample_seed.wrapping_add(1)));
    let scene = build_scene(config, &mut rng);
    let w = config.width;
    let h = config.height;

    let mut left = Image::new(3, w, h);
    let mut right = Image::new(3, w, h);
    let mut gt = DisparityMap::new(w, h);
    let mut valid = Mask::filled(w, h, false);

    // Per-row rendering; rows are independent.
    let rows: Vec<(Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<f64>, Vec<bool>)> =
        exec::map_indexed(h, |yi| {
            let y = yi as f64;
            let mut lrow = Vec::with_capacity(w);
            let mut rrow = Vec::with_capacity(w);
            let mut drow = Vec::with_capacity(w);
            let mut vrow = Vec::with_capacity(w);
            for xi in 0..w {
                let x = xi as f64;
                // Left view.
                let li = scene.top_left(x, y);
                let d = scene.layers[li].disparity;
                lrow.push(scene.texel(li, x, y));
                drow.push(d);
                // Valid iff the correspondence lands in-frame on the same layer.
                let xr = x + d;
                let visible = xr >= 0.0 && xr < w as f64 && scene.top_right(xr, y) == li;
                vrow.push(visible);
                // Right view.
                let ri = scene.top_right(x, y);
                let u = x - scene.layers[ri].disparity;
                let seen_from_left =
                    u >= 0.0 && u < w as f64 && scene.top_left(u, y) == ri;
                let texel = if seen_from_left {
                    scene.texel(ri, u, y)
                } else {
                    match config.occlusion_fill {
                        OcclusionFill::Noise => scene.occlusion_noise(x, y),
                        OcclusionFill::LayerTexture => scene.texel(ri, u, y),
                    }
                };
                rrow.push(texel);
            }
            (lrow, rrow, drow, vrow)
        });

    for (yi, (lrow, rrow, drow, vrow)) in rows.into_iter().enumerate() {
        for xi in 0..w {
            for c in 0..3 {
                left.set(c, xi, yi, lrow[xi][c]);
                right.set(c, xi, yi, rrow[xi][c]);
            }
            gt.set(xi, yi, drow[xi]);
            valid.set(xi, yi, vrow[xi]);
        }
    }

    StereoSample::new(left, right, format!("synth-{:06}", sample_seed))?
        .with_ground_truth(gt, valid)
}

/// Generates `count` samples with consecutive sample seeds starting at `first_seed`.
pub fn generate_set(
    config: &SyntheticConfig,
    first_seed: u64,
    count: usize,
) -> Result<Vec<StereoSample>> {
    (0..count)
        .map(|i| generate_synthetic(config, first_seed + i as u64))
        .collect()
}

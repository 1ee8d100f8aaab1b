//! Named parameter storage with a fixed deterministic layout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, ParamEntry};

use super::config::{ModelConfig, CORR_RADIUS, DISP_ENC_CHANNELS, IN_CHANNELS};

/// Indices of one conv layer's weight and bias inside the entry list.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIdx {
    pub w: usize,
    pub b: usize,
    pub spec: ConvSpec,
}

/// Fixed ordering of every layer in the network.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub feat: [LayerIdx; 3],
    pub ctx: [LayerIdx; 3],
    pub denc: LayerIdx,
    pub gru_z: LayerIdx,
    pub gru_r: LayerIdx,
    pub gru_q: LayerIdx,
    pub head1: LayerIdx,
    pub head2: LayerIdx,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let fc = cfg.feature_channels;
        let hc = cfg.hidden_channels;
        let cc = cfg.context_channels();
        let hh = cfg.head_channels();
        let xc = cfg.gru_input_channels();
        let s2 = if cfg.downsample_factor == 4 { 2 } else { 1 };

        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |name: &str, spec: ConvSpec| -> LayerIdx {
            let w = names.len();
            names.push(format!("{name}.weight"));
            shapes.push(vec![spec.out_ch, spec.in_ch, spec.ksize, spec.ksize]);
            names.push(format!("{name}.bias"));
            shapes.push(vec![spec.out_ch]);
            LayerIdx { w, b: w + 1, spec }
        };

        let feat = [
            push("feat.conv1", ConvSpec::new(fc / 2, IN_CHANNELS, 3, 2, 1)),
            push("feat.conv2", ConvSpec::new(fc, fc / 2, 3, s2, 1)),
            push("feat.conv3", ConvSpec::new(fc, fc, 3, 1, 1)),
        ];
        let ctx = [
            push("ctx.conv1", ConvSpec::new(fc / 2, IN_CHANNELS, 3, 2, 1)),
            push("ctx.conv2", ConvSpec::new(fc, fc / 2, 3, s2, 1)),
            push("ctx.conv3", ConvSpec::new(hc + cc, fc, 3, 1, 1)),
        ];
        let denc = push("denc.conv", ConvSpec::new(DISP_ENC_CHANNELS, 1, 3, 1, 1));
        let gru_z = push("gru.convz", ConvSpec::new(hc, hc + xc, 3, 1, 1));
        let gru_r = push("gru.convr", ConvSpec::new(hc, hc + xc, 3, 1, 1));
        let gru_q = push("gru.convq", ConvSpec::new(hc, hc + xc, 3, 1, 1));
        let head1 = push("head.conv1", ConvSpec::new(hh, hc, 3, 1, 1));
        let head2 = push("head.conv2", ConvSpec::new(1, hh, 3, 1, 1));

        Layout {
            feat,
            ctx,
            denc,
            gru_z,
            gru_r,
            gru_q,
            head1,
            head2,
            names,
            shapes,
        }
    }
}

/// Learnable parameters (plus non-learnable buffers) bound to their
/// architecture config.
///
/// Entry order is fixed by [`Layout`], so teacher and student sets built
/// from the same config align one-to-one for the EMA update and the
/// optimizer. This architecture has no normalization statistics, so the
/// buffer list is empty, but the slot exists and EMA semantics for it
/// (copy, don't blend) are honored.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    params: Vec<ParamEntry>,
    buffers: Vec<ParamEntry>,
}

impl ModelParameters {
    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<ParamEntry>,
        buffers: Vec<ParamEntry>,
    ) -> Self {
        ModelParameters {
            config,
            params,
            buffers,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.params
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[ParamEntry] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.buffers
    }

    /// Same layout, all values zero. Used for gradient accumulation.
    pub fn zeros_like(&self) -> ModelParameters {
        ModelParameters {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| ParamEntry::zeros(p.name.clone(), p.shape.clone()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|p| ParamEntry::zeros(p.name.clone(), p.shape.clone()))
                .collect(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Checks that `other` has the same entry names and shapes, in order.
    pub fn check_same_structure(&self, other: &ModelParameters) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} parameter entries",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name {
                return Err(Error::StructureMismatch(format!(
                    "entry name {} vs {}",
                    a.name, b.name
                )));
            }
            if a.shape != b.shape {
                return Err(Error::StructureMismatch(format!(
                    "entry {} shape {:?} vs {:?}",
                    a.name, a.shape, b.shape
                )));
            }
        }
        if self.buffers.len() != other.buffers.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} buffer entries",
                self.buffers.len(),
                other.buffers.len()
            )));
        }
        Ok(())
    }

    /// Largest absolute difference across all entries; infinity if the
    /// structures disagree.
    pub fn max_abs_diff(&self, other: &ModelParameters) -> f64 {
        if self.check_same_structure(other).is_err() {
            return f64::INFINITY;
        }
        let mut m: f64 = 0.0;
        for (a, b) in self.params.iter().zip(&other.params) {
            for (x, y) in a.data.iter().zip(&b.data) {
                m = m.max((x - y).abs());
            }
        }
        m
    }
}

/// Number of learnable scalars for a config, summed over the layout.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg)
        .shapes
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

/// Deterministic initialization: He-uniform weights, zero biases.
///
/// The final head conv is scaled down so early refinement steps are small.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> ModelParameters {
    let layout = Layout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(layout.names.len());
    for (name, shape) in layout.names.iter().zip(&layout.shapes) {
        let len: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; len]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let scale = if name == "head.conv2.weight" { 0.1 } else { 1.0 };
            (0..len)
                .map(|_| rng.gen_range(-limit..limit) * scale)
                .collect()
        };
        params.push(ParamEntry::new(name.clone(), shape.clone(), data));
    }
    ModelParameters::from_parts(*cfg, params, Vec::new())
}

/// Closed-form parameter count, written out independently of [`Layout`]
/// so tests can cross-check the two.
pub fn parameter_count_formula(cfg: &ModelConfig) -> usize {
    let fc = cfg.feature_channels;
    let hc = cfg.hidden_channels;
    let cc = cfg.context_channels();
    let hh = cfg.head_channels();
    let xc = (2 * CORR_RADIUS + 1) + DISP_ENC_CHANNELS + cc;
    let conv = |out: usize, inp: usize| out * inp * 9 + out;
    conv(fc / 2, IN_CHANNELS)
        + conv(fc, fc / 2)
        + conv(fc, fc)
        + conv(fc / 2, IN_CHANNELS)
        + conv(fc, fc / 2)
        + conv(hc + cc, fc)
        + conv(DISP_ENC_CHANNELS, 1)
        + 3 * conv(hc, hc + xc)
        + conv(hh, hc)
        + conv(1, hh)
}

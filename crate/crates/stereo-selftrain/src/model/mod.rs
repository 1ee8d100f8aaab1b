//! A small differentiable iterative stereo network.
//!
//! The network exposes the same surface large iterative matchers do: a
//! per-iteration disparity trace at the input's own resolution, inference
//! at arbitrary scales, and a flat named-parameter view for EMA updates
//! and checkpointing. It is deliberately compact so the surrounding
//! training loop runs on a CPU.

mod config;
mod loss;
mod net;
mod params;

pub use config::{ModelConfig, CORR_RADIUS, DISPARITY_MARGIN, DISP_ENC_CHANNELS, IN_CHANNELS};
pub use loss::{supervised_sequence_loss, supervised_sequence_loss_with_grad};
pub use net::infer;
pub use params::{init_parameters, parameter_count, parameter_count_formula, ModelParameters};

pub(crate) use net::{backward_pass, forward_pass, ForwardPass};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Grid, Image, Mask, StereoSample};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_channels: 8,
            hidden_channels: 8,
            downsample_factor: 4,
            n_iters: 2,
            max_disparity: 8.0,
        }
    }

    fn test_sample(w: usize, h: usize, seed: u64) -> StereoSample {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut left = Image::new(IN_CHANNELS, w, h);
        let mut right = Image::new(IN_CHANNELS, w, h);
        for v in left.values_mut() {
            *v = next();
        }
        for v in right.values_mut() {
            *v = next();
        }
        StereoSample::new(left, right, format!("t{}", seed)).unwrap()
    }

    #[test]
    fn rejects_single_iteration() {
        let params = init_parameters(&tiny_config(), 0);
        let s = test_sample(16, 16, 1);
        assert!(infer(&params, &s, 1).is_err());
        assert!(infer(&params, &s, 2).is_ok());
    }

    #[test]
    fn rejects_too_small_images() {
        let params = init_parameters(&tiny_config(), 0);
        let s = test_sample(8, 8, 1);
        // 8x8 at downsample 4 gives a 2x2 grid: too small.
        assert!(infer(&params, &s, 2).is_err());
    }

    #[test]
    fn inference_is_deterministic() {
        let params = init_parameters(&tiny_config(), 3);
        let s = test_sample(20, 16, 2);
        let a = infer(&params, &s, 4).unwrap();
        let b = infer(&params, &s, 4).unwrap();
        for (x, y) in a.iterates().iter().zip(b.iterates()) {
            assert_eq!(x.grid().values(), y.grid().values());
        }
    }

    #[test]
    fn outputs_stay_within_disparity_bounds() {
        let cfg = tiny_config();
        for seed in 0..4 {
            let params = init_parameters(&cfg, seed);
            let s = test_sample(24, 16, seed + 10);
            let trace = infer(&params, &s, 5).unwrap();
            let bound = cfg.max_disparity * DISPARITY_MARGIN + 1e-9;
            for it in trace.iterates() {
                for &v in it.grid().values() {
                    assert!(v.is_finite());
                    assert!((-1e-9..=bound).contains(&v), "disparity {} out of bounds", v);
                }
            }
        }
    }

    #[test]
    fn trace_replays_from_mid_state() {
        let cfg = ModelConfig {
            n_iters: 6,
            ..tiny_config()
        };
        let params = init_parameters(&cfg, 5);
        let s = test_sample(24, 20, 3);
        let pass = forward_pass(&params, &s.left, &s.right, 6).unwrap();
        let (d_mid, h_mid) = pass.state_after(2);
        let replay =
            net::forward_from_state(&params, &s.left, &s.right, &d_mid, &h_mid, 3).unwrap();
        for (a, b) in replay.iter().zip(&pass.full_res[3..]) {
            assert_eq!(a.values(), b.values(), "replayed iterate differs");
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = init_parameters(&cfg, 11);
        // Move to a generic point: at init every bias is exactly zero, which
        // parks some pre-activations on the ReLU kink where finite
        // differences straddle the subgradient.
        for (ei, entry) in params.entries_mut().iter_mut().enumerate() {
            for (i, v) in entry.data.iter_mut().enumerate() {
                *v += 0.02 * ((ei * 31 + i) as f64 * 1.7).sin();
            }
        }
        let params = params;
        let s = test_sample(16, 16, 7);
        let mut gt = Grid::new(16, 16);
        let mut state = 99u64;
        for v in gt.values_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0;
        }
        let gt = crate::types::DisparityMap::from_grid(gt);
        let valid = Mask::filled(16, 16, true);
        let gamma = 0.9;

        let run_loss = |p: &ModelParameters| -> f64 {
            let trace = infer(p, &s, 2).unwrap();
            supervised_sequence_loss(&trace, &gt, &valid, gamma).unwrap()
        };
        let pass = forward_pass(&params, &s.left, &s.right, 2).unwrap();
        let trace = crate::types::PredictionTrace::new(
            pass.full_res
                .iter()
                .cloned()
                .map(crate::types::DisparityMap::from_grid)
                .collect(),
        )
        .unwrap();
        let (_, dloss) =
            supervised_sequence_loss_with_grad(&trace, &gt, &valid, gamma).unwrap();
        let grads = backward_pass(&params, &pass, &dloss);

        let h = 1e-5;
        let mut checked = 0;
        for (ei, entry) in params.entries().iter().enumerate() {
            let stride = (entry.len() / 3).max(1);
            for idx in (0..entry.len()).step_by(stride) {
                let mut plus = params.clone();
                plus.entries_mut()[ei].data[idx] += h;
                let mut minus = params.clone();
                minus.entries_mut()[ei].data[idx] -= h;
                let fd = (run_loss(&plus) - run_loss(&minus)) / (2.0 * h);
                let an = grads.entries()[ei].data[idx];
                let scale = fd.abs().max(an.abs());
                if scale < 1e-10 {
                    continue;
                }
                let rel = (fd - an).abs() / scale;
                assert!(
                    rel < 1e-3,
                    "gradient mismatch in {}[{}]: fd={} an={} rel={}",
                    entry.name,
                    idx,
                    fd,
                    an,
                    rel
                );
                checked += 1;
            }
        }
        assert!(checked > 20, "checked only {} gradient entries", checked);
    }
}

//! Minimal differentiable kernels for the recurrent stereo network.
//!
//! Everything is f64, CHW, and hand-differentiated; every backward pass is
//! validated against central finite differences in the test suite. Parallel
//! loops only ever write disjoint output regions, so results are
//! bit-identical with and without the `parallel` feature.

mod adamw;
mod conv;
mod correlation;
mod ops;
mod params;
mod schedule;
mod tensor;

pub use adamw::AdamW;
pub use conv::{conv2d, conv2d_backward, conv_out_dim, ConvGrads, ConvSpec};
pub use correlation::{correlation_lookup, correlation_lookup_backward, CorrGrads};
pub use ops::{relu, relu_backward, sigmoid_inplace, tanh_inplace};
pub use params::ParamEntry;
pub use schedule::one_cycle_lr;
pub use tensor::Tensor;

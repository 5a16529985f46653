//! Minimal dense network substrate: ReLU MLPs, reverse-mode gradients, Adam,
//! operator norms, the standard normal pdf/cdf and seeded random streams.

mod adam;
pub mod checkpoint;
pub mod counter;
mod mlp;
mod normal;
mod rng;

pub use adam::{AdamState, ScalarAdam};
pub use mlp::{hcat, induced_l1_norm, row_matrix, ForwardCache, Gradients, Layer, MlpParams};
pub use mlp::relu;
pub use normal::{std_normal_cdf, std_normal_pdf, SATURATION};
pub use rng::RngStream;

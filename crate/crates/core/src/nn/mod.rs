//! Differentiable building blocks shared by the constructive and perturbative
//! policies: linear maps, multi-head attention with masking, skip
//! connections, edge-aware graph attention and a gated recurrent cell.

mod egate;
mod gru;
mod init;
mod linear;
mod mha;

pub use egate::EgateLayer;
pub use gru::GruCell;
pub use init::uniform_init;
pub use linear::Linear;
pub use mha::{skip_connect, MhaLayer};

/// Conventional graph-attention negative slope; the activation is named but
/// its slope left open, so we pin the usual value.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

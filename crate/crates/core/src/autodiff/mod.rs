//! Reverse-mode differentiation substrate.
//!
//! A [`Tape`] records primitive operations during a forward pass and replays
//! them in reverse to accumulate gradients into a [`ParameterStore`]. Three
//! capabilities distinguish it from a plain backprop engine:
//!
//! * recording can be switched off ([`Tape::record_scope`]), so rollouts used
//!   only for their values retain nothing;
//! * gradients accumulate across backward passes — calling backward on many
//!   per-step losses sums their parameter gradients, which is what makes the
//!   stepwise training strategy equivalent to differentiating one big sum;
//! * backward can free only the nodes recorded after a [`TapeMark`], keeping
//!   an earlier subgraph (e.g. an encoder pass) alive for later steps, and
//!   the tape tracks the peak number of retained elements per epoch.

mod complexity;
mod gradcheck;
mod params;
mod tape;

pub use complexity::{fit_complexity, ComplexityFit};
pub use gradcheck::{grad_check, grad_check_directional};
pub use params::{ParamId, ParameterStore};
pub use tape::{Tape, TapeMark, Value};

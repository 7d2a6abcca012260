//! Softmax attention expressed as a truncated sum of recurrent networks.
//!
//! The exponential kernel `e^{q·k}` is expanded as `Σ_m (q·k)^m / m!` and each
//! power is factored through Kronecker powers, `(q·k)^m = q^{⊗m} · k^{⊗m}`.
//! Every order then becomes a linear recurrence over a `d^m × e` hidden
//! state. This crate provides:
//!
//! * [`reference`]: quadratic-time softmax, truncated-Taylor, linear and
//!   gated attention used as oracles;
//! * [`recurrent`]: the linear-time recurrent forms;
//! * [`kron`]: Kronecker powers and the decomposed inner-product identity;
//! * [`grad`]: analytic backward passes and finite-difference checking;
//! * [`verify`]: compiled-in verification suites with JSON-ready reports.

// Index loops mirror the summation order the kernels fix; `!(x > 0.0)`
// rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod feature_map;
pub mod grad;
pub mod io;
pub mod kron;
pub mod metrics;
pub mod recurrent;
pub mod reference;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use config::{
    clamp_logit, AttentionConfig, DenominatorMode, FeatureMapKind, GatePair, Mode,
    TaylorCoefficients, MAX_ORDER,
};
pub use error::{Error, Result};
pub use io::{tensor_read, tensor_write};
pub use recurrent::{state_elements, RecurrentState};
pub use rng::{generate_gates, generate_inputs, SplitMix64};
pub use tensor::Tensor;

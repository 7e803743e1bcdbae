//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, STEP};
pub use graph::{Graph, Var};

/// Layer-norm variance guard.
pub const LN_EPS: f64 = 1e-5;

/// Bias added to masked attention scores and logits before any softmax.
pub const MASK_BIAS: f64 = -1e9;

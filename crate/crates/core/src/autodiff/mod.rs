//! Reverse-mode differentiation over small dense tensors.
//!
//! Gradients are themselves expression graphs, so a gradient-penalty term
//! (which contains an input gradient) can be differentiated once more with
//! respect to network parameters.

mod check;
mod graph;

pub use check::check_gradients;
pub use graph::{Bindings, ExprGraph, NodeId};

//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records primitive ops in topological order. [`Graph::forward`]
//! materializes every node from named bindings and [`Graph::backward`] walks
//! the nodes in reverse, once each, accumulating vector-Jacobian products.
//! [`grad_check`] compares the result against central finite differences.

mod gradcheck;
mod graph;
mod kernels;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Bindings, Gradients, Graph, NodeId};

/// Stabilizer used by every layer normalization in this crate.
pub const LN_EPS: f64 = 1e-5;

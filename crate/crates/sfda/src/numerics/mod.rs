//! Dense matrices, reverse-mode differentiation, and the SGD optimizer.
//!
//! Everything is 64-bit: the gradient checker compares analytic gradients
//! against central finite differences at relative error 1e-4, which is
//! meaningless at lower precision. Training is single-threaded and all
//! reductions run in a fixed order, so a given seed reproduces bit-identical
//! trajectories.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{DiffGraph, NodeId};
pub use optim::{lr_at, sgd_step, zero_grads, OptimizerConfig};
pub use tensor::{Parameter, Tensor2D};

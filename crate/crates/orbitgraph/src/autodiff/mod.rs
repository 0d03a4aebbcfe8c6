//! Dense-matrix numerical core with reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{finite_difference_check, finite_difference_check_detailed, GradCheckReport, LossBuilder};
pub use matrix::Matrix;
pub use tape::{Gradients, NodeId, ParamId, Tape};

//! Scalar abstraction: all numeric kernels are generic over [`Real`],
//! implemented for `f32` and `f64`. The pipeline (datasets, training,
//! CLI) runs on the `f64` aliases exported from the crate root.

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar for matrices, dynamics and losses.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 conversion")
    }

    /// Lossy conversion from a count.
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("usize conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

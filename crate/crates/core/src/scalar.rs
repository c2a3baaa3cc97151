//! Scalar abstraction for the numeric parts of the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for lesson scores, factors, embeddings and
/// aggregate metrics. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for configuration constants.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

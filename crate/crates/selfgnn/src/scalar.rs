//! Floating-point abstraction so training can run in single or double
//! precision while graph preprocessing stays in f64.

use std::fmt;

/// Element type for dense/sparse kernels and the autodiff engine.
///
/// Training defaults to `f32`; gradient checks and the graph/diffusion
/// pipeline use `f64`. All random draws happen in f64 and are converted,
/// which keeps the two precisions structurally identical run-for-run.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + fmt::Display
    + fmt::Debug
    + Send
    + Sync
    + 'static
{
    /// Tag stored in checkpoint section headers.
    const DTYPE_TAG: u8;

    fn from_f64_lossy(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 1;
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 2;
}

//! Scalar abstraction: the numeric kernels are generic over `f32`/`f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the library is generic over.
///
/// In practice this is `f32` or `f64`; the concrete type aliases at the crate
/// root fix `f64`, which is what the CLI and benchmark harness use.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion for compile-time constants.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }

    /// Conversion to `f64` for reporting and serialization.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

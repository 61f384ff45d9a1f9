use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point scalar the network is generic over. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Real: Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn erf(self) -> Self;

    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_f32(x: f32) -> Self;

    fn as_f32(self) -> f32;
}

impl Real for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        f64::from(x)
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

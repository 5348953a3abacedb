//! Scalar abstraction shared by the lattice, coupling and bound-state code.
//!
//! Everything numeric in the momentum-space and real-space layers is written
//! against [`Real`], which is satisfied by `f32` and `f64`. Tolerances quoted
//! throughout the crate assume `f64`; the `f32` instantiation is useful for
//! quick scans where seven digits are plenty.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the simulator.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts an integer count into this scalar type.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Uniform momentum grid `k_m = -pi + 2 pi (m + offset) / n` on the Brillouin zone.
pub(crate) fn k_grid<T: Real>(n: usize, offset: T) -> impl Iterator<Item = T> {
    let two_pi = T::two_pi();
    let nf = T::from_count(n);
    (0..n).map(move |m| -T::pi() + two_pi * (T::from_count(m) + offset) / nf)
}

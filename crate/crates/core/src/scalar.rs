//! Scalar abstraction for the numeric kernel.
//!
//! Every formula in this crate is plain real arithmetic, so the whole
//! library is generic over the floating-point type. `f64` is the type
//! the tolerances in the test suite are written for; `f32` works but
//! loses the tight inverse round trips.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating scalar the library is generic over.
///
/// Implemented by `f32` and `f64` out of the box via the blanket impl.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant into the scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must be representable in the scalar type")
    }

    /// Lossy view as `f64`, used for diagnostics and error payloads.
    fn lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

/// Compensated (Neumaier) summation; keeps cross-sectional means honest
/// for large panels.
pub fn compensated_sum<F: Scalar, I: IntoIterator<Item = F>>(xs: I) -> F {
    let mut sum = F::zero();
    let mut comp = F::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

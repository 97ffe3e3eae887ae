//! Floating-point scalar abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same code
//! runs in f32 or f64. The crate root exports f64 aliases for the common types;
//! f64 is what the CLI and the test suite use.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + Sum<Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Display
    + LowerExp
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an f64 constant or config value. Panics only if the value is not
    /// representable at all (it never is for the magnitudes used here).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// Widens to f64 for diagnostics and text output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

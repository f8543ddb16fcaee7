//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All of the estimation math is written against [`Real`], so the same code
//! runs in `f64` (the default, and what the tolerances below are sized for)
//! or `f32` for embedded-style experiments.

use core::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the estimator: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerical tolerances used across the crate, in one place.
pub mod tol {
    /// Below this rotation-vector norm the Rodrigues coefficients switch to
    /// their Taylor expansions.
    pub const SMALL_ANGLE: f64 = 1e-6;
    /// Orthonormality / determinant tolerance for a valid rotation matrix.
    pub const ROTATION: f64 = 1e-9;
    /// Relative singular value cutoff under which a 3x3 matrix is treated as rank deficient.
    pub const RANK_DEFICIENT: f64 = 1e-12;
    /// Relative gap under which two singular values count as equal.
    pub const SINGULAR_TIE: f64 = 1e-9;
    /// Largest accepted condition number of the innovation matrix.
    pub const INNOVATION_CONDITION: f64 = 1e14;
    /// Symmetry tolerance on covariance-like inputs.
    pub const SYMMETRY: f64 = 1e-9;
    /// Smallest eigenvalue accepted for a "positive semidefinite" input.
    pub const PSD_EIGEN: f64 = -1e-12;
    /// Unit-norm tolerance for probe directions.
    pub const UNIT_NORM: f64 = 1e-9;
}

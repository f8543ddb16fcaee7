//! Attitude estimation from scalar measurements.
//!
//! Every sensor reading is treated as a scalar `y = aᵀ Rᵀ b`, with `a` a
//! body-frame vector and `b` an inertial one. That relation is linear in
//! `x = vec(Rᵀ)`, so the attitude can be tracked by an ordinary Kalman
//! filter on a 9-dimensional linear time-varying system. After each update
//! the estimate is projected back onto SO(3).
//!
//! The core math is generic over [`scalar::Real`] (`f32` or `f64`). The
//! simulation, configuration and I/O layers are `f64` only. The aliases
//! below name the common `f64` instantiations.
//!
//! ```
//! use scalar_attitude::{sim, DiscreteFilterF64, GainMode};
//!
//! let profile = sim::TrajectoryProfile::paper(0.01, 1000.0);
//! let suite = sim::SensorSuite::case1();
//! let mut config = suite.filter_config(profile.imu_rate).unwrap();
//! config.mode = GainMode::Riccati;
//! let filter = DiscreteFilterF64::from_rotation(config, &sim::paper_r0()).unwrap();
//! assert_eq!(filter.state().x_hat.len(), 9);
//! ```

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod measurements;
pub mod observability;
pub mod scalar;
pub mod sim;
pub mod so3;

pub use error::{Error, Result};
pub use filter::GainMode;
pub use observability::Verdict;
pub use scalar::Real;

pub type RotationMatrixF64 = so3::RotationMatrix<f64>;
pub type Vec3F64 = so3::Vec3<f64>;
pub type StateVecF64 = so3::StateVec9<f64>;
pub type FilterStateF64 = filter::FilterState<f64>;
pub type FilterConfigF64 = filter::FilterConfig<f64>;
pub type DiscreteFilterF64 = filter::DiscreteFilter<f64>;
pub type ScalarChannelF64 = measurements::ScalarChannel<f64>;
pub type ScalarMeasurementF64 = measurements::ScalarMeasurement<f64>;
pub type GramianReportF64 = observability::GramianReport<f64>;

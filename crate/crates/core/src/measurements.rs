//! Scalar measurement channels `y = aᵀ Rᵀ b` and the output matrix `C(t)`.
//!
//! Every sensor modality reduces to a body-side vector `a` and an inertial
//! side vector `b`; the filter only sees the pair evaluated at the
//! measurement time. Row `i` of `C` is `bᵢᵀ ⊗ aᵢᵀ`, so `C · vec(Rᵀ)` stacks
//! the scalars.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Dyn, OMatrix, RowSVector, U9};

use crate::error::{Error, Result};
use crate::scalar::{tol, Real};
use crate::so3::{RotationMatrix, StateVec9, Vec3};

/// Channel id carried by gyroscope records in a sensor log.
pub const GYRO_CHANNEL: &str = "gyro";

pub type KronRow<T> = RowSVector<T, 9>;

/// A possibly time-varying vector, evaluated at measurement time.
#[derive(Clone)]
pub enum VectorProvider<T: Real> {
    Constant(Vec3<T>),
    /// Samples with linear interpolation, clamped at both ends.
    Series {
        times: Vec<T>,
        values: Vec<Vec3<T>>,
    },
    /// Horizontal circle of radius `speed` at angular rate `rate` (rad/s),
    /// plus a constant vertical component.
    Circular {
        speed: T,
        rate: T,
        phase: T,
        vertical: T,
    },
    Function(Arc<dyn Fn(T) -> Vec3<T> + Send + Sync>),
}

impl<T: Real> fmt::Debug for VectorProvider<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(&(v.x, v.y, v.z)).finish(),
            Self::Series { times, .. } => write!(f, "Series({} samples)", times.len()),
            Self::Circular { speed, rate, .. } => {
                write!(f, "Circular(speed = {speed}, rate = {rate})")
            }
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl<T: Real> VectorProvider<T> {
    pub fn at(&self, t: T) -> Vec3<T> {
        match self {
            Self::Constant(v) => *v,
            Self::Series { times, values } => interpolate(times, values, t),
            Self::Circular {
                speed,
                rate,
                phase,
                vertical,
            } => {
                let angle = *rate * t + *phase;
                Vec3::new(*speed * angle.cos(), *speed * angle.sin(), *vertical)
            }
            Self::Function(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

fn interpolate<T: Real>(times: &[T], values: &[Vec3<T>], t: T) -> Vec3<T> {
    match times.len() {
        0 => Vec3::zeros(),
        1 => values[0],
        n => {
            if t <= times[0] {
                return values[0];
            }
            if t >= times[n - 1] {
                return values[n - 1];
            }
            let hi = times.partition_point(|&s| s <= t).min(n - 1);
            let lo = hi - 1;
            let span = times[hi] - times[lo];
            if span <= T::zero() {
                return values[hi];
            }
            let w = (t - times[lo]) / span;
            values[lo] * (T::one() - w) + values[hi] * w
        }
    }
}

/// What physical quantity a channel measures.
#[derive(Clone, Debug)]
pub enum ChannelKind<T: Real> {
    /// One axis (1-based) of a body-frame vector measurement `Rᵀ r`.
    VectorAxis { axis: usize },
    /// `cos ψ = h / r = e₃ᵀ Rᵀ e₃` from a barometer and a down-facing range sensor.
    Tilt,
    /// Airspeed along the body-frame probe direction `d`.
    Pitot,
    /// Height difference between two landmarks, `p_i - p_j` in the inertial frame.
    Landmark { inertial_difference: Vec3<T> },
}

/// A scalar sensor channel `y = aᵀ Rᵀ b`.
#[derive(Clone, Debug)]
pub struct ScalarChannel<T: Real> {
    pub id: String,
    pub kind: ChannelKind<T>,
    pub a: VectorProvider<T>,
    pub b: VectorProvider<T>,
    /// Variance of additive noise on `y` (landmarks: on each body-frame component).
    pub noise_variance: T,
    pub rate_hz: T,
}

impl<T: Real> ScalarChannel<T> {
    /// Noise-free sample from the true attitude at time `t`.
    pub fn sample(&self, r: &RotationMatrix<T>, t: T) -> ScalarMeasurement<T> {
        let (a, b) = match &self.kind {
            ChannelKind::Landmark {
                inertial_difference,
            } => (r.matrix().transpose() * inertial_difference, Vec3::z()),
            _ => (self.a.at(t), self.b.at(t)),
        };
        let y = match &self.kind {
            ChannelKind::Landmark {
                inertial_difference,
            } => inertial_difference.z,
            _ => a.dot(&(r.matrix().transpose() * b)),
        };
        ScalarMeasurement {
            channel_id: self.id.clone(),
            t,
            y,
            a,
            b,
        }
    }
}

/// One evaluated scalar observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMeasurement<T: Real> {
    pub channel_id: String,
    pub t: T,
    pub y: T,
    pub a: Vec3<T>,
    pub b: Vec3<T>,
}

impl<T: Real> ScalarMeasurement<T> {
    /// `aᵀ Rᵀ b` for a candidate attitude.
    pub fn predicted(&self, r: &RotationMatrix<T>) -> T {
        self.a.dot(&(r.matrix().transpose() * self.b))
    }

    pub fn row(&self) -> KronRow<T> {
        kron_row(&self.a, &self.b)
    }
}

/// `bᵀ ⊗ aᵀ`: block `j` of the row is `b_j aᵀ`.
pub fn kron_row<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> KronRow<T> {
    KronRow::from_fn(|_, k| b[k / 3] * a[k % 3])
}

/// Stacked output matrix `C(t)`, one Kronecker row per active channel.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMatrix<T: Real>(OMatrix<T, Dyn, U9>);

impl<T: Real> OutputMatrix<T> {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &OMatrix<T, Dyn, U9> {
        &self.0
    }

    pub fn from_matrix(m: OMatrix<T, Dyn, U9>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::NoActiveChannels);
        }
        Ok(Self(m))
    }

    pub fn apply(&self, x: &StateVec9<T>) -> nalgebra::DVector<T> {
        &self.0 * x
    }
}

/// Stacks `kron_row(a, b)` for each pair, preserving order.
pub fn build_output_matrix<T: Real>(pairs: &[(Vec3<T>, Vec3<T>)]) -> Result<OutputMatrix<T>> {
    if pairs.is_empty() {
        return Err(Error::NoActiveChannels);
    }
    let mut c = OMatrix::<T, Dyn, U9>::zeros(pairs.len());
    for (i, (a, b)) in pairs.iter().enumerate() {
        c.set_row(i, &kron_row(a, b));
    }
    Ok(OutputMatrix(c))
}

/// Output matrix and measurement vector for a batch of evaluated measurements.
pub fn stack_measurements<T: Real>(
    batch: &[&ScalarMeasurement<T>],
) -> Result<(OutputMatrix<T>, nalgebra::DVector<T>)> {
    let pairs: Vec<_> = batch.iter().map(|m| (m.a, m.b)).collect();
    let c = build_output_matrix(&pairs)?;
    let y = nalgebra::DVector::from_iterator(batch.len(), batch.iter().map(|m| m.y));
    Ok((c, y))
}

/// Channel id of one axis of a vector sensor, e.g. `accel_2`.
pub fn axis_channel_id(prefix: &str, axis: usize) -> String {
    format!("{prefix}_{axis}")
}

/// One channel per selected axis of the body-frame measurement `Rᵀ r`:
/// `a = e_axis`, `b = r`. Axes are 1-based.
pub fn vector_channels<T: Real>(
    prefix: &str,
    r_inertial: VectorProvider<T>,
    axes: &[usize],
    variance: T,
    rate_hz: T,
) -> Result<Vec<ScalarChannel<T>>> {
    if axes.is_empty() {
        return Err(Error::EmptyAxes(prefix.to_owned()));
    }
    check_noise_and_rate(prefix, variance, rate_hz)?;
    axes.iter()
        .map(|&axis| {
            if !(1..=3).contains(&axis) {
                return Err(Error::InvalidAxis {
                    channel: prefix.to_owned(),
                    axis,
                });
            }
            Ok(ScalarChannel {
                id: axis_channel_id(prefix, axis),
                kind: ChannelKind::VectorAxis { axis },
                a: VectorProvider::Constant(Vec3::ith(axis - 1, T::one())),
                b: r_inertial.clone(),
                noise_variance: variance,
                rate_hz,
            })
        })
        .collect()
}

/// Tilt channel: `a = b = e₃`.
pub fn tilt_channel<T: Real>(id: &str, variance: T, rate_hz: T) -> Result<ScalarChannel<T>> {
    check_noise_and_rate(id, variance, rate_hz)?;
    Ok(ScalarChannel {
        id: id.to_owned(),
        kind: ChannelKind::Tilt,
        a: VectorProvider::Constant(Vec3::z()),
        b: VectorProvider::Constant(Vec3::z()),
        noise_variance: variance,
        rate_hz,
    })
}

/// Pitot channel `y = dᵀ Rᵀ v(t)`. A non-unit `d` is normalized with a warning.
pub fn pitot_channel<T: Real>(
    id: &str,
    d: Vec3<T>,
    velocity: VectorProvider<T>,
    variance: T,
    rate_hz: T,
) -> Result<ScalarChannel<T>> {
    check_noise_and_rate(id, variance, rate_hz)?;
    let n = d.norm();
    if !(n > T::zero()) {
        return Err(Error::ZeroDirection);
    }
    let d = if (n - T::one()).abs() > T::lit(tol::UNIT_NORM) {
        log::warn!("pitot channel `{id}`: probe direction has norm {n}, normalizing");
        d / n
    } else {
        d
    };
    Ok(ScalarChannel {
        id: id.to_owned(),
        kind: ChannelKind::Pitot,
        a: VectorProvider::Constant(d),
        b: velocity,
        noise_variance: variance,
        rate_hz,
    })
}

/// Landmark channel description for a landmark pair with known inertial
/// difference. Measurements are produced per sighting with
/// [`landmark_measurement`].
pub fn landmark_channel<T: Real>(
    id: &str,
    inertial_difference: Vec3<T>,
    variance: T,
    rate_hz: T,
) -> Result<ScalarChannel<T>> {
    check_noise_and_rate(id, variance, rate_hz)?;
    Ok(ScalarChannel {
        id: id.to_owned(),
        kind: ChannelKind::Landmark {
            inertial_difference,
        },
        a: VectorProvider::Constant(Vec3::zeros()),
        b: VectorProvider::Constant(Vec3::z()),
        noise_variance: variance,
        rate_hz,
    })
}

/// Vertical-alignment measurement from one sighting of a landmark pair:
/// `a = ℓᵢᴮ - ℓⱼᴮ`, `b = e₃`, `y = e₃ᵀ(pᵢ - pⱼ)`.
pub fn landmark_measurement<T: Real>(
    channel_id: &str,
    t: T,
    delta_body: Vec3<T>,
    delta_height: T,
) -> Result<ScalarMeasurement<T>> {
    if !(delta_body.norm() > T::zero()) {
        return Err(Error::ZeroLandmarkDifference);
    }
    Ok(ScalarMeasurement {
        channel_id: channel_id.to_owned(),
        t,
        y: delta_height,
        a: delta_body,
        b: Vec3::z(),
    })
}

/// Synthesizes a third vector pair from two non-collinear ones:
/// `r₃ᴵ = r₁ᴵ × r₂ᴵ` with body-frame counterpart `r₃ᴮ = r₁ᴮ × r₂ᴮ`.
pub fn cross_product_completion<T: Real>(
    r1_inertial: &Vec3<T>,
    r1_body: &Vec3<T>,
    r2_inertial: &Vec3<T>,
    r2_body: &Vec3<T>,
) -> (Vec3<T>, Vec3<T>) {
    (r1_inertial.cross(r2_inertial), r1_body.cross(r2_body))
}

fn check_noise_and_rate<T: Real>(id: &str, variance: T, rate_hz: T) -> Result<()> {
    if !(variance >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "channel `{id}`: negative noise variance {variance}"
        )));
    }
    if !(rate_hz > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "channel `{id}`: rate must be positive, got {rate_hz}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, vec_transpose};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_6};

    fn rvec(rng: &mut impl Rng, s: f64) -> Vec3<f64> {
        Vec3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    #[test]
    fn unit_kronecker_row() {
        let row = kron_row(&Vec3::<f64>::x(), &Vec3::x());
        assert_eq!(
            row.as_slice(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn kron_row_reproduces_bilinear_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let (a, b) = (rvec(&mut rng, 2.0), rvec(&mut rng, 5.0));
            let r = exp_so3(&rvec(&mut rng, 3.0));
            let direct = a.dot(&(r.matrix().transpose() * b));
            let lin = (kron_row(&a, &b) * vec_transpose(r.matrix()))[0];
            assert_relative_eq!(lin, direct, epsilon = 1e-12);
            assert_relative_eq!(
                kron_row(&a, &b).norm(),
                a.norm() * b.norm(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tilt_identity() {
        for theta in [0.0, 0.3, 1.0, FRAC_PI_2] {
            let r = exp_so3(&Vec3::new(theta, 0.0, 0.0));
            let y = (kron_row(&Vec3::z(), &Vec3::z()) * r.to_state())[0];
            assert_relative_eq!(y, theta.cos(), epsilon = 1e-15);
        }
        let ch = tilt_channel("tilt", 0.0, 10.0).unwrap();
        assert_relative_eq!(ch.sample(&RotationMatrix::identity(), 0.0).y, 1.0);
        let r = exp_so3(&Vec3::new(FRAC_PI_6, 0.0, 0.0));
        assert_relative_eq!(ch.sample(&r, 0.0).y, FRAC_PI_6.cos(), epsilon = 1e-15);
        let r = exp_so3(&Vec3::new(0.0, FRAC_PI_2, 0.0));
        assert!(ch.sample(&r, 0.0).y.abs() < 1e-15);
    }

    #[test]
    fn output_matrix_needs_channels() {
        assert!(matches!(
            build_output_matrix::<f64>(&[]),
            Err(Error::NoActiveChannels)
        ));
        let c = build_output_matrix(&[(Vec3::<f64>::x(), Vec3::x())]).unwrap();
        assert_eq!(c.rows(), 1);
        assert_eq!(c.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn full_magnetometer_triad() {
        let m = Vec3::new(FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2);
        let chans =
            vector_channels("mag", VectorProvider::Constant(m), &[1, 2, 3], 0.01, 100.0).unwrap();
        assert_eq!(chans.len(), 3);
        let pairs: Vec<_> = chans.iter().map(|c| (c.a.at(0.0), c.b.at(0.0))).collect();
        for (i, (a, b)) in pairs.iter().enumerate() {
            assert_eq!(*a, Vec3::ith(i, 1.0));
            assert_eq!(*b, m);
        }
        let c = build_output_matrix(&pairs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = exp_so3(&rvec(&mut rng, 2.0));
        let y = c.apply(&r.to_state());
        let body = r.matrix().transpose() * m;
        for i in 0..3 {
            assert_relative_eq!(y[i], body[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn partial_axes() {
        let chans = vector_channels(
            "accel",
            VectorProvider::Constant(Vec3::new(0.0, 0.0, -9.81)),
            &[1, 3],
            0.001,
            1000.0,
        )
        .unwrap();
        assert_eq!(chans.len(), 2);
        assert_eq!(chans[0].a.at(0.0), Vec3::x());
        assert_eq!(chans[1].a.at(0.0), Vec3::z());
        assert_eq!(chans[1].id, "accel_3");
        let mag = vector_channels(
            "mag",
            VectorProvider::Constant(Vec3::x()),
            &[2],
            0.01,
            100.0,
        )
        .unwrap();
        assert_eq!(mag.len(), 1);
        assert_eq!(mag[0].id, "mag_2");
        assert!(matches!(
            vector_channels(
                "mag",
                VectorProvider::Constant(Vec3::<f64>::x()),
                &[],
                0.01,
                100.0
            ),
            Err(Error::EmptyAxes(_))
        ));
        assert!(vector_channels(
            "mag",
            VectorProvider::Constant(Vec3::<f64>::x()),
            &[4],
            0.01,
            100.0
        )
        .is_err());
        assert!(vector_channels(
            "mag",
            VectorProvider::Constant(Vec3::<f64>::x()),
            &[1],
            -1.0,
            100.0
        )
        .is_err());
    }

    #[test]
    fn landmark_cases() {
        // equal elevation
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ch = landmark_channel("lm", Vec3::new(3.0, -4.0, 0.0), 0.0, 5.0).unwrap();
        for _ in 0..20 {
            let r = exp_so3(&rvec(&mut rng, 3.0));
            let m = ch.sample(&r, 0.0);
            assert_eq!(m.y, 0.0);
            assert!(m.predicted(&r).abs() < 1e-12);
        }
        let m = landmark_measurement("lm", 0.0, Vec3::new(0.0, 0.0, 5.0), 5.0).unwrap();
        assert_relative_eq!(m.predicted(&RotationMatrix::identity()), 5.0);
        assert!(matches!(
            landmark_measurement("lm", 0.0, Vec3::<f64>::zeros(), 1.0),
            Err(Error::ZeroLandmarkDifference)
        ));
        // both sides of the vertical projection identity
        for _ in 0..50 {
            let r = exp_so3(&rvec(&mut rng, 3.0));
            let (pi, pj, p) = (
                rvec(&mut rng, 50.0),
                rvec(&mut rng, 50.0),
                rvec(&mut rng, 50.0),
            );
            let li = r.matrix().transpose() * (pi - p);
            let lj = r.matrix().transpose() * (pj - p);
            let lhs = (li - lj).dot(&(r.matrix().transpose() * Vec3::z()));
            let rhs = Vec3::z().dot(&(pi - pj));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
            let m = landmark_measurement("lm", 0.0, li - lj, rhs).unwrap();
            assert_relative_eq!(m.predicted(&r), m.y, epsilon = 1e-10);
        }
    }

    #[test]
    fn pitot_cases() {
        let ch = pitot_channel(
            "pitot",
            Vec3::x(),
            VectorProvider::Constant(Vec3::new(10.0, 0.0, 0.0)),
            0.01,
            50.0,
        )
        .unwrap();
        assert_relative_eq!(ch.sample(&RotationMatrix::identity(), 0.0).y, 10.0);
        let still = pitot_channel(
            "pitot",
            Vec3::x(),
            VectorProvider::Constant(Vec3::zeros()),
            0.01,
            50.0,
        )
        .unwrap();
        let m = still.sample(&RotationMatrix::identity(), 0.0);
        assert_eq!(m.y, 0.0);
        assert_eq!(m.row().norm(), 0.0);
        let skewed = pitot_channel(
            "pitot",
            Vec3::new(2.0, 0.0, 0.0),
            VectorProvider::Constant(Vec3::x()),
            0.01,
            50.0,
        )
        .unwrap();
        assert_relative_eq!(skewed.a.at(0.0), Vec3::x());
        assert!(pitot_channel(
            "p",
            Vec3::zeros(),
            VectorProvider::Constant(Vec3::x()),
            0.01,
            50.0
        )
        .is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d = rvec(&mut rng, 1.0).normalize();
            let v = rvec(&mut rng, 30.0);
            let r = exp_so3(&rvec(&mut rng, 3.0));
            let ch = pitot_channel("p", d, VectorProvider::Constant(v), 0.0, 10.0).unwrap();
            assert_relative_eq!(
                ch.sample(&r, 1.0).y,
                d.dot(&(r.matrix().transpose() * v)),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn cross_product_completion_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let r = exp_so3(&rvec(&mut rng, 3.0));
            let (r1, r2) = (rvec(&mut rng, 2.0), rvec(&mut rng, 2.0));
            let rt = r.matrix().transpose();
            let (r3_i, r3_b) = cross_product_completion(&r1, &(rt * r1), &r2, &(rt * r2));
            assert_relative_eq!(rt * r3_i, r3_b, epsilon = 1e-12);
            for i in 0..3 {
                let a = Vec3::ith(i, 1.0);
                let y = (kron_row(&a, &r3_i) * r.to_state())[0];
                assert_relative_eq!(y, r3_b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn series_provider_interpolates() {
        let p = VectorProvider::Series {
            times: vec![0.0, 1.0, 2.0],
            values: vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 2.0, 0.0)],
        };
        assert_relative_eq!(p.at(0.5), Vec3::new(0.5, 0.0, 0.0));
        assert_relative_eq!(p.at(1.5), Vec3::new(1.0, 1.0, 0.0));
        assert_relative_eq!(p.at(-1.0), Vec3::zeros());
        assert_relative_eq!(p.at(9.0), Vec3::new(1.0, 2.0, 0.0));
    }
}

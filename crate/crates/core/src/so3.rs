//! Rotation-group algebra on 3x3 matrices.
//!
//! The filter state stacks the rows of `R` (the columns of `Rᵀ`) into a
//! 9-vector, so `x[3 * j + i] == R[(j, i)]`. Everything here is a pure
//! function on small value types.

use core::ops::Mul;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{tol, Real};

pub type Vec3<T> = Vector3<T>;
pub type Mat3<T> = Matrix3<T>;
pub type Mat9<T> = SMatrix<T, 9, 9>;
pub type StateVec9<T> = SVector<T, 9>;

/// Proper rotation matrix (orthonormal, determinant one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix<T: Real>(Mat3<T>);

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det m = 1` within `tolerance`.
    pub fn from_matrix(m: Mat3<T>, tolerance: T) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho <= tolerance && (det - T::one()).abs() <= tolerance {
            Ok(Self(m))
        } else {
            Err(Error::NotARotation(format!(
                "orthonormality defect {ortho:e}, determinant {det}"
            )))
        }
    }

    /// Wraps `m` without validation. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Mat3<T>) -> Self {
        Self(m)
    }

    /// Row-major construction, validated at the default tolerance.
    pub fn from_row_slice(entries: &[T]) -> Result<Self> {
        if entries.len() != 9 {
            return Err(Error::Dimension(format!(
                "rotation needs 9 entries, got {}",
                entries.len()
            )));
        }
        Self::from_matrix(Mat3::from_row_slice(entries), T::lit(tol::ROTATION))
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Mat3<T> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Frobenius norm of `RᵀR - I`.
    pub fn orthonormality_defect(&self) -> T {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn is_valid(&self, tolerance: T) -> bool {
        self.orthonormality_defect() <= tolerance
            && (self.0.determinant() - T::one()).abs() <= tolerance
    }

    /// Filter state representation `vec(Rᵀ)`.
    pub fn to_state(&self) -> StateVec9<T> {
        vec_transpose(&self.0)
    }

    /// Row-major entries `r11, r12, ..., r33`.
    pub fn row_major(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl<T: Real> Mul for RotationMatrix<T> {
    type Output = RotationMatrix<T>;

    fn mul(self, rhs: Self) -> Self::Output {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl<T: Real> Mul<Vec3<T>> for RotationMatrix<T> {
    type Output = Vec3<T>;

    fn mul(self, rhs: Vec3<T>) -> Self::Output {
        self.0 * rhs
    }
}

/// The cross-product matrix `[v]×`, so that `skew(v) * w == v.cross(w)`.
pub fn skew<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Mat3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Rodrigues coefficients `sin θ / θ` and `(1 - cos θ) / θ²`.
fn rodrigues_coefficients<T: Real>(theta: T) -> (T, T) {
    if theta < T::lit(tol::SMALL_ANGLE) {
        let t2 = theta * theta;
        (T::one() - t2 / T::lit(6.0), T::lit(0.5) - t2 / T::lit(24.0))
    } else {
        // 1 - cos θ = 2 sin²(θ/2), without the cancellation
        let half = (theta * T::lit(0.5)).sin() / theta;
        (theta.sin() / theta, T::lit(2.0) * half * half)
    }
}

/// Exponential map from a rotation vector to SO(3).
pub fn exp_so3<T: Real>(v: &Vec3<T>) -> RotationMatrix<T> {
    let theta = v.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let k = skew(v);
    RotationMatrix(Mat3::identity() + k * a + k * k * b)
}

/// Stacks the columns of `mᵀ` (the rows of `m`) into a 9-vector.
pub fn vec_transpose<T: Real>(m: &Mat3<T>) -> StateVec9<T> {
    StateVec9::from_fn(|k, _| m[(k / 3, k % 3)])
}

/// Inverse of [`vec_transpose`]: rows of the result are the 3-blocks of `x`.
/// The result is generally not orthonormal.
pub fn unvec_to_rotation_candidate<T: Real>(x: &StateVec9<T>) -> Mat3<T> {
    Mat3::from_fn(|r, c| x[3 * r + c])
}

/// Outcome of a nearest-rotation projection.
#[derive(Clone, Copy, Debug)]
pub struct Projection<T: Real> {
    pub rotation: RotationMatrix<T>,
    /// Singular values of the input, descending.
    pub singular_values: Vec3<T>,
    /// The minimizer is not unique (tied smallest singular values with a
    /// determinant flip).
    pub ambiguous: bool,
    /// The input has rank below three.
    pub degenerate: bool,
}

/// Frobenius-nearest rotation to `b` via SVD with determinant correction,
/// `U diag(1, 1, det(U Vᵀ)) Vᵀ`.
pub fn project_to_so3<T: Real>(b: &Mat3<T>) -> Projection<T> {
    let svd = b.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        unreachable!("SVD requested with both factors");
    };
    let sv = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        sv[j]
            .partial_cmp(&sv[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let (s_max, s_mid, s_min) = (sv[order[0]], sv[order[1]], sv[order[2]]);
    let sorted = Vec3::new(s_max, s_mid, s_min);

    if !(s_max > T::zero()) {
        return Projection {
            rotation: RotationMatrix::identity(),
            singular_values: sorted,
            ambiguous: true,
            degenerate: true,
        };
    }

    let det = (u * v_t).determinant();
    let flip = det < T::zero();
    if flip {
        let mut col = u.column_mut(order[2]);
        col.neg_mut();
    }
    let rotation = RotationMatrix(u * v_t);

    let degenerate = s_min < T::lit(tol::RANK_DEFICIENT) * s_max;
    let ambiguous = flip && (s_mid - s_min) <= T::lit(tol::SINGULAR_TIE) * s_max;
    Projection {
        rotation,
        singular_values: sorted,
        ambiguous,
        degenerate,
    }
}

/// Geodesic angle between two rotations, in `[0, π]`.
///
/// Equal to `arccos((tr(RᵀR̂) - 1) / 2)`, evaluated as an `atan2` of the
/// antisymmetric and trace parts so that sub-microradian errors are not lost
/// to the flat top of `arccos`.
pub fn attitude_error_angle<T: Real>(r: &RotationMatrix<T>, r_hat: &RotationMatrix<T>) -> T {
    let e = r.0.transpose() * r_hat.0;
    let c = ((e.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    let w = Vec3::new(
        e[(2, 1)] - e[(1, 2)],
        e[(0, 2)] - e[(2, 0)],
        e[(1, 0)] - e[(0, 1)],
    );
    let s = (w.norm() * T::lit(0.5)).min(T::one());
    s.atan2(c)
}

/// Rotation vector of `r` (inverse of [`exp_so3`] on angles below π).
pub fn log_so3<T: Real>(r: &RotationMatrix<T>) -> Vec3<T> {
    let m = &r.0;
    let theta = attitude_error_angle(&RotationMatrix::identity(), r);
    let w = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    if theta < T::lit(tol::SMALL_ANGLE) {
        return w * T::lit(0.5);
    }
    let pi = T::pi();
    if pi - theta < T::lit(1e-6) {
        // Axis from the symmetric part, R + I = 2 n nᵀ near θ = π.
        let s = (m + Mat3::identity()) * T::lit(0.5);
        let mut best = 0;
        for i in 1..3 {
            if s[(i, i)] > s[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vec3<T> = s.column(best).into_owned();
        let n = axis.norm();
        if n > T::zero() {
            axis /= n;
        }
        if axis.dot(&w) < T::zero() {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / (T::lit(2.0) * theta.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Uniform random rotation via a normalized Gaussian quaternion.
    fn random_rotation(rng: &mut impl Rng) -> Mat3<f64> {
        let q: [f64; 4] = core::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    #[test]
    fn skew_canonical_cases() {
        assert_eq!(skew(&Vec3::<f64>::zeros()), Mat3::zeros());
        let s = skew(&Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(s, Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(s, -s.transpose());
    }

    #[test]
    fn skew_matches_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v = Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0;
            let w = Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0;
            let c = Vec3::new(
                v.y * w.z - v.z * w.y,
                v.z * w.x - v.x * w.z,
                v.x * w.y - v.y * w.x,
            );
            assert_relative_eq!(skew(&v) * w, c, epsilon = 1e-14);
        }
    }

    #[test]
    fn exp_quarter_turns() {
        assert_eq!(*exp_so3(&Vec3::<f64>::zeros()).matrix(), Mat3::identity());
        let rz = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(rz * Vec3::x(), Vec3::y(), epsilon = 1e-15);
        let ry = exp_so3(&Vec3::new(0.0, FRAC_PI_2, 0.0));
        assert_relative_eq!(ry * Vec3::x(), -Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn taylor_branch_is_continuous() {
        // closed form evaluated explicitly, away from the branch switch
        for &theta in &[1e-7, 3e-7, 1e-6, 4e-6, 1e-5] {
            let (a, b) = rodrigues_coefficients(theta);
            let a_closed = f64::sin(theta) / theta;
            let b_closed = (1.0 - f64::cos(theta)) / (theta * theta);
            let b_stable = 2.0 * (f64::sin(theta / 2.0) / theta).powi(2);
            assert!((a - a_closed).abs() < 1e-12);
            assert!((b - b_stable).abs() < 1e-12, "{theta}: {b} vs {b_stable}");
            // the naive closed form loses digits here; only loosely comparable
            assert!((b - b_closed).abs() < 1e-3);
        }
        // matrix level: Taylor branch against the closed form on the switch band
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let theta = 10f64.powf(rng.random_range(-7.0..-5.0));
            let v = dir * theta;
            let k = skew(&v);
            let closed = Mat3::identity()
                + k * (theta.sin() / theta)
                + k * k * ((1.0 - theta.cos()) / (theta * theta));
            assert!((exp_so3(&v).matrix() - closed).amax() < 1e-12);
        }
    }

    #[test]
    fn vec_transpose_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_rotation(&mut rng);
        let x = vec_transpose(&r);
        let rt = r.transpose();
        // vec stacks columns of Rᵀ
        for col in 0..3 {
            for row in 0..3 {
                assert_eq!(x[3 * col + row], rt[(row, col)]);
            }
        }
        assert_eq!(unvec_to_rotation_candidate(&x), r);
        assert_eq!(
            vec_transpose(&Mat3::<f64>::identity()).as_slice(),
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            unvec_to_rotation_candidate(&StateVec9::<f64>::zeros()),
            Mat3::zeros()
        );
    }

    #[test]
    fn projection_fixed_point_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let p = project_to_so3(&r);
            assert_relative_eq!(*p.rotation.matrix(), r, epsilon = 1e-12);
            let p2 = project_to_so3(&(r * 2.0));
            assert_relative_eq!(*p2.rotation.matrix(), r, epsilon = 1e-12);
            assert!(!p.degenerate && !p.ambiguous);
        }
    }

    #[test]
    fn projection_beats_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let b = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = project_to_so3(&b);
            assert!(p.rotation.is_valid(1e-10));
            let d_proj = (p.rotation.matrix() - b).norm();
            let mut best = f64::INFINITY;
            let mut best_q = Mat3::identity();
            for _ in 0..10_000 {
                let q = random_rotation(&mut rng);
                let d = (q - b).norm();
                assert!(d_proj <= d + 1e-12);
                if d < best {
                    best = d;
                    best_q = q;
                }
            }
            // best sample lies near the projection (sampling resolution)
            let angle = attitude_error_angle(&p.rotation, &RotationMatrix(best_q));
            assert!(angle < 0.35, "best sample {angle} rad away");
        }
    }

    #[test]
    fn projection_flags_degenerate_input() {
        let b = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let p = project_to_so3(&b);
        assert!(p.degenerate);
        assert!(p.rotation.is_valid(1e-12));
        assert_relative_eq!(*p.rotation.matrix(), Mat3::identity(), epsilon = 1e-12);
        let p0 = project_to_so3(&Mat3::<f64>::zeros());
        assert!(p0.degenerate);
        assert!(p0.rotation.is_valid(1e-12));
    }

    #[test]
    fn projection_flags_ambiguous_reflection() {
        // diag(1, 1, -1) has det -1 and two singular values tied with the smallest
        let b = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let p = project_to_so3(&b);
        assert!(p.ambiguous);
        assert!(p.rotation.is_valid(1e-12));
        assert_relative_eq!((p.rotation.matrix() - b).norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn error_angle_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = RotationMatrix(random_rotation(&mut rng));
        assert!(attitude_error_angle(&r, &r) < 1e-14);
        let tiny = r * exp_so3(&Vec3::new(3e-10, -4e-10, 0.0));
        assert_relative_eq!(attitude_error_angle(&r, &tiny), 5e-10, epsilon = 1e-14);
        // agrees with the arccos definition where that one is well conditioned
        for _ in 0..100 {
            let q = RotationMatrix(random_rotation(&mut rng));
            let c = (((r.0.transpose() * q.0).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            assert_relative_eq!(attitude_error_angle(&r, &q), c.acos(), epsilon = 1e-7);
        }
        let i = RotationMatrix::<f64>::identity();
        let q = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(attitude_error_angle(&i, &q), FRAC_PI_2, epsilon = 1e-12);
        for _ in 0..100 {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let v = v.normalize() * rng.random_range(0.0..PI);
            assert_relative_eq!(
                attitude_error_angle(&i, &exp_so3(&v)),
                v.norm(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let v = Vec3::new(
                rng.random_range(-1.8..1.8),
                rng.random_range(-1.8..1.8),
                rng.random_range(-1.8..1.8),
            );
            assert_relative_eq!(log_so3(&exp_so3(&v)), v, epsilon = 1e-9);
        }
        let v = Vec3::new(0.0, PI, 0.0);
        assert_relative_eq!(log_so3(&exp_so3(&v)).abs(), v, epsilon = 1e-6);
    }

    #[test]
    fn rotation_validation() {
        assert!(RotationMatrix::from_matrix(Mat3::<f64>::identity() * 1.1, 1e-9).is_err());
        assert!(RotationMatrix::from_matrix(-Mat3::<f64>::identity(), 1e-9).is_err());
        assert!(RotationMatrix::<f64>::from_row_slice(&[
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0
        ])
        .is_ok());
    }

    #[test]
    fn works_in_single_precision() {
        let r = exp_so3(&Vec3::new(0.1f32, -0.4, 0.7));
        assert!(r.is_valid(1e-5));
        let p = project_to_so3(&(r.matrix() * 3.0f32));
        assert!(attitude_error_angle(&r, &p.rotation) < 1e-3);
    }
}

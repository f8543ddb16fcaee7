use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use scalar_attitude::filter::{predict, update, FilterState};
use scalar_attitude::io::{read_sensor_log, write_sensor_log};
use scalar_attitude::measurements::{build_output_matrix, kron_row, ScalarMeasurement};
use scalar_attitude::so3::{
    attitude_error_angle, exp_so3, log_so3, project_to_so3, Mat3, Mat9, RotationMatrix, Vec3,
};
use scalar_attitude::GainMode;

fn vec3(range: f64) -> impl Strategy<Value = Vec3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn rotation() -> impl Strategy<Value = RotationMatrix<f64>> {
    vec3(3.0).prop_map(|v| exp_so3(&v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn exp_is_a_rotation(v in vec3(10.0)) {
        let r = exp_so3(&v);
        prop_assert!(r.orthonormality_defect() < 1e-12);
        prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_in_f32_is_a_rotation(v in prop::array::uniform3(-3.0f32..3.0)) {
        let r = exp_so3(&Vec3::from(v));
        let m = r.matrix();
        prop_assert!((m.transpose() * m - Mat3::<f32>::identity()).amax() < 1e-5);
    }

    #[test]
    fn log_inverts_exp_below_pi(axis in vec3(1.0), angle in 0.0..3.1f64) {
        prop_assume!(axis.norm() > 1e-3);
        let v = axis.normalize() * angle;
        prop_assert!((log_so3(&exp_so3(&v)) - v).amax() < 1e-9);
    }

    #[test]
    fn error_angle_of_right_perturbation(r in rotation(), axis in vec3(1.0), angle in 0.0..3.1f64) {
        prop_assume!(axis.norm() > 1e-3);
        let r_hat = r * exp_so3(&(axis.normalize() * angle));
        prop_assert!((attitude_error_angle(&r, &r_hat) - angle).abs() < 1e-9);
        prop_assert!((attitude_error_angle(&r_hat, &r) - angle).abs() < 1e-9);
    }

    #[test]
    fn projection_of_a_rotation_is_itself(r in rotation(), s in 0.1..10.0f64) {
        let p = project_to_so3(&(r.matrix() * s));
        prop_assert!((p.rotation.matrix() - r.matrix()).amax() < 1e-12);
    }

    #[test]
    fn projection_is_no_farther_than_sampled_rotations(
        b in prop::array::uniform9(-2.0..2.0f64),
        q in rotation(),
    ) {
        let b = Mat3::from_row_slice(&b);
        let p = project_to_so3(&b);
        prop_assume!(!p.degenerate);
        prop_assert!((p.rotation.matrix() - b).norm() <= (q.matrix() - b).norm() + 1e-12);
    }

    #[test]
    fn kron_row_evaluates_the_scalar_model(r in rotation(), a in vec3(5.0), b in vec3(5.0)) {
        let direct = a.dot(&(r.matrix().transpose() * b));
        let linear = (kron_row(&a, &b) * r.to_state())[(0, 0)];
        prop_assert!((direct - linear).abs() < 1e-12);
    }

    #[test]
    fn update_does_not_increase_covariance(
        r in rotation(),
        pairs in prop::collection::vec((vec3(1.0), vec3(10.0)), 1..7),
        weight in 1e-6..1.0f64,
        p0 in 0.01..100.0f64,
        y_shift in -1.0..1.0f64,
    ) {
        let state = FilterState::from_rotation(&r, p0, GainMode::Riccati);
        let c = build_output_matrix(&pairs).unwrap();
        let y = c.apply(&r.to_state()).add_scalar(y_shift);
        let q_inv = DMatrix::identity(pairs.len(), pairs.len()) * weight;
        let next = update(&state, &c, &y, &q_inv).unwrap();
        prop_assert!(next.p.trace() <= state.p.trace() + 1e-9);
        prop_assert!(next.asymmetry() == 0.0);
        // P - P⁺ is positive semidefinite
        let diff = state.p - next.p;
        let min = diff.symmetric_eigenvalues().min();
        prop_assert!(min > -1e-9 * p0, "{}", min);
    }

    #[test]
    fn prediction_is_an_isometry_without_process_noise(
        r in rotation(),
        omega in vec3(5.0),
        tau in 1e-4..0.1f64,
    ) {
        let state = FilterState::from_rotation(&r, 1.0, GainMode::Riccati);
        let next = predict(&state, &omega, tau, &Mat9::zeros()).unwrap();
        prop_assert!((next.x_hat.norm() - state.x_hat.norm()).abs() < 1e-12);
        prop_assert!((next.p - Mat9::identity()).amax() < 1e-12);
        prop_assert!((next.t - tau).abs() < 1e-15);
    }

    #[test]
    fn sensor_log_round_trips(rows in prop::collection::vec(
        (0.0..1e4f64, -1e6..1e6f64, prop::array::uniform6(-1e3..1e3f64)), 0..20))
    {
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let log: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(i, (t, y, v))| ScalarMeasurement {
                channel_id: format!("ch_{}", i % 3),
                t: *t,
                y: *y,
                a: Vec3::new(v[0], v[1], v[2]),
                b: Vec3::new(v[3], v[4], v[5]),
            })
            .collect();
        let mut buf = Vec::new();
        write_sensor_log(&mut buf, None, &log).unwrap();
        let back = read_sensor_log(buf.as_slice()).unwrap();
        prop_assert_eq!(back, log);
    }
}

#[test]
fn stacked_update_matches_sequential_scalar_updates() {
    // a stacked update with diagonal Q⁻¹ equals the same rows applied one by one
    let r = exp_so3(&Vec3::new(0.4, -1.1, 0.7));
    let state =
        FilterState::from_rotation(&exp_so3(&Vec3::new(0.5, -1.0, 0.6)), 2.0, GainMode::Riccati);
    let pairs = [
        (Vec3::x(), Vec3::new(0.0, 0.0, -9.81)),
        (Vec3::y(), Vec3::new(0.7, 0.0, 0.7)),
        (Vec3::z(), Vec3::new(0.0, 1.0, 0.0)),
    ];
    let weights = [1e-3, 2e-2, 0.5];
    let c = build_output_matrix(&pairs).unwrap();
    let y = c.apply(&r.to_state());
    let q_inv = DMatrix::from_diagonal(&DVector::from_column_slice(&weights));
    let stacked = update(&state, &c, &y, &q_inv).unwrap();

    let mut seq = state;
    for (i, pair) in pairs.iter().enumerate() {
        let ci = build_output_matrix(std::slice::from_ref(pair)).unwrap();
        let yi = DVector::from_element(1, y[i]);
        seq = update(&seq, &ci, &yi, &DMatrix::from_element(1, 1, weights[i])).unwrap();
    }
    assert!((stacked.x_hat - seq.x_hat).amax() < 1e-10);
    assert!((stacked.p - seq.p).amax() < 1e-10);
}

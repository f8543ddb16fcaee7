//! The discrete filter against an RK4 integration of the continuous-time
//! filter. With weight `W = f / Q` the discrete correction is a first-order
//! discretization of the continuous gain, so the two trajectories agree to
//! `O(τ)`.

use nalgebra::{DMatrix, DVector, Dyn, OMatrix, U9};
use scalar_attitude::filter::{continuous, DiscreteFilter, FilterConfig, Observation};
use scalar_attitude::measurements::kron_row;
use scalar_attitude::sim::{accel_inertial, integrate_truth, mag_inertial, TrajectoryProfile};
use scalar_attitude::so3::{exp_so3, Mat3, Mat9, Vec3};

const RATE: f64 = 1000.0;
const Q_CONT: f64 = 5.0;
/// Continuous process noise intensity; the discrete floor is `M_C τ`.
const M_C: f64 = 0.05;

fn pairs() -> Vec<(Vec3<f64>, Vec3<f64>)> {
    let g = accel_inertial() / 9.81;
    let m = mag_inertial();
    // the cross product completes the inertial basis; without it the middle
    // block of x is never measured and a reset-free filter cannot converge
    let c = g.cross(&m);
    (0..3)
        .flat_map(|i| {
            [
                (Vec3::ith(i, 1.0), g),
                (Vec3::ith(i, 1.0), m),
                (Vec3::ith(i, 1.0), c),
            ]
        })
        .collect()
}

#[test]
fn discrete_tracks_continuous_reference() {
    let profile = TrajectoryProfile::paper(6.0, RATE);
    let truth = integrate_truth(&profile).unwrap();
    let tau = profile.tau();
    let pairs = pairs();

    let mut config = FilterConfig::new(RATE, Mat3::zeros());
    config.m_floor = M_C / RATE;
    config.reset_enabled = false;
    let r_hat0 = truth.samples[0].r * exp_so3(&Vec3::new(0.3, -0.2, 0.25));
    let mut discrete = DiscreteFilter::from_rotation(config, &r_hat0).unwrap();

    let mut x_c = r_hat0.to_state();
    let mut p_c = Mat9::<f64>::identity();
    let output = |t: f64| {
        // ZOH truth, sampled at the start of the interval containing t
        let k = ((t / tau) + 1e-9).floor() as usize;
        let r = truth.samples[k.min(truth.len() - 1)].r;
        let mut c = OMatrix::<f64, Dyn, U9>::zeros(pairs.len());
        for (i, (a, b)) in pairs.iter().enumerate() {
            c.set_row(i, &kron_row(a, b));
        }
        let y = &c * r.to_state();
        continuous::Output {
            c,
            y: DVector::from_column_slice(y.as_slice()),
            q: DMatrix::identity(pairs.len(), pairs.len()) * Q_CONT,
        }
    };

    let x_true0 = truth.samples[0].r.to_state();
    let initial_gap = (x_c - x_true0).norm();
    let mut worst = 0.0f64;
    for (k, s) in truth.samples.iter().enumerate() {
        let batch: Vec<_> = pairs
            .iter()
            .map(|(a, b)| Observation {
                a: *a,
                b: *b,
                y: (kron_row(a, b) * s.r.to_state())[(0, 0)],
                weight: RATE / Q_CONT,
            })
            .collect();
        if k == 0 {
            discrete.initial_step(&batch).unwrap();
        } else {
            // the continuous reference integrates the same held rate
            let omega = truth.samples[k - 1].omega;
            let t = truth.samples[k - 1].t;
            let (x, p) = continuous::rk4_step(
                &x_c,
                &p_c,
                t,
                tau,
                |_| omega,
                output,
                &(Mat9::identity() * M_C),
            );
            x_c = x;
            p_c = p;
            discrete.step(&omega, &batch).unwrap();
        }
        worst = worst.max((discrete.state().x_hat - x_c).norm());
    }
    let x_true = truth.samples.last().unwrap().r.to_state();
    let final_gap = (x_c - x_true).norm();
    // both converge, and stay within a few percent of the initial gap of each other
    assert!(
        final_gap < 0.05 * initial_gap,
        "continuous gap {final_gap} from {initial_gap}"
    );
    assert!(
        worst < 0.02 * initial_gap,
        "discrete vs continuous {worst}, initial gap {initial_gap}"
    );
    assert!((discrete.state().p - p_c).amax() < 0.02);
}

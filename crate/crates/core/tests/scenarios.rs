use std::path::PathBuf;

use scalar_attitude::config::Scenario;
use scalar_attitude::sim::{noiseless_run, run_monte_carlo, MonteCarloSpec, TrajectoryProfile};
use scalar_attitude::so3::Vec3;
use scalar_attitude::GainMode;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&config_dir().join(format!("{name}.toml"))).unwrap()
}

#[test]
fn bundled_configs_parse() {
    for name in [
        "case1",
        "case2",
        "case3",
        "tilt_demo",
        "pitot_demo",
        "landmark_demo",
    ] {
        let sc = load(name);
        assert_eq!(sc.label, name);
        assert!(!sc.filter.channels.is_empty());
    }
    let ids = |s: &Scenario| s.filter.channels.keys().cloned().collect::<Vec<_>>();
    assert_eq!(ids(&load("case3")), ["accel_3", "mag_1", "mag_3"]);
    assert_eq!(load("case1").montecarlo.n_runs, 100);
}

/// Noiseless runs of the demo modalities recover a 10° initial error.
#[test]
fn demo_modalities_converge_without_noise() {
    for name in ["tilt_demo", "pitot_demo", "landmark_demo"] {
        let sc = load(name);
        let profile = TrajectoryProfile {
            duration: 20.0,
            ..sc.profile.clone()
        };
        let err0 = Vec3::new(1.0, 1.0, 1.0).normalize() * 10f64.to_radians();
        let errors = noiseless_run(&sc.suite, &profile, GainMode::Riccati, err0).unwrap();
        let last = *errors.last().unwrap();
        assert!(last < 1e-3, "{name}: final error {last}");
    }
}

#[test]
fn demo_modalities_reduce_noisy_error() {
    for name in ["tilt_demo", "pitot_demo", "landmark_demo"] {
        let sc = load(name);
        let spec = MonteCarloSpec {
            n_runs: 4,
            ..sc.montecarlo.clone()
        };
        let mc = run_monte_carlo(&spec, &sc.suite, &sc.montecarlo_profile(), &sc.filter).unwrap();
        let s = &mc.summary;
        assert!(s.diverged.is_empty(), "{name}: {s:?}");
        assert!(
            s.mean_final_error < 0.5 * s.mean_initial_error,
            "{name}: {s:?}"
        );
    }
}

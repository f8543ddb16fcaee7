//! TOML scenario files.
//!
//! ```toml
//! seed = 42
//!
//! [trajectory]
//! profile = "paper"          # or "constant" with omega = [x, y, z]
//! duration = 30.0
//! imu_rate = 1000.0
//! gyro_variance = 0.001
//!
//! [sensors.accel]
//! kind = "vector"
//! inertial = [0.0, 0.0, -9.81]
//! axes = [1, 2, 3]
//! rate = 1000.0
//! variance = 0.001
//!
//! [filter]
//! mode = "riccati"
//!
//! [montecarlo]
//! n_runs = 100
//! init_error_deg = 22.5
//! ```
//!
//! Sensor tables keep their file order, which fixes the channel order of `C`.

use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::{FilterConfig, GainMode};
use crate::measurements::VectorProvider;
use crate::sim::{
    paper_r0, sigma_for_mean_abs_error, MonteCarloSpec, SensorKind, SensorSpec, SensorSuite,
    TrajectoryProfile,
};
use crate::so3::{exp_so3, Mat3, RotationMatrix, Vec3};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub trajectory: TrajectoryTable,
    pub sensors: IndexMap<String, SensorTable>,
    #[serde(default)]
    pub filter: FilterTable,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloTable>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Paper,
    Constant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryTable {
    pub profile: ProfileKind,
    #[serde(default)]
    pub omega: Option<[f64; 3]>,
    /// Rotation vector of `R(0)`; the paper profile defaults to `(0, π/2, 0)`.
    #[serde(default)]
    pub r0_rotvec: Option<[f64; 3]>,
    pub duration: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default)]
    pub gyro_variance: f64,
}

fn default_imu_rate() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SensorKindName {
    Vector,
    Tilt,
    Pitot,
    Landmark,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorTable {
    pub kind: SensorKindName,
    pub rate: f64,
    #[serde(default)]
    pub variance: f64,
    #[serde(default)]
    pub inertial: Option<[f64; 3]>,
    #[serde(default)]
    pub axes: Option<Vec<usize>>,
    #[serde(default)]
    pub d: Option<[f64; 3]>,
    #[serde(default)]
    pub velocity: Option<VelocityTable>,
    #[serde(default)]
    pub p_i: Option<[f64; 3]>,
    #[serde(default)]
    pub p_j: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityTable {
    Constant {
        value: [f64; 3],
    },
    Circular {
        speed: f64,
        rate: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        vertical: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterTable {
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default = "one")]
    pub p0_scale: f64,
    #[serde(default = "small_floor")]
    pub m_floor: f64,
    #[serde(default = "small_floor")]
    pub q_floor: f64,
    #[serde(default = "yes")]
    pub reset_enabled: bool,
    /// Row-major 3×3 gyro covariance; defaults to `gyro_variance · I₃`.
    #[serde(default)]
    pub gyro_cov: Option<[f64; 9]>,
    #[serde(default = "half")]
    pub fixed_gain: f64,
    /// Rotation vector of the initial estimate used when filtering a log;
    /// identity when absent.
    #[serde(default)]
    pub initial_rotvec: Option<[f64; 3]>,
}

impl Default for FilterTable {
    fn default() -> Self {
        Self {
            mode: None,
            p0_scale: one(),
            m_floor: small_floor(),
            q_floor: small_floor(),
            reset_enabled: true,
            gyro_cov: None,
            fixed_gain: half(),
            initial_rotvec: None,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn small_floor() -> f64 {
    1e-9
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloTable {
    #[serde(default = "hundred")]
    pub n_runs: usize,
    /// Mean absolute per-axis initial error; converted to a Gaussian σ.
    #[serde(default)]
    pub init_error_deg: Option<f64>,
    /// Per-axis σ, overriding `init_error_deg`.
    #[serde(default)]
    pub init_sigma_deg: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
}

fn hundred() -> usize {
    100
}
fn default_percentiles() -> Vec<f64> {
    vec![5.0, 95.0]
}

/// A fully resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub label: String,
    pub seed: u64,
    pub profile: TrajectoryProfile,
    pub suite: SensorSuite,
    pub filter: FilterConfig<f64>,
    /// Initial estimate for filtering a recorded log.
    pub initial_estimate: RotationMatrix<f64>,
    pub montecarlo: MonteCarloSpec,
    /// Monte Carlo run length; defaults to the trajectory duration.
    pub montecarlo_duration: f64,
}

impl Scenario {
    pub fn from_toml_str(text: &str, default_label: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve(default_label)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::from_toml_str(&text, &label)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))
    }

    /// Profile with the Monte Carlo duration.
    pub fn montecarlo_profile(&self) -> TrajectoryProfile {
        TrajectoryProfile {
            duration: self.montecarlo_duration,
            ..self.profile.clone()
        }
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn vec3(v: [f64; 3]) -> Vec3<f64> {
    Vec3::new(v[0], v[1], v[2])
}

fn need<T>(v: Option<T>, sensor: &str, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("sensor `{sensor}` needs `{key}`")))
}

impl ScenarioFile {
    pub fn resolve(self, default_label: &str) -> Result<Scenario> {
        let label = self
            .label
            .clone()
            .unwrap_or_else(|| default_label.to_owned());
        let t = &self.trajectory;
        let r0: RotationMatrix<f64> = match (t.r0_rotvec, t.profile) {
            (Some(v), _) => exp_so3(&vec3(v)),
            (None, ProfileKind::Paper) => paper_r0(),
            (None, ProfileKind::Constant) => RotationMatrix::identity(),
        };
        let profile = match t.profile {
            ProfileKind::Paper => {
                if t.omega.is_some() {
                    return Err(Error::Config(
                        "`omega` only applies to profile = \"constant\"".into(),
                    ));
                }
                TrajectoryProfile {
                    r0,
                    ..TrajectoryProfile::paper(t.duration, t.imu_rate)
                }
            }
            ProfileKind::Constant => TrajectoryProfile::constant(
                vec3(
                    t.omega
                        .ok_or_else(|| Error::Config("constant profile needs `omega`".into()))?,
                ),
                r0,
                t.duration,
                t.imu_rate,
            ),
        };
        profile
            .validate()
            .map_err(|e| Error::Config(strip_prefix(e)))?;
        if !(t.gyro_variance >= 0.0) {
            return Err(Error::Config("gyro_variance must be >= 0".into()));
        }

        let mut sensors = Vec::with_capacity(self.sensors.len());
        for (name, s) in &self.sensors {
            let kind = match s.kind {
                SensorKindName::Vector => SensorKind::Vector {
                    inertial: VectorProvider::Constant(vec3(need(s.inertial, name, "inertial")?)),
                    axes: s.axes.clone().unwrap_or_else(|| vec![1, 2, 3]),
                },
                SensorKindName::Tilt => SensorKind::Tilt,
                SensorKindName::Pitot => SensorKind::Pitot {
                    d: vec3(need(s.d, name, "d")?),
                    velocity: match need(s.velocity.clone(), name, "velocity")? {
                        VelocityTable::Constant { value } => VectorProvider::Constant(vec3(value)),
                        VelocityTable::Circular {
                            speed,
                            rate,
                            phase,
                            vertical,
                        } => VectorProvider::Circular {
                            speed,
                            rate,
                            phase,
                            vertical,
                        },
                    },
                },
                SensorKindName::Landmark => SensorKind::Landmark {
                    p_i: vec3(need(s.p_i, name, "p_i")?),
                    p_j: vec3(need(s.p_j, name, "p_j")?),
                },
            };
            sensors.push(SensorSpec {
                name: name.clone(),
                kind,
                rate_hz: s.rate,
                variance: s.variance,
            });
        }
        let suite = SensorSuite {
            label: label.clone(),
            gyro_variance: t.gyro_variance,
            sensors,
        };
        // validates channel ids, axes and rates
        crate::sim::Schedule::new(&suite, profile.imu_rate)
            .map_err(|e| Error::Config(strip_prefix(e)))?;

        let f = &self.filter;
        let mut filter = suite.filter_config(profile.imu_rate)?;
        if let Some(mode) = &f.mode {
            filter.mode = mode.parse::<GainMode>()?;
        }
        filter.p0_scale = f.p0_scale;
        filter.m_floor = f.m_floor;
        filter.q_floor = f.q_floor;
        filter.reset_enabled = f.reset_enabled;
        filter.fixed_gain = f.fixed_gain;
        if let Some(c) = f.gyro_cov {
            filter.gyro_cov = Mat3::from_row_slice(&c);
        }
        filter
            .validate()
            .map_err(|e| Error::Config(strip_prefix(e)))?;

        let mc = self.montecarlo.clone();
        let montecarlo_duration = mc.as_ref().and_then(|m| m.duration).unwrap_or(t.duration);
        let montecarlo = match mc {
            None => MonteCarloSpec::paper(self.seed),
            Some(m) => {
                let init_sigma = match (m.init_sigma_deg, m.init_error_deg) {
                    (Some(s), _) => s.to_radians(),
                    (None, Some(e)) => sigma_for_mean_abs_error(e.to_radians()),
                    (None, None) => sigma_for_mean_abs_error(22.5f64.to_radians()),
                };
                MonteCarloSpec {
                    n_runs: m.n_runs,
                    init_sigma,
                    seed: m.seed.unwrap_or(self.seed),
                    percentiles: m.percentiles,
                    jobs: 0,
                }
            }
        };
        montecarlo
            .validate()
            .map_err(|e| Error::Config(strip_prefix(e)))?;
        if !(montecarlo_duration > 0.0) {
            return Err(Error::Config("montecarlo duration must be positive".into()));
        }

        Ok(Scenario {
            label,
            seed: self.seed,
            profile,
            suite,
            filter,
            initial_estimate: f
                .initial_rotvec
                .map(|v| exp_so3(&vec3(v)))
                .unwrap_or_else(RotationMatrix::identity),
            montecarlo,
            montecarlo_duration,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE2: &str = r#"
seed = 7
[trajectory]
profile = "paper"
duration = 2.0
gyro_variance = 0.001

[sensors.accel]
kind = "vector"
inertial = [0.0, 0.0, -9.81]
axes = [1, 2]
rate = 1000.0
variance = 0.001

[sensors.mag]
kind = "vector"
inertial = [0.7071067811865476, 0.0, 0.7071067811865476]
axes = [2]
rate = 100.0
variance = 0.01

[montecarlo]
n_runs = 3
duration = 1.0
"#;

    #[test]
    fn parses_case_layout_in_order() {
        let sc = Scenario::from_toml_str(CASE2, "case2").unwrap();
        assert_eq!(sc.label, "case2");
        assert_eq!(sc.seed, 7);
        let ids: Vec<_> = sc.filter.channels.keys().cloned().collect();
        assert_eq!(ids, ["accel_1", "accel_2", "mag_2"]);
        assert_eq!(sc.filter.mode, GainMode::Riccati);
        assert_eq!(sc.montecarlo.n_runs, 3);
        assert_eq!(sc.montecarlo.seed, 7);
        assert_eq!(sc.montecarlo_duration, 1.0);
        assert_eq!(sc.profile.r0, paper_r0());
        assert!((sc.filter.gyro_cov[(1, 1)] - 0.001).abs() < 1e-18);
    }

    #[test]
    fn schema_errors_carry_location() {
        let bad = CASE2.replace("axes = [1, 2]", "axes = [1, 2]\nbogus = 1");
        let err = Scenario::from_toml_str(&bad, "x").unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
        let bad_axis = CASE2.replace("axes = [2]", "axes = [4]");
        assert!(Scenario::from_toml_str(&bad_axis, "x").is_err());
        let bad_rate = CASE2.replace("rate = 100.0", "rate = 300.0");
        assert!(Scenario::from_toml_str(&bad_rate, "x").is_err());
        let bad_mode = format!("{CASE2}\n[filter]\nmode = \"magic\"\n");
        assert!(Scenario::from_toml_str(&bad_mode, "x").is_err());
    }

    #[test]
    fn pitot_landmark_and_tilt_tables() {
        let text = r#"
[trajectory]
profile = "constant"
omega = [0.0, 0.0, 0.1]
duration = 1.0

[sensors.tilt]
kind = "tilt"
rate = 50.0
variance = 1e-4

[sensors.pitot]
kind = "pitot"
d = [1.0, 0.0, 0.0]
velocity = { kind = "circular", speed = 20.0, rate = 0.2 }
rate = 100.0
variance = 0.01

[sensors.lm]
kind = "landmark"
p_i = [10.0, 0.0, 3.0]
p_j = [0.0, 5.0, 0.0]
rate = 10.0
variance = 1e-3

[filter]
mode = "fixed_gain"
reset_enabled = false
"#;
        let sc = Scenario::from_toml_str(text, "demo").unwrap();
        assert_eq!(sc.suite.sensors.len(), 3);
        assert_eq!(sc.filter.mode, GainMode::FixedGain);
        assert!(!sc.filter.reset_enabled);
        assert_eq!(sc.profile.r0, RotationMatrix::identity());
        let missing = text.replace("d = [1.0, 0.0, 0.0]\n", "");
        let err = Scenario::from_toml_str(&missing, "demo")
            .unwrap_err()
            .to_string();
        assert!(err.contains("`d`"), "{err}");
    }
}

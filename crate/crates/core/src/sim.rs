//! Truth trajectories, sensor synthesis and the Monte Carlo harness.
//!
//! Everything here is `f64`. Truth is propagated with the same zero-order
//! hold exponential the filter uses, so a noiseless, exactly initialized
//! run has zero estimation error up to rounding.
//!
//! Randomness: one root seed per experiment; trial `i` draws from the
//! ChaCha8 stream `i` of that seed, first the initial error, then per IMU
//! tick the gyro noise followed by each due channel in declaration order.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{DiscreteFilter, FilterConfig, GainMode, Observation};
use crate::measurements::{
    landmark_channel, pitot_channel, tilt_channel, vector_channels, ChannelKind, ScalarChannel,
    ScalarMeasurement, VectorProvider, GYRO_CHANNEL,
};
use crate::so3::{attitude_error_angle, exp_so3, project_to_so3, Mat3, RotationMatrix, Vec3};

/// Gravity magnitude of the paper scenario (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Final-error threshold for a converged trial (5°).
pub const CONVERGED_ERROR: f64 = 5.0 * PI / 180.0;

/// A trial whose final error exceeds this is reported as diverged.
pub const DIVERGED_ERROR: f64 = PI / 2.0;

pub type OmegaFn = Arc<dyn Fn(f64) -> Vec3<f64> + Send + Sync>;

/// Angular-velocity profile and sampling grid of the true motion.
#[derive(Clone)]
pub struct TrajectoryProfile {
    pub omega: OmegaFn,
    pub r0: RotationMatrix<f64>,
    pub duration: f64,
    pub imu_rate: f64,
}

impl std::fmt::Debug for TrajectoryProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryProfile")
            .field("r0", &self.r0)
            .field("duration", &self.duration)
            .field("imu_rate", &self.imu_rate)
            .finish_non_exhaustive()
    }
}

/// `ω(t) = [sin 0.3t, 0.7 sin(0.2t + π), 0.5 sin(0.1t + π/3)]`.
pub fn paper_omega(t: f64) -> Vec3<f64> {
    Vec3::new(
        (0.3 * t).sin(),
        0.7 * (0.2 * t + PI).sin(),
        0.5 * (0.1 * t + PI / 3.0).sin(),
    )
}

/// `R(0) = exp([π e₂]× / 2)`.
pub fn paper_r0() -> RotationMatrix<f64> {
    exp_so3(&Vec3::new(0.0, PI / 2.0, 0.0))
}

impl TrajectoryProfile {
    pub fn paper(duration: f64, imu_rate: f64) -> Self {
        Self {
            omega: Arc::new(paper_omega),
            r0: paper_r0(),
            duration,
            imu_rate,
        }
    }

    pub fn constant(
        omega: Vec3<f64>,
        r0: RotationMatrix<f64>,
        duration: f64,
        imu_rate: f64,
    ) -> Self {
        Self {
            omega: Arc::new(move |_| omega),
            r0,
            duration,
            imu_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.imu_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "trajectory needs duration > 0 and imu_rate > 0, got {} s at {} Hz",
                self.duration, self.imu_rate
            )));
        }
        Ok(())
    }

    /// Number of IMU ticks, `round(duration · imu_rate)`.
    pub fn steps(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.imu_rate
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.imu_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub r: RotationMatrix<f64>,
    pub omega: Vec3<f64>,
}

/// Sampled truth on the IMU grid `t_k = k / f`, `k = 0..steps`.
#[derive(Clone, Debug)]
pub struct Truth {
    pub samples: Vec<TruthSample>,
    pub imu_rate: f64,
}

impl Truth {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Attitude at any `t`, continuing the hold from the preceding sample.
    pub fn at(&self, t: f64) -> RotationMatrix<f64> {
        let Some(first) = self.samples.first() else {
            return RotationMatrix::identity();
        };
        if t <= first.t {
            return first.r;
        }
        let k = ((t * self.imu_rate).floor() as usize).min(self.samples.len() - 1);
        let s = &self.samples[k];
        s.r * exp_so3(&(s.omega * (t - s.t)))
    }
}

/// `R_{k+1} = R_k exp(ω(t_k) τ)`, re-projected onto SO(3) only when the
/// orthonormality defect exceeds `1e-12`.
pub fn integrate_truth(profile: &TrajectoryProfile) -> Result<Truth> {
    profile.validate()?;
    let n = profile.steps();
    let tau = profile.tau();
    let mut samples = Vec::with_capacity(n);
    let mut r = profile.r0;
    for k in 0..n {
        let t = profile.time(k);
        let omega = (profile.omega)(t);
        samples.push(TruthSample { t, r, omega });
        r = r * exp_so3(&(omega * tau));
        if r.orthonormality_defect() > 1e-12 {
            r = project_to_so3(r.matrix()).rotation;
        }
    }
    Ok(Truth {
        samples,
        imu_rate: profile.imu_rate,
    })
}

/// Physical sensor of a suite; expands into one or more scalar channels.
#[derive(Clone, Debug)]
pub enum SensorKind {
    /// Body-frame measurement `Rᵀ r` of an inertial vector, restricted to
    /// 1-based `axes`.
    Vector {
        inertial: VectorProvider<f64>,
        axes: Vec<usize>,
    },
    Tilt,
    Pitot {
        d: Vec3<f64>,
        velocity: VectorProvider<f64>,
    },
    /// A landmark pair at inertial positions `p_i`, `p_j`.
    Landmark {
        p_i: Vec3<f64>,
        p_j: Vec3<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    pub rate_hz: f64,
    pub variance: f64,
}

impl SensorSpec {
    pub fn channels(&self) -> Result<Vec<ScalarChannel<f64>>> {
        match &self.kind {
            SensorKind::Vector { inertial, axes } => vector_channels(
                &self.name,
                inertial.clone(),
                axes,
                self.variance,
                self.rate_hz,
            ),
            SensorKind::Tilt => Ok(vec![tilt_channel(&self.name, self.variance, self.rate_hz)?]),
            SensorKind::Pitot { d, velocity } => Ok(vec![pitot_channel(
                &self.name,
                *d,
                velocity.clone(),
                self.variance,
                self.rate_hz,
            )?]),
            SensorKind::Landmark { p_i, p_j } => {
                let diff = p_i - p_j;
                if !(diff.norm() > 0.0) {
                    return Err(Error::ZeroLandmarkDifference);
                }
                Ok(vec![landmark_channel(
                    &self.name,
                    diff,
                    self.variance,
                    self.rate_hz,
                )?])
            }
        }
    }
}

/// Gyroscope plus a list of scalar-measurement sensors.
#[derive(Clone, Debug)]
pub struct SensorSuite {
    pub label: String,
    /// Per-axis variance of the additive gyro noise (rad²/s²).
    pub gyro_variance: f64,
    pub sensors: Vec<SensorSpec>,
}

/// `a^B = -Rᵀ g e₃` is the body-frame image of `(0, 0, -g)`.
pub fn accel_inertial() -> Vec3<f64> {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

/// `m^I = (1/√2, 0, 1/√2)`.
pub fn mag_inertial() -> Vec3<f64> {
    let s = 0.5f64.sqrt();
    Vec3::new(s, 0.0, s)
}

impl SensorSuite {
    /// Accelerometer and magnetometer on the given axes with the rates and
    /// covariances of the paper's experiments.
    pub fn accel_mag(label: &str, accel_axes: &[usize], mag_axes: &[usize]) -> Self {
        let mut sensors = Vec::new();
        if !accel_axes.is_empty() {
            sensors.push(SensorSpec {
                name: "accel".into(),
                kind: SensorKind::Vector {
                    inertial: VectorProvider::Constant(accel_inertial()),
                    axes: accel_axes.to_vec(),
                },
                rate_hz: 1000.0,
                variance: 0.001,
            });
        }
        if !mag_axes.is_empty() {
            sensors.push(SensorSpec {
                name: "mag".into(),
                kind: SensorKind::Vector {
                    inertial: VectorProvider::Constant(mag_inertial()),
                    axes: mag_axes.to_vec(),
                },
                rate_hz: 100.0,
                variance: 0.01,
            });
        }
        Self {
            label: label.into(),
            gyro_variance: 0.001,
            sensors,
        }
    }

    /// Full accelerometer and magnetometer.
    pub fn case1() -> Self {
        Self::accel_mag("case1", &[1, 2, 3], &[1, 2, 3])
    }

    /// Accelerometer axes 1, 2 and magnetometer axis 2.
    pub fn case2() -> Self {
        Self::accel_mag("case2", &[1, 2], &[2])
    }

    /// Accelerometer axis 3 and magnetometer axes 1, 3.
    pub fn case3() -> Self {
        Self::accel_mag("case3", &[3], &[1, 3])
    }

    /// Same layout with every noise variance set to zero.
    pub fn noiseless(mut self) -> Self {
        self.gyro_variance = 0.0;
        for s in &mut self.sensors {
            s.variance = 0.0;
        }
        self
    }

    pub fn channels(&self) -> Result<Vec<ScalarChannel<f64>>> {
        let mut out = Vec::new();
        for s in &self.sensors {
            out.extend(s.channels()?);
        }
        if out.is_empty() {
            return Err(Error::NoActiveChannels);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &out {
            if c.id == GYRO_CHANNEL || !seen.insert(c.id.clone()) {
                return Err(Error::Config(format!("duplicate channel id `{}`", c.id)));
            }
        }
        Ok(out)
    }

    /// Filter tuning matching the suite: gyro covariance and per-channel noise.
    pub fn filter_config(&self, imu_rate: f64) -> Result<FilterConfig<f64>> {
        let mut cfg = FilterConfig::new(imu_rate, Mat3::identity() * self.gyro_variance);
        for c in self.channels()? {
            cfg = cfg.with_channel(c.id, c.noise_variance, c.rate_hz);
        }
        Ok(cfg)
    }
}

/// Channels with their IMU-tick decimation factor.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub channels: Vec<ScalarChannel<f64>>,
    pub decimation: Vec<usize>,
}

impl Schedule {
    /// Each channel rate must divide the IMU rate to within `1e-9`.
    pub fn new(suite: &SensorSuite, imu_rate: f64) -> Result<Self> {
        let channels = suite.channels()?;
        let decimation = channels
            .iter()
            .map(|c| {
                let ratio = imu_rate / c.rate_hz;
                let n = ratio.round();
                if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
                    Err(Error::InvalidParameter(format!(
                        "channel `{}`: rate {} Hz does not divide the IMU rate {} Hz",
                        c.id, c.rate_hz, imu_rate
                    )))
                } else {
                    Ok(n as usize)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            channels,
            decimation,
        })
    }

    /// Noisy measurements due at tick `k`, appended to `out` in channel order.
    pub fn synthesize_tick(
        &self,
        k: usize,
        sample: &TruthSample,
        rng: &mut impl Rng,
        out: &mut Vec<ScalarMeasurement<f64>>,
    ) {
        for (ch, &dec) in self.channels.iter().zip(&self.decimation) {
            if !k.is_multiple_of(dec) {
                continue;
            }
            let mut m = ch.sample(&sample.r, sample.t);
            let sd = ch.noise_variance.sqrt();
            match ch.kind {
                ChannelKind::Landmark { .. } => {
                    m.a += Vec3::from_fn(|_, _| sd * gaussian(rng));
                }
                _ => m.y += sd * gaussian(rng),
            }
            out.push(m);
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noisy gyro reading `ω + n`, `n ~ N(0, variance I₃)`.
pub fn noisy_gyro(omega: &Vec3<f64>, variance: f64, rng: &mut impl Rng) -> Vec3<f64> {
    let sd = variance.sqrt();
    omega + Vec3::from_fn(|_, _| sd * gaussian(rng))
}

/// Time-ordered sensor log: per tick the gyro record, then due channels in
/// declaration order. Gyro records carry `ω` in `a` with `y = 0`, `b = 0`.
pub fn synthesize_measurements(
    truth: &Truth,
    suite: &SensorSuite,
    noise_seed: u64,
) -> Result<Vec<ScalarMeasurement<f64>>> {
    let schedule = Schedule::new(suite, truth.imu_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut out = Vec::new();
    for (k, s) in truth.samples.iter().enumerate() {
        out.push(ScalarMeasurement {
            channel_id: GYRO_CHANNEL.to_owned(),
            t: s.t,
            y: 0.0,
            a: noisy_gyro(&s.omega, suite.gyro_variance, &mut rng),
            b: Vec3::zeros(),
        });
        schedule.synthesize_tick(k, s, &mut rng, &mut out);
    }
    Ok(out)
}

/// Per-axis σ whose half-normal mean `σ √(2/π)` equals `mean_abs`.
pub fn sigma_for_mean_abs_error(mean_abs: f64) -> f64 {
    mean_abs * (PI / 2.0).sqrt()
}

/// `R̂₀ = R₀ exp(e)`, `e ~ N(0, σ² I₃)`.
pub fn random_initial_estimate(
    r_true0: &RotationMatrix<f64>,
    sigma: f64,
    rng: &mut impl Rng,
) -> RotationMatrix<f64> {
    let e = Vec3::from_fn(|_, _| sigma * gaussian(rng));
    *r_true0 * exp_so3(&e)
}

#[derive(Clone, Debug)]
pub struct MonteCarloSpec {
    pub n_runs: usize,
    /// Per-axis σ of the initial attitude error (rad).
    pub init_sigma: f64,
    pub seed: u64,
    /// Percentiles in `(0, 100)`.
    pub percentiles: Vec<f64>,
    /// Worker threads; `0` uses the rayon default.
    pub jobs: usize,
}

impl MonteCarloSpec {
    pub fn paper(seed: u64) -> Self {
        Self {
            n_runs: 100,
            init_sigma: sigma_for_mean_abs_error(22.5f64.to_radians()),
            seed,
            percentiles: vec![5.0, 95.0],
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidParameter("n_runs must be at least 1".into()));
        }
        if !(self.init_sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "initial error dispersion must be >= 0".into(),
            ));
        }
        if let Some(p) = self
            .percentiles
            .iter()
            .find(|p| !(**p > 0.0 && **p < 100.0))
        {
            return Err(Error::InvalidParameter(format!(
                "percentile {p} is outside (0, 100)"
            )));
        }
        Ok(())
    }
}

/// Error trace of one trial on the IMU grid.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trial: usize,
    /// RNG stream index under the root seed.
    pub stream: u64,
    pub errors: Vec<f64>,
    pub initial_error: f64,
    pub final_error: f64,
    /// First time after which the error stays below [`CONVERGED_ERROR`].
    pub convergence_time: Option<f64>,
}

impl RunResult {
    /// Final error below 5° and below 10 % of the initial error.
    pub fn converged(&self) -> bool {
        self.final_error < CONVERGED_ERROR && self.final_error < 0.1 * self.initial_error
    }

    pub fn diverged(&self) -> bool {
        self.final_error > DIVERGED_ERROR
    }
}

/// Rng of trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// One trial: random initial estimate, noisy synthesis and filtering fused
/// tick by tick without materializing a log.
pub fn run_trial(
    truth: &Truth,
    schedule: &Schedule,
    gyro_variance: f64,
    config: &FilterConfig<f64>,
    init_sigma: f64,
    seed: u64,
    trial: usize,
) -> Result<RunResult> {
    let mut rng = trial_rng(seed, trial as u64);
    let first = truth
        .samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty truth trajectory".into()))?;
    let r_hat0 = random_initial_estimate(&first.r, init_sigma, &mut rng);
    let errors = track(truth, schedule, gyro_variance, config, &r_hat0, &mut rng)?;
    let initial_error = attitude_error_angle(&first.r, &r_hat0);
    let final_error = *errors.last().unwrap_or(&initial_error);
    let convergence_time = match errors.iter().rposition(|&e| e >= CONVERGED_ERROR) {
        None => Some(first.t),
        Some(i) if i + 1 < errors.len() => Some(truth.samples[i + 1].t),
        Some(_) => None,
    };
    Ok(RunResult {
        trial,
        stream: trial as u64,
        errors,
        initial_error,
        final_error,
        convergence_time,
    })
}

/// Filters synthesized measurements from `r_hat0` and returns the error
/// angle at every IMU tick.
pub fn track(
    truth: &Truth,
    schedule: &Schedule,
    gyro_variance: f64,
    config: &FilterConfig<f64>,
    r_hat0: &RotationMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let weights: Vec<f64> = schedule
        .channels
        .iter()
        .map(|c| config.measurement_weight(&c.id))
        .collect::<Result<_>>()?;
    let index: std::collections::HashMap<&str, usize> = schedule
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut filter = DiscreteFilter::from_rotation(config.clone(), r_hat0)?;
    let mut errors = Vec::with_capacity(truth.len());
    let mut records = Vec::new();
    let mut batch = Vec::new();
    let mut omega_prev = Vec3::zeros();
    for (k, s) in truth.samples.iter().enumerate() {
        let omega_meas = noisy_gyro(&s.omega, gyro_variance, rng);
        records.clear();
        schedule.synthesize_tick(k, s, rng, &mut records);
        batch.clear();
        batch.extend(records.iter().map(|m| Observation {
            a: m.a,
            b: m.b,
            y: m.y,
            weight: weights[index[m.channel_id.as_str()]],
        }));
        let out = if k == 0 {
            filter.initial_step(&batch)?
        } else {
            filter.step(&omega_prev, &batch)?
        };
        omega_prev = omega_meas;
        errors.push(attitude_error_angle(&s.r, &out.rotation));
    }
    Ok(errors)
}

/// Per-time statistics across trials.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// `(p, curve)` per requested percentile.
    pub percentiles: Vec<(f64, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct MonteCarloSummary {
    pub label: String,
    pub n_runs: usize,
    pub converged: usize,
    /// Trials whose final error exceeds π/2.
    pub diverged: Vec<usize>,
    pub mean_initial_error: f64,
    pub mean_final_error: f64,
    pub max_final_error: f64,
    /// Median convergence time over trials that converged.
    pub median_convergence_time: Option<f64>,
    /// Time-averaged width between the outermost percentiles over the second half of the run.
    pub late_band_width: f64,
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
    pub summary: MonteCarloSummary,
}

/// Runs `spec.n_runs` independent trials of `suite` on `profile`.
pub fn run_monte_carlo(
    spec: &MonteCarloSpec,
    suite: &SensorSuite,
    profile: &TrajectoryProfile,
    config: &FilterConfig<f64>,
) -> Result<MonteCarloResult> {
    spec.validate()?;
    let truth = integrate_truth(profile)?;
    let schedule = Schedule::new(suite, profile.imu_rate)?;
    let trial = |i: usize| {
        run_trial(
            &truth,
            &schedule,
            suite.gyro_variance,
            config,
            spec.init_sigma,
            spec.seed,
            i,
        )
    };
    let runs: Vec<RunResult> = if spec.jobs == 1 {
        (0..spec.n_runs).map(trial).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..spec.n_runs)
                .into_par_iter()
                .map(trial)
                .collect::<Result<_>>()
        })?
    };
    for r in runs.iter().filter(|r| r.diverged()) {
        log::warn!(
            "{}: trial {} diverged, final error {:.4} rad",
            suite.label,
            r.trial,
            r.final_error
        );
    }
    let times: Vec<f64> = truth.samples.iter().map(|s| s.t).collect();
    let aggregate = aggregate(&times, &runs, &spec.percentiles);
    let summary = summarize(&suite.label, &runs, &aggregate);
    Ok(MonteCarloResult {
        runs,
        aggregate,
        summary,
    })
}

/// Mean and percentiles of the error traces at every time bin.
pub fn aggregate(times: &[f64], runs: &[RunResult], percentiles: &[f64]) -> Aggregate {
    let n = times.len();
    let mut mean = Vec::with_capacity(n);
    let mut curves: Vec<Vec<f64>> = vec![Vec::with_capacity(n); percentiles.len()];
    let mut column = Vec::with_capacity(runs.len());
    for k in 0..n {
        column.clear();
        column.extend(runs.iter().map(|r| r.errors[k]));
        mean.push(column.iter().sum::<f64>() / column.len() as f64);
        column.sort_by(f64::total_cmp);
        for (curve, &p) in curves.iter_mut().zip(percentiles) {
            curve.push(percentile_sorted(&column, p));
        }
    }
    Aggregate {
        times: times.to_vec(),
        mean,
        percentiles: percentiles.iter().copied().zip(curves).collect(),
    }
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            sorted[lo] * (1.0 - w) + sorted[hi] * w
        }
    }
}

fn band(agg: &Aggregate) -> Option<(&[f64], &[f64])> {
    let lo = agg.percentiles.iter().min_by(|a, b| a.0.total_cmp(&b.0))?;
    let hi = agg.percentiles.iter().max_by(|a, b| a.0.total_cmp(&b.0))?;
    Some((&lo.1, &hi.1))
}

fn summarize(label: &str, runs: &[RunResult], agg: &Aggregate) -> MonteCarloSummary {
    let n = runs.len() as f64;
    let mut conv: Vec<f64> = runs
        .iter()
        .filter(|r| r.converged())
        .filter_map(|r| r.convergence_time)
        .collect();
    conv.sort_by(f64::total_cmp);
    let late_band_width = band(agg)
        .map(|(lo, hi)| {
            let start = lo.len() / 2;
            let m = (lo.len() - start).max(1) as f64;
            hi[start..]
                .iter()
                .zip(&lo[start..])
                .map(|(h, l)| h - l)
                .sum::<f64>()
                / m
        })
        .unwrap_or(f64::NAN);
    MonteCarloSummary {
        label: label.to_owned(),
        n_runs: runs.len(),
        converged: runs.iter().filter(|r| r.converged()).count(),
        diverged: runs
            .iter()
            .filter(|r| r.diverged())
            .map(|r| r.trial)
            .collect(),
        mean_initial_error: runs.iter().map(|r| r.initial_error).sum::<f64>() / n,
        mean_final_error: runs.iter().map(|r| r.final_error).sum::<f64>() / n,
        max_final_error: runs.iter().map(|r| r.final_error).fold(0.0, f64::max),
        median_convergence_time: (!conv.is_empty()).then(|| percentile_sorted(&conv, 50.0)),
        late_band_width,
    }
}

/// Bootstrap comparison of percentile-band widths between two sets of runs.
#[derive(Clone, Debug)]
pub struct BandComparison {
    /// Mean over the compared bins of `width(wide) - width(narrow)`.
    pub observed_difference: f64,
    /// Lower one-sided confidence bound of the difference.
    pub lower_bound: f64,
    pub confidence: f64,
    /// Fraction of bootstrap replicates with a positive difference.
    pub fraction_positive: f64,
}

/// Resamples trials with replacement in each set independently and
/// recomputes the bin-averaged width difference `(p_hi - p_lo)` at the
/// bins `indices`.
#[allow(clippy::too_many_arguments)]
pub fn compare_band_width(
    wide: &[RunResult],
    narrow: &[RunResult],
    indices: &[usize],
    p_lo: f64,
    p_hi: f64,
    n_boot: usize,
    confidence: f64,
    seed: u64,
) -> Result<BandComparison> {
    if wide.is_empty() || narrow.is_empty() || indices.is_empty() || n_boot == 0 {
        return Err(Error::InvalidParameter(
            "bootstrap needs runs, bins and replicates".into(),
        ));
    }
    let mean_width = |runs: &[RunResult], pick: &[usize]| -> f64 {
        let mut col = Vec::with_capacity(pick.len());
        let mut acc = 0.0;
        for &k in indices {
            col.clear();
            col.extend(pick.iter().map(|&i| runs[i].errors[k]));
            col.sort_by(f64::total_cmp);
            acc += percentile_sorted(&col, p_hi) - percentile_sorted(&col, p_lo);
        }
        acc / indices.len() as f64
    };
    let all_w: Vec<usize> = (0..wide.len()).collect();
    let all_n: Vec<usize> = (0..narrow.len()).collect();
    let observed_difference = mean_width(wide, &all_w) - mean_width(narrow, &all_n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(n_boot);
    let mut pw = vec![0; wide.len()];
    let mut pn = vec![0; narrow.len()];
    for _ in 0..n_boot {
        pw.iter_mut()
            .for_each(|i| *i = rng.random_range(0..wide.len()));
        pn.iter_mut()
            .for_each(|i| *i = rng.random_range(0..narrow.len()));
        diffs.push(mean_width(wide, &pw) - mean_width(narrow, &pn));
    }
    diffs.sort_by(f64::total_cmp);
    Ok(BandComparison {
        observed_difference,
        lower_bound: percentile_sorted(&diffs, 100.0 * (1.0 - confidence)),
        confidence,
        fraction_positive: diffs.iter().filter(|d| **d > 0.0).count() as f64 / n_boot as f64,
    })
}

/// Least-squares line through `(t, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `ln y = intercept + slope · t`. Nonpositive `y` are rejected.
pub fn log_linear_fit(times: &[f64], values: &[f64]) -> Result<LogLinearFit> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::InvalidParameter(
            "fit needs at least 3 paired samples".into(),
        ));
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(
            "log fit needs positive values".into(),
        ));
    }
    let n = times.len() as f64;
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mt = times.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in times.iter().zip(&ly) {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if !(stt > 0.0) {
        return Err(Error::InvalidParameter("fit needs distinct times".into()));
    }
    let slope = sty / stt;
    let r_squared = if syy > 0.0 {
        sty * sty / (stt * syy)
    } else {
        1.0
    };
    Ok(LogLinearFit {
        slope,
        intercept: my - slope * mt,
        r_squared,
    })
}

/// Error trace of one noiseless run of `suite` started at `R₀ exp(initial_error)`.
/// The filter keeps the tuning of `suite`; only the synthesized noise is removed.
pub fn noiseless_run(
    suite: &SensorSuite,
    profile: &TrajectoryProfile,
    mode: GainMode,
    initial_error: Vec3<f64>,
) -> Result<Vec<f64>> {
    let truth = integrate_truth(profile)?;
    let quiet = suite.clone().noiseless();
    let schedule = Schedule::new(&quiet, profile.imu_rate)?;
    let mut config = suite.filter_config(profile.imu_rate)?;
    config.mode = mode;
    let r_hat0 = truth.samples[0].r * exp_so3(&initial_error);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    track(&truth, &schedule, 0.0, &config, &r_hat0, &mut rng)
}

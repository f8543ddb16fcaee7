//! Deterministic linear time-varying Kalman filter on `x = vec(Rᵀ)`.
//!
//! The state dynamics are `ẋ = -(I₃ ⊗ [ω]×) x` and every scalar measurement
//! is linear, `y = C(t) x`. Under a zero-order hold on `ω` the discrete
//! transition is exact, `A_k = I₃ ⊗ exp(-[ω τ]×)`, so the only approximation
//! in the discrete filter is the noise tuning.
//!
//! [`DiscreteFilter`] runs one prediction (IMU) and an optional correction
//! (any other sensor) per IMU tick, symmetrizes `P`, projects the estimate
//! onto SO(3) and resets the state to the projection. [`run_discrete_filter`]
//! drives it from a time-ordered sensor log.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::{Error, Result};
use crate::measurements::{kron_row, OutputMatrix, ScalarMeasurement, GYRO_CHANNEL};
use crate::scalar::{tol, Real};
use crate::so3::{
    exp_so3, project_to_so3, skew, unvec_to_rotation_candidate, Mat3, Mat9, RotationMatrix,
    StateVec9, Vec3,
};

/// Gain law used by the correction step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GainMode {
    /// Riccati-propagated covariance, `K = P Cᵀ (C P Cᵀ + Q⁻¹)⁻¹`.
    #[default]
    Riccati,
    /// `P ≡ I₉`, `K = Cᵀ Q`.
    FixedGain,
}

impl GainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Riccati => "riccati",
            Self::FixedGain => "fixed_gain",
        }
    }
}

impl core::str::FromStr for GainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "riccati" => Ok(Self::Riccati),
            "fixed_gain" | "fixed-gain" => Ok(Self::FixedGain),
            other => Err(Error::Config(format!(
                "unknown filter mode `{other}` (expected riccati or fixed_gain)"
            ))),
        }
    }
}

/// Estimate `x̂`, covariance `P` and time.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<T: Real> {
    pub x_hat: StateVec9<T>,
    pub p: Mat9<T>,
    pub t: T,
    pub mode: GainMode,
}

impl<T: Real> FilterState<T> {
    pub fn from_rotation(r: &RotationMatrix<T>, p0_scale: T, mode: GainMode) -> Self {
        Self::from_raw(r.to_state(), p0_scale, mode)
    }

    pub fn from_raw(x_hat: StateVec9<T>, p0_scale: T, mode: GainMode) -> Self {
        let p = match mode {
            GainMode::Riccati => Mat9::identity() * p0_scale,
            GainMode::FixedGain => Mat9::identity(),
        };
        Self {
            x_hat,
            p,
            t: T::zero(),
            mode,
        }
    }

    /// `R̄ = (vec⁻¹(x̂))ᵀ`; not necessarily orthonormal.
    pub fn attitude_candidate(&self) -> Mat3<T> {
        unvec_to_rotation_candidate(&self.x_hat)
    }

    /// Largest asymmetry `|P - Pᵀ|∞`.
    pub fn asymmetry(&self) -> T {
        (self.p - self.p.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> T {
        min_symmetric_eigenvalue(&self.p)
    }
}

/// Noise settings of one scalar channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelNoise<T: Real> {
    pub variance: T,
    pub rate_hz: T,
}

/// Tuning and behavior switches of the discrete filter.
#[derive(Clone, Debug)]
pub struct FilterConfig<T: Real> {
    pub mode: GainMode,
    pub p0_scale: T,
    pub m_floor: T,
    pub q_floor: T,
    pub reset_enabled: bool,
    /// Gyroscope noise covariance (rad²/s²).
    pub gyro_cov: Mat3<T>,
    pub imu_rate: T,
    /// Normalized per-row gain used by [`GainMode::FixedGain`].
    pub fixed_gain: T,
    /// Noise and rate per channel id, in declaration order.
    pub channels: IndexMap<String, ChannelNoise<T>>,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(imu_rate: T, gyro_cov: Mat3<T>) -> Self {
        Self {
            mode: GainMode::Riccati,
            p0_scale: T::one(),
            m_floor: T::lit(1e-9),
            q_floor: T::lit(1e-9),
            reset_enabled: true,
            gyro_cov,
            imu_rate,
            fixed_gain: T::lit(0.5),
            channels: IndexMap::new(),
        }
    }

    pub fn with_channel(mut self, id: impl Into<String>, variance: T, rate_hz: T) -> Self {
        self.channels
            .insert(id.into(), ChannelNoise { variance, rate_hz });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > T::zero()) {
            return Err(Error::InvalidParameter("imu rate must be positive".into()));
        }
        if !(self.m_floor >= T::zero()) || !(self.q_floor >= T::zero()) {
            return Err(Error::InvalidParameter(
                "noise floors must be nonnegative".into(),
            ));
        }
        if !(self.p0_scale > T::zero()) {
            return Err(Error::InvalidParameter("p0_scale must be positive".into()));
        }
        if !(self.fixed_gain > T::zero()) {
            return Err(Error::InvalidParameter(
                "fixed_gain must be positive".into(),
            ));
        }
        if !is_psd(&self.gyro_cov) {
            return Err(Error::NotPsd("gyro_cov"));
        }
        for (id, noise) in &self.channels {
            if !(noise.variance >= T::zero()) || !(noise.rate_hz > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "channel `{id}` needs variance >= 0 and rate > 0"
                )));
            }
        }
        Ok(())
    }

    /// Diagonal entry of `Q_k⁻¹` for a channel.
    pub fn measurement_weight(&self, id: &str) -> Result<T> {
        let noise = self
            .channels
            .get(id)
            .ok_or_else(|| Error::UnknownChannel(id.to_owned()))?;
        Ok(discrete_measurement_variance(
            noise.variance,
            noise.rate_hz,
            self.q_floor,
        ))
    }
}

/// `A(ω) = -(I₃ ⊗ [ω]×)`.
pub fn a_matrix<T: Real>(omega: &Vec3<T>) -> Mat9<T> {
    block_diagonal(&(-skew(omega)))
}

/// Exact ZOH transition `I₃ ⊗ exp(-[ω τ]×)`.
pub fn discrete_transition<T: Real>(omega: &Vec3<T>, tau: T) -> Mat9<T> {
    block_diagonal(&step_rotation(omega, tau))
}

fn step_rotation<T: Real>(omega: &Vec3<T>, tau: T) -> Mat3<T> {
    exp_so3(&(-omega * tau)).into_inner()
}

fn block_diagonal<T: Real>(block: &Mat3<T>) -> Mat9<T> {
    let mut m = Mat9::zeros();
    for j in 0..3 {
        m.fixed_view_mut::<3, 3>(3 * j, 3 * j).copy_from(block);
    }
    m
}

/// Applies `A = I₃ ⊗ E` to the state and `A P Aᵀ` to the covariance blockwise.
fn propagate<T: Real>(state: &mut FilterState<T>, e: &Mat3<T>) {
    for j in 0..3 {
        let block = state.x_hat.fixed_rows::<3>(3 * j).into_owned();
        state
            .x_hat
            .fixed_rows_mut::<3>(3 * j)
            .copy_from(&(e * block));
    }
    if state.mode == GainMode::Riccati {
        let e_t = e.transpose();
        let mut out = Mat9::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let b = state.p.fixed_view::<3, 3>(3 * i, 3 * j);
                out.fixed_view_mut::<3, 3>(3 * i, 3 * j)
                    .copy_from(&(e * b * e_t));
            }
        }
        state.p = out;
    }
}

/// Prediction: `x̂ ← A x̂`, `P ← A P Aᵀ + M_k`, `t ← t + τ`.
pub fn predict<T: Real>(
    state: &FilterState<T>,
    omega: &Vec3<T>,
    tau: T,
    m_k: &Mat9<T>,
) -> Result<FilterState<T>> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {tau}"
        )));
    }
    if !is_psd(m_k) {
        return Err(Error::NotPsd("M_k"));
    }
    let mut next = state.clone();
    predict_in_place(&mut next, omega, tau, m_k);
    Ok(next)
}

fn predict_in_place<T: Real>(state: &mut FilterState<T>, omega: &Vec3<T>, tau: T, m_k: &Mat9<T>) {
    propagate(state, &step_rotation(omega, tau));
    if state.mode == GainMode::Riccati {
        state.p += m_k;
    }
    state.t += tau;
}

/// Riccati correction with measurement covariance `q_inv = Q_k⁻¹`:
/// `K = P Cᵀ (C P Cᵀ + Q_k⁻¹)⁻¹`, `x̂ ← x̂ + K (y - C x̂)`, `P ← (I - K C) P`,
/// followed by symmetrization of `P`.
pub fn update<T: Real>(
    state: &FilterState<T>,
    c: &OutputMatrix<T>,
    y: &DVector<T>,
    q_inv: &DMatrix<T>,
) -> Result<FilterState<T>> {
    let q = c.rows();
    if y.len() != q || q_inv.nrows() != q || q_inv.ncols() != q {
        return Err(Error::Dimension(format!(
            "C has {q} rows, y has {}, Q⁻¹ is {}x{}",
            y.len(),
            q_inv.nrows(),
            q_inv.ncols()
        )));
    }
    if q_inv.clone().cholesky().is_none() || !is_symmetric(q_inv) {
        return Err(Error::NotPsd("Q_k⁻¹ (must be symmetric positive definite)"));
    }
    let mut next = state.clone();
    riccati_correct(&mut next, c.matrix(), y, q_inv)?;
    Ok(next)
}

fn riccati_correct<T: Real>(
    state: &mut FilterState<T>,
    c: &nalgebra::OMatrix<T, nalgebra::Dyn, nalgebra::U9>,
    y: &DVector<T>,
    q_inv: &DMatrix<T>,
) -> Result<()> {
    let pct = state.p * c.transpose();
    let s = c * &pct + q_inv;
    let cond = condition_number(&s);
    if !(cond <= T::lit(tol::INNOVATION_CONDITION)) {
        return Err(Error::IllConditioned(cond.as_f64()));
    }
    let chol = s.cholesky().ok_or(Error::IllConditioned(f64::INFINITY))?;
    // K = P Cᵀ S⁻¹, via S Kᵀ = C P
    let k = chol.solve(&pct.transpose()).transpose();
    let innovation = y - c * state.x_hat;
    state.x_hat += &k * innovation;
    let kc = &k * c;
    state.p -= kc * state.p;
    symmetrize(&mut state.p);
    Ok(())
}

/// Fixed-gain correction `x̂ ← x̂ + Cᵀ Q (y - C x̂)`; `P` is left untouched.
pub fn fixed_gain_update<T: Real>(
    state: &FilterState<T>,
    c: &OutputMatrix<T>,
    y: &DVector<T>,
    q: &DMatrix<T>,
) -> Result<FilterState<T>> {
    let rows = c.rows();
    if y.len() != rows || q.nrows() != rows || q.ncols() != rows {
        return Err(Error::Dimension(format!(
            "C has {rows} rows, y has {}, Q is {}x{}",
            y.len(),
            q.nrows(),
            q.ncols()
        )));
    }
    let mut next = state.clone();
    let innovation = y - c.matrix() * next.x_hat;
    next.x_hat += c.matrix().transpose() * (q * innovation);
    Ok(next)
}

/// Noise input matrix: block `j` is `-[x̂_j]×`, `x̂_j` the `j`-th 3-block.
pub fn noise_propagation<T: Real>(x_hat: &StateVec9<T>) -> SMatrix<T, 9, 3> {
    let mut n = SMatrix::<T, 9, 3>::zeros();
    for j in 0..3 {
        let block: Vec3<T> = x_hat.fixed_rows::<3>(3 * j).into_owned();
        n.fixed_view_mut::<3, 3>(3 * j, 0)
            .copy_from(&(-skew(&block)));
    }
    n
}

/// Discrete process weight `M_k = (1/f_imu) N(x̂) Cov(n^ω) N(x̂)ᵀ + m_floor I₉`.
pub fn tune_m<T: Real>(
    x_hat: &StateVec9<T>,
    gyro_cov: &Mat3<T>,
    imu_rate: T,
    m_floor: T,
) -> Mat9<T> {
    let n = noise_propagation(x_hat);
    let mut m = n * gyro_cov * n.transpose() / imu_rate;
    for i in 0..9 {
        m[(i, i)] += m_floor;
    }
    m
}

/// `(1/f_sensor) σ² + q_floor`, one diagonal entry of `Q_k⁻¹`.
pub fn discrete_measurement_variance<T: Real>(variance: T, rate_hz: T, q_floor: T) -> T {
    variance / rate_hz + q_floor
}

/// Diagonal `Q_k⁻¹` for channels given as `(variance, rate)` pairs.
pub fn tune_q<T: Real>(channels: &[ChannelNoise<T>], q_floor: T) -> DMatrix<T> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        channels.len(),
        channels
            .iter()
            .map(|c| discrete_measurement_variance(c.variance, c.rate_hz, q_floor)),
    ))
}

/// Result of the SVD reconstruction step.
#[derive(Clone, Copy, Debug)]
pub struct Reconstruction<T: Real> {
    pub rotation: RotationMatrix<T>,
    /// `x̂` was replaced by `vec(R̂ᵀ)`.
    pub reset_applied: bool,
    pub degenerate: bool,
    pub ambiguous: bool,
}

/// Projects `R̄ = (vec⁻¹ x̂)ᵀ` onto SO(3) and, when `reset` is set, replaces
/// `x̂` by `vec(R̂ᵀ)`. A rank-deficient `R̄` is reported and leaves `x̂` as is.
/// `P` is never modified.
pub fn reconstruct_and_reset<T: Real>(
    state: &FilterState<T>,
    reset: bool,
) -> (RotationMatrix<T>, FilterState<T>) {
    let mut next = state.clone();
    let info = reconstruct_in_place(&mut next, reset);
    (info.rotation, next)
}

fn reconstruct_in_place<T: Real>(state: &mut FilterState<T>, reset: bool) -> Reconstruction<T> {
    let candidate = state.attitude_candidate();
    let projection = project_to_so3(&candidate);
    let mut reset_applied = false;
    if projection.degenerate {
        log::warn!(
            "t = {}: estimate is rank deficient (singular values {:?}), reset skipped",
            state.t,
            projection.singular_values.as_slice()
        );
    } else if reset {
        state.x_hat = projection.rotation.to_state();
        reset_applied = true;
    }
    Reconstruction {
        rotation: projection.rotation,
        reset_applied,
        degenerate: projection.degenerate,
        ambiguous: projection.ambiguous,
    }
}

/// Measurement prepared for the filter: the evaluated vectors, the scalar
/// and the diagonal entry of `Q_k⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<T: Real> {
    pub a: Vec3<T>,
    pub b: Vec3<T>,
    pub y: T,
    pub weight: T,
}

/// One filter step worth of output.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput<T: Real> {
    pub t: T,
    pub rotation: RotationMatrix<T>,
    pub trace_p: T,
    pub updated: bool,
    pub reconstruction: Reconstruction<T>,
}

/// The discrete filter as a single-threaded state machine.
#[derive(Clone, Debug)]
pub struct DiscreteFilter<T: Real> {
    state: FilterState<T>,
    config: FilterConfig<T>,
    tau: T,
}

impl<T: Real> DiscreteFilter<T> {
    pub fn new(config: FilterConfig<T>, initial: StateVec9<T>) -> Result<Self> {
        config.validate()?;
        let state = FilterState::from_raw(initial, config.p0_scale, config.mode);
        let tau = T::one() / config.imu_rate;
        Ok(Self { state, config, tau })
    }

    pub fn from_rotation(config: FilterConfig<T>, r0: &RotationMatrix<T>) -> Result<Self> {
        Self::new(config, r0.to_state())
    }

    pub fn state(&self) -> &FilterState<T> {
        &self.state
    }

    pub fn config(&self) -> &FilterConfig<T> {
        &self.config
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Correction with no preceding prediction (measurements at the initial time).
    pub fn initial_step(&mut self, batch: &[Observation<T>]) -> Result<StepOutput<T>> {
        self.correct_and_reconstruct(batch)
    }

    /// Prediction with `omega` held over one IMU period, then correction with
    /// `batch` (possibly empty), symmetrization and reconstruction.
    pub fn step(&mut self, omega: &Vec3<T>, batch: &[Observation<T>]) -> Result<StepOutput<T>> {
        let m_k = match self.state.mode {
            GainMode::Riccati => tune_m(
                &self.state.x_hat,
                &self.config.gyro_cov,
                self.config.imu_rate,
                self.config.m_floor,
            ),
            GainMode::FixedGain => Mat9::zeros(),
        };
        predict_in_place(&mut self.state, omega, self.tau, &m_k);
        self.correct_and_reconstruct(batch)
    }

    fn correct_and_reconstruct(&mut self, batch: &[Observation<T>]) -> Result<StepOutput<T>> {
        let updated = !batch.is_empty();
        if updated {
            let mut c = nalgebra::OMatrix::<T, nalgebra::Dyn, nalgebra::U9>::zeros(batch.len());
            for (i, obs) in batch.iter().enumerate() {
                c.set_row(i, &kron_row(&obs.a, &obs.b));
            }
            let y = DVector::from_iterator(batch.len(), batch.iter().map(|o| o.y));
            match self.state.mode {
                GainMode::Riccati => {
                    let q_inv = DMatrix::from_diagonal(&DVector::from_iterator(
                        batch.len(),
                        batch.iter().map(|o| o.weight),
                    ));
                    riccati_correct(&mut self.state, &c, &y, &q_inv)?;
                }
                GainMode::FixedGain => {
                    let gains = DVector::from_iterator(
                        batch.len(),
                        c.row_iter().map(|row| {
                            let n2 = row.norm_squared();
                            if n2 > T::zero() {
                                self.config.fixed_gain / n2
                            } else {
                                T::zero()
                            }
                        }),
                    );
                    let innovation = y - &c * self.state.x_hat;
                    self.state.x_hat += c.transpose() * innovation.component_mul(&gains);
                }
            }
        }
        symmetrize(&mut self.state.p);
        let reconstruction = reconstruct_in_place(&mut self.state, self.config.reset_enabled);
        Ok(StepOutput {
            t: self.state.t,
            rotation: reconstruction.rotation,
            trace_p: self.state.p.trace(),
            updated,
            reconstruction,
        })
    }
}

/// Counters collected by [`run_discrete_filter`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub updates: usize,
    pub missing_imu_steps: usize,
    pub degenerate_resets: usize,
}

/// Estimate trajectory of a filter run.
#[derive(Clone, Debug)]
pub struct EstimateTrajectory<T: Real> {
    pub points: Vec<StepOutput<T>>,
    pub diagnostics: RunDiagnostics,
}

/// Runs the discrete filter over a sensor log.
///
/// Gyroscope records (channel [`GYRO_CHANNEL`], rate vector in `a`) drive
/// the IMU grid `t_k = k / f_imu`; any other record is assigned to the
/// nearest grid step and all records of one step form a single stacked
/// correction. A missing gyroscope sample holds the previous rate.
pub fn run_discrete_filter<T: Real>(
    config: &FilterConfig<T>,
    initial: StateVec9<T>,
    log: &[ScalarMeasurement<T>],
) -> Result<EstimateTrajectory<T>> {
    let mut filter = DiscreteFilter::new(config.clone(), initial)?;
    let tau = filter.tau();
    let mut prev_t = T::lit(f64::NEG_INFINITY);
    for rec in log {
        if rec.t < prev_t {
            return Err(Error::TimeReversed {
                t: rec.t.as_f64(),
                prev: prev_t.as_f64(),
            });
        }
        prev_t = rec.t;
        if rec.channel_id != GYRO_CHANNEL && !config.channels.contains_key(&rec.channel_id) {
            return Err(Error::UnknownChannel(rec.channel_id.clone()));
        }
    }
    if !log.iter().any(|r| r.channel_id == GYRO_CHANNEL) {
        return Err(Error::MissingImu(
            "log contains no gyroscope records".into(),
        ));
    }
    let step_of = |t: T| -> usize { (t / tau).round().as_f64().max(0.0) as usize };
    let last_step = log.last().map(|r| step_of(r.t)).unwrap_or(0);

    let mut gyro: Vec<Option<Vec3<T>>> = vec![None; last_step + 1];
    let mut batches: Vec<Vec<Observation<T>>> = vec![Vec::new(); last_step + 1];
    for rec in log {
        let k = step_of(rec.t);
        if rec.channel_id == GYRO_CHANNEL {
            gyro[k] = Some(rec.a);
        } else {
            batches[k].push(Observation {
                a: rec.a,
                b: rec.b,
                y: rec.y,
                weight: config.measurement_weight(&rec.channel_id)?,
            });
        }
    }

    let mut diagnostics = RunDiagnostics::default();
    let mut points = Vec::with_capacity(last_step + 1);
    let first = filter.initial_step(&batches[0])?;
    record(&mut diagnostics, &first);
    points.push(first);

    let mut held = gyro[0];
    for k in 1..=last_step {
        let omega = match gyro[k - 1] {
            Some(w) => {
                held = Some(w);
                w
            }
            None => {
                diagnostics.missing_imu_steps += 1;
                match held {
                    Some(w) => w,
                    None => {
                        return Err(Error::MissingImu(format!(
                            "no gyroscope sample before step {k}"
                        )))
                    }
                }
            }
        };
        let out = filter.step(&omega, &batches[k])?;
        record(&mut diagnostics, &out);
        points.push(out);
    }
    if diagnostics.missing_imu_steps > 0 {
        log::warn!(
            "{} IMU steps had no gyroscope sample; held previous rate",
            diagnostics.missing_imu_steps
        );
    }
    Ok(EstimateTrajectory {
        points,
        diagnostics,
    })
}

fn record<T: Real>(diag: &mut RunDiagnostics, out: &StepOutput<T>) {
    diag.steps += 1;
    if out.updated {
        diag.updates += 1;
    }
    if out.reconstruction.degenerate {
        diag.degenerate_resets += 1;
    }
}

/// Continuous-time filter integrated with classical RK4, used as a reference
/// for the discrete implementation:
/// `dx̂/dt = A x̂ + P Cᵀ Q (y - C x̂)`, `dP/dt = A P + P Aᵀ - P Cᵀ Q C P + M`.
pub mod continuous {
    use super::*;

    /// Continuous-time output at time `t`: `C(t)`, `y(t)` and `Q(t)`.
    pub struct Output<T: Real> {
        pub c: nalgebra::OMatrix<T, nalgebra::Dyn, nalgebra::U9>,
        pub y: DVector<T>,
        pub q: DMatrix<T>,
    }

    fn derivative<T: Real>(
        x: &StateVec9<T>,
        p: &Mat9<T>,
        omega: &Vec3<T>,
        out: &Output<T>,
        m: &Mat9<T>,
    ) -> (StateVec9<T>, Mat9<T>) {
        let a = a_matrix(omega);
        let pct = p * out.c.transpose();
        let gain = &pct * &out.q;
        let dx = a * x + &gain * (&out.y - &out.c * x);
        let dp = a * p + p * a.transpose() - &gain * pct.transpose() + m;
        (dx, dp)
    }

    /// One RK4 step of size `h` from `(x̂, P)` at time `t`.
    pub fn rk4_step<T: Real>(
        x: &StateVec9<T>,
        p: &Mat9<T>,
        t: T,
        h: T,
        omega: impl Fn(T) -> Vec3<T>,
        output: impl Fn(T) -> Output<T>,
        m: &Mat9<T>,
    ) -> (StateVec9<T>, Mat9<T>) {
        let half = h * T::lit(0.5);
        let (w0, wm, w1) = (omega(t), omega(t + half), omega(t + h));
        let (o0, om, o1) = (output(t), output(t + half), output(t + h));
        let (k1x, k1p) = derivative(x, p, &w0, &o0, m);
        let (k2x, k2p) = derivative(&(x + k1x * half), &(p + k1p * half), &wm, &om, m);
        let (k3x, k3p) = derivative(&(x + k2x * half), &(p + k2p * half), &wm, &om, m);
        let (k4x, k4p) = derivative(&(x + k3x * h), &(p + k3p * h), &w1, &o1, m);
        let sixth = h / T::lit(6.0);
        let x_next = x + (k1x + k2x * T::lit(2.0) + k3x * T::lit(2.0) + k4x) * sixth;
        let mut p_next = p + (k1p + k2p * T::lit(2.0) + k3p * T::lit(2.0) + k4p) * sixth;
        symmetrize(&mut p_next);
        (x_next, p_next)
    }
}

pub(crate) fn symmetrize<T: Real>(p: &mut Mat9<T>) {
    let half = T::lit(0.5);
    for i in 0..9 {
        for j in (i + 1)..9 {
            let v = (p[(i, j)] + p[(j, i)]) * half;
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

fn is_symmetric<T: Real, R: nalgebra::Dim, C: nalgebra::Dim, S>(
    m: &nalgebra::Matrix<T, R, C, S>,
) -> bool
where
    S: nalgebra::RawStorage<T, R, C>,
{
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(T::one());
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= T::lit(tol::SYMMETRY) * scale))
}

/// Symmetric with spectrum above `-1e-12 · max(1, |M|)`.
pub fn is_psd<T: Real, D>(m: &nalgebra::OMatrix<T, D, D>) -> bool
where
    D: nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<D, D>
        + nalgebra::allocator::Allocator<D>
        + nalgebra::allocator::Allocator<D, nalgebra::DimDiff<D, nalgebra::U1>>
        + nalgebra::allocator::Allocator<nalgebra::DimDiff<D, nalgebra::U1>>,
{
    if !is_symmetric(m) {
        return false;
    }
    let scale = m.amax().max(T::one());
    let eig = m.clone().symmetric_eigenvalues();
    eig.iter().all(|&e| e >= T::lit(tol::PSD_EIGEN) * scale)
}

pub(crate) fn min_symmetric_eigenvalue<T: Real>(m: &Mat9<T>) -> T {
    m.symmetric_eigenvalues().min()
}

fn condition_number<T: Real>(s: &DMatrix<T>) -> T {
    let eig = s.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(T::zero(), |acc, &e| acc.max(e.abs()));
    let min = eig
        .iter()
        .fold(T::max_value().unwrap_or(max), |acc, &e| acc.min(e));
    if min > T::zero() {
        max / min
    } else {
        T::max_value().unwrap_or(max)
    }
}

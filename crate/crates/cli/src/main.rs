//! `scalatt`: simulate, estimate, check observability and run Monte Carlo
//! studies from TOML scenario files.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 observability gate failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use scalar_attitude::config::Scenario;
use scalar_attitude::filter::run_discrete_filter;
use scalar_attitude::io;
use scalar_attitude::measurements::ChannelKind;
use scalar_attitude::observability::{
    complete_triads, cross_product_triad, default_mu, pe_condition_lemma2, sweep_windows,
};
use scalar_attitude::sim::{
    integrate_truth, percentile_sorted, run_monte_carlo, synthesize_measurements, MonteCarloResult,
    TrajectoryProfile, Truth,
};
use scalar_attitude::so3::{attitude_error_angle, Vec3};
use scalar_attitude::{Error, GainMode, Verdict};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_DELTA: f64 = 1.0;

#[derive(Parser)]
#[command(
    name = "scalatt",
    version,
    about = "Attitude estimation from scalar measurements"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the truth trajectory and synthesize a noisy sensor log.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the filter over a recorded sensor log.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: FilterFlags,
        /// Sensor log CSV.
        #[arg(long)]
        log: PathBuf,
        /// Truth CSV; adds the err_rad column and error statistics.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Windowed observability Gramian of the configured schedule.
    CheckObservability {
        #[command(flatten)]
        common: Common,
        /// Window length δ in seconds.
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        /// Eigenvalue threshold μ; defaults to the threshold of a 1 s window.
        #[arg(long)]
        mu: Option<f64>,
        /// Constant body rate `x,y,z` (rad/s) replacing the configured trajectory.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        omega: Option<Vec<f64>>,
        /// Truth CSV supplying R(t) instead of the configured trajectory.
        #[arg(long, conflicts_with = "omega")]
        truth: Option<PathBuf>,
        /// Skip the cross-product completion of two full vector sensors.
        #[arg(long)]
        no_completion: bool,
    },
    /// Monte Carlo study; one case per --config.
    Montecarlo {
        /// Scenario files (repeatable).
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Root seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Number of trials, overriding the config.
        #[arg(long)]
        runs: Option<usize>,
        /// Run length in seconds, overriding the config.
        #[arg(long)]
        duration: Option<f64>,
        /// Also write each trial's error trace, decimated to this many IMU steps.
        #[arg(long)]
        traces: Option<usize>,
        #[command(flatten)]
        filter: FilterFlags,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FilterFlags {
    /// Gain law: riccati or fixed_gain.
    #[arg(long)]
    mode: Option<String>,
    /// Disable the projection reset of the state.
    #[arg(long)]
    no_reset: bool,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_)) => 2,
            Some(
                Error::MalformedRecord { .. }
                | Error::TimeReversed { .. }
                | Error::UnknownChannel(_)
                | Error::MissingImu(_)
                | Error::Csv(_),
            ) => 3,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate { common } => simulate(&common),
        Command::Estimate {
            common,
            filter,
            log,
            truth,
        } => estimate(&common, &filter, &log, truth.as_deref()),
        Command::CheckObservability {
            common,
            delta,
            mu,
            omega,
            truth,
            no_completion,
        } => check_observability(&common, delta, mu, omega, truth.as_deref(), no_completion),
        Command::Montecarlo {
            config,
            out,
            seed,
            jobs,
            runs,
            duration,
            traces,
            filter,
        } => montecarlo(&config, &out, seed, jobs, runs, duration, traces, &filter),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Loaded scenario with its provenance.
struct Loaded {
    scenario: Scenario,
    hash: String,
}

impl Loaded {
    fn header(&self) -> String {
        io::provenance_line(VERSION, &self.hash, self.scenario.seed)
    }
}

fn load(path: &Path, seed: Option<u64>) -> CliResult<Loaded> {
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::config)?;
    let hash = Sha256::digest(&bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let mut scenario = Scenario::load(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
        scenario.montecarlo.seed = s;
    }
    Ok(Loaded { scenario, hash })
}

fn apply_filter_flags(scenario: &mut Scenario, flags: &FilterFlags) -> CliResult<()> {
    if let Some(mode) = &flags.mode {
        scenario.filter.mode = mode.parse::<GainMode>()?;
    }
    if flags.no_reset {
        scenario.filter.reset_enabled = false;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    let f = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::data)?;
    Ok(BufReader::new(f))
}

fn finish(mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().context("flushing output")?;
    Ok(())
}

fn simulate(common: &Common) -> CliResult<()> {
    let loaded = load(&common.config, common.seed)?;
    let sc = &loaded.scenario;
    let truth = integrate_truth(&sc.profile)?;
    let log = synthesize_measurements(&truth, &sc.suite, sc.seed)?;
    let header = loaded.header();

    let mut w = create(&common.out, &format!("{}_log.csv", sc.label))?;
    io::write_sensor_log(&mut w, Some(&header), &log)?;
    finish(w)?;
    let mut w = create(&common.out, &format!("{}_truth.csv", sc.label))?;
    io::write_truth(&mut w, Some(&header), &truth)?;
    finish(w)?;

    println!(
        "{}: {:.3} s at {} Hz, {} IMU records, {} measurement records",
        sc.label,
        sc.profile.duration,
        sc.profile.imu_rate,
        truth.len(),
        log.len() - truth.len()
    );
    for ch in sc.suite.channels()? {
        println!(
            "  {:<12} {:>8} Hz  variance {}",
            ch.id, ch.rate_hz, ch.noise_variance
        );
    }
    println!("wrote {}", common.out.display());
    Ok(())
}

fn estimate(
    common: &Common,
    flags: &FilterFlags,
    log_path: &Path,
    truth_path: Option<&Path>,
) -> CliResult<()> {
    let mut loaded = load(&common.config, common.seed)?;
    apply_filter_flags(&mut loaded.scenario, flags)?;
    let sc = &loaded.scenario;
    let log = io::read_sensor_log(open(log_path)?)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let truth = match truth_path {
        Some(p) => {
            Some(io::read_truth(open(p)?).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let est = run_discrete_filter(&sc.filter, sc.initial_estimate.to_state(), &log)
        .with_context(|| format!("filtering {}", log_path.display()))?;
    let errors: Option<Vec<f64>> = truth.as_ref().map(|tr| {
        est.points
            .iter()
            .map(|p| attitude_error_angle(&tr.at(p.t), &p.rotation))
            .collect()
    });

    let mut w = create(&common.out, &format!("{}_estimate.csv", sc.label))?;
    io::write_estimate(
        &mut w,
        Some(&loaded.header()),
        &est.points,
        errors.as_deref(),
    )?;
    finish(w)?;

    let d = &est.diagnostics;
    println!(
        "{}: {} steps, {} corrections, mode {}, reset {}",
        sc.label,
        d.steps,
        d.updates,
        sc.filter.mode.as_str(),
        if sc.filter.reset_enabled { "on" } else { "off" }
    );
    if d.missing_imu_steps > 0 {
        println!(
            "  {} steps held the previous gyro sample",
            d.missing_imu_steps
        );
    }
    if let Some(e) = &errors {
        let mut late: Vec<f64> = e[e.len() / 2..].to_vec();
        late.sort_by(f64::total_cmp);
        println!(
            "  error: initial {:.3}°, final {:.3}°, second half median {:.3}°, p95 {:.3}°",
            e[0].to_degrees(),
            e.last().copied().unwrap_or(f64::NAN).to_degrees(),
            percentile_sorted(&late, 50.0).to_degrees(),
            percentile_sorted(&late, 95.0).to_degrees()
        );
    }
    println!(
        "wrote {}",
        common
            .out
            .join(format!("{}_estimate.csv", sc.label))
            .display()
    );
    Ok(())
}

fn check_observability(
    common: &Common,
    delta: f64,
    mu: Option<f64>,
    omega: Option<Vec<f64>>,
    truth_path: Option<&Path>,
    no_completion: bool,
) -> CliResult<()> {
    let loaded = load(&common.config, common.seed)?;
    let sc = &loaded.scenario;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Failure::config(anyhow!("--delta must be positive")));
    }
    let mu = mu.unwrap_or_else(|| default_mu(DEFAULT_DELTA));
    if omega.as_ref().is_some_and(|w| w.len() != 3) {
        return Err(Failure::config(anyhow!(
            "--omega takes three comma-separated components"
        )));
    }
    let truth: Truth = match (truth_path, omega) {
        (Some(p), _) => io::read_truth(open(p)?)?,
        (None, Some(w)) => integrate_truth(&TrajectoryProfile::constant(
            Vec3::new(w[0], w[1], w[2]),
            sc.profile.r0,
            sc.profile.duration,
            sc.profile.imu_rate,
        ))?,
        (None, None) => integrate_truth(&sc.profile)?,
    };
    // the last sample holds over one more IMU period
    let t_end = truth
        .samples
        .last()
        .map(|s| s.t + 1.0 / truth.imu_rate)
        .unwrap_or(0.0);
    if delta > t_end {
        return Err(Failure::config(anyhow!(
            "--delta {delta} s exceeds the trajectory length {t_end} s"
        )));
    }
    let slowest = sc
        .suite
        .channels()?
        .iter()
        .map(|c| 1.0 / c.rate_hz)
        .fold(1.0 / sc.profile.imu_rate, f64::max);
    if delta < slowest {
        log::warn!(
            "window too short: δ = {delta} s is below the slowest sensor period {slowest} s, \
             so the verdict reflects the window rather than the sensors"
        );
    }

    let mut channels = sc.suite.channels()?;
    if !no_completion {
        if let Some(extra) = cross_product_triad(&channels) {
            println!(
                "cross-product completion: added {}",
                extra[0].id.trim_end_matches("_1")
            );
            channels.extend(extra);
        }
    }
    let at = |t: f64| truth.at(t);
    let reports = sweep_windows(&at, &channels, 0.0, t_end, delta, mu)?;

    let mut w = create(&common.out, &format!("{}_observability.csv", sc.label))?;
    writeln!(w, "{}", loaded.header()).context("writing report")?;
    writeln!(w, "t0,t1,min_eig,mu,verdict").context("writing report")?;
    let mut counts = [0usize; 3];
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.t0,
            r.t1,
            r.min_eig,
            r.mu_threshold,
            r.verdict.as_str()
        )
        .context("writing report")?;
        counts[verdict_index(r.verdict)] += 1;
    }
    finish(w)?;

    let worst = reports
        .iter()
        .min_by(|a, b| a.min_eig.total_cmp(&b.min_eig))
        .expect("at least one window");
    println!(
        "{}: {} windows of {} s, μ = {:e}: {} observable, {} marginal, {} unobservable",
        sc.label,
        reports.len(),
        delta,
        mu,
        counts[0],
        counts[1],
        counts[2]
    );
    println!(
        "  smallest eigenvalue {:.4e} in [{:.3}, {:.3}] s ({})",
        worst.min_eig,
        worst.t0,
        worst.t1,
        worst.verdict.as_str()
    );
    let vector_only: Vec<_> = channels
        .iter()
        .filter(|c| matches!(c.kind, ChannelKind::VectorAxis { .. }))
        .cloned()
        .collect();
    if vector_only.len() == channels.len() {
        if let Ok(triads) = complete_triads(&vector_only) {
            let providers: Vec<_> = triads.into_iter().map(|(_, p)| p).collect();
            let pe = pe_condition_lemma2(
                &providers,
                0.0,
                delta,
                scalar_attitude::observability::default_steps(delta),
                mu,
            )?;
            println!(
                "  inertial-vector PE matrix on the first window: min eigenvalue {:.4e} ({})",
                pe.min_eig,
                pe.verdict.as_str()
            );
        }
    }
    if counts[2] > 0 {
        return Err(Failure {
            code: 4,
            error: anyhow!(
                "{} of {} windows are unobservable",
                counts[2],
                reports.len()
            ),
        });
    }
    Ok(())
}

fn verdict_index(v: Verdict) -> usize {
    match v {
        Verdict::Observable => 0,
        Verdict::Marginal => 1,
        Verdict::Unobservable => 2,
    }
}

#[allow(clippy::too_many_arguments)]
fn montecarlo(
    configs: &[PathBuf],
    out: &Path,
    seed: Option<u64>,
    jobs: usize,
    runs: Option<usize>,
    duration: Option<f64>,
    traces: Option<usize>,
    flags: &FilterFlags,
) -> CliResult<()> {
    if traces == Some(0) {
        return Err(Failure::config(anyhow!("--traces must be at least 1")));
    }
    let mut loaded = Vec::with_capacity(configs.len());
    for path in configs {
        let mut l = load(path, seed)?;
        apply_filter_flags(&mut l.scenario, flags)?;
        if let Some(n) = runs {
            l.scenario.montecarlo.n_runs = n;
        }
        if let Some(d) = duration {
            l.scenario.montecarlo_duration = d;
        }
        l.scenario.montecarlo.jobs = jobs;
        l.scenario
            .montecarlo
            .validate()
            .map_err(|e| Failure::config(anyhow!("{}: {e}", path.display())))?;
        loaded.push(l);
    }
    let mut labels = std::collections::HashSet::new();
    for l in &loaded {
        if !labels.insert(l.scenario.label.clone()) {
            return Err(Failure::config(anyhow!(
                "duplicate scenario label `{}`",
                l.scenario.label
            )));
        }
    }

    let mut results: Vec<(String, MonteCarloResult)> = Vec::new();
    for l in &loaded {
        let sc = &l.scenario;
        let profile = sc.montecarlo_profile();
        let mc = run_monte_carlo(&sc.montecarlo, &sc.suite, &profile, &sc.filter)?;
        write_montecarlo(out, l, &mc, traces)?;
        results.push((sc.label.clone(), mc));
    }

    println!(
        "{:<14} {:>5} {:>9} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "case",
        "runs",
        "converged",
        "diverged",
        "init mean",
        "final mean",
        "final max",
        "late band"
    );
    for (label, mc) in &results {
        let s = &mc.summary;
        println!(
            "{:<14} {:>5} {:>9} {:>8} {:>9.2}° {:>9.3}° {:>9.3}° {:>9.3}°",
            label,
            s.n_runs,
            s.converged,
            s.diverged.len(),
            s.mean_initial_error.to_degrees(),
            s.mean_final_error.to_degrees(),
            s.max_final_error.to_degrees(),
            s.late_band_width.to_degrees()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_montecarlo(
    out: &Path,
    l: &Loaded,
    mc: &MonteCarloResult,
    traces: Option<usize>,
) -> CliResult<()> {
    let sc = &l.scenario;
    let header = l.header();
    let mut w = create(out, &format!("{}_aggregate.csv", sc.label))?;
    io::write_aggregate(&mut w, Some(&header), &mc.aggregate)?;
    finish(w)?;
    let mut w = create(out, &format!("{}_runs.csv", sc.label))?;
    io::write_runs(&mut w, Some(&header), &mc.runs)?;
    finish(w)?;

    let s = &mc.summary;
    let mut w = create(out, &format!("{}_summary.txt", sc.label))?;
    let text = format!(
        "{header}\n\
         label = {}\n\
         mode = {}\n\
         reset = {}\n\
         runs = {}\n\
         duration_s = {}\n\
         converged = {}\n\
         diverged = {:?}\n\
         mean_initial_error_deg = {}\n\
         mean_final_error_deg = {}\n\
         max_final_error_deg = {}\n\
         median_convergence_time_s = {}\n\
         late_band_width_deg = {}\n",
        sc.label,
        sc.filter.mode.as_str(),
        sc.filter.reset_enabled,
        s.n_runs,
        sc.montecarlo_duration,
        s.converged,
        s.diverged,
        s.mean_initial_error.to_degrees(),
        s.mean_final_error.to_degrees(),
        s.max_final_error.to_degrees(),
        s.median_convergence_time
            .map(|t| t.to_string())
            .unwrap_or_else(|| "none".into()),
        s.late_band_width.to_degrees(),
    );
    w.write_all(text.as_bytes()).context("writing summary")?;
    finish(w)?;

    if let Some(step) = traces {
        let dir = out.join(format!("{}_traces", sc.label));
        for r in &mc.runs {
            let times: Vec<f64> = mc.aggregate.times.iter().step_by(step).copied().collect();
            let errors: Vec<f64> = r.errors.iter().step_by(step).copied().collect();
            let mut w = create(&dir, &format!("run_{:04}.csv", r.trial))?;
            io::write_error_trace(&mut w, Some(&header), &times, &errors)?;
            finish(w)?;
        }
    }
    Ok(())
}

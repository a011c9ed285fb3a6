//! `svba`: simulate datasets, refine initialization windows, evaluate and
//! benchmark trajectories, and self-check Jacobians.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use svba_core::benchmark::{run_benchmark, BenchmarkOptions};
use svba_core::dataio::{load_bundle, load_states, save_bundle, save_results, save_tum, DatasetBundle};
use svba_core::evaluation::{align_posyaw, evaluate};
use svba_core::factors::{Pairing, RobustLoss, DEFAULT_HUBER_DELTA};
use svba_core::jacobian_check::{run_all, Fault};
use svba_core::simulation::{perturb_states, simulate, PerturbationSpec, SimulationConfig, TrajectoryFamily};
use svba_core::solver::{Mode, ProblemConfig, Termination};
use svba_core::state::KeyframeState;
use svba_core::window::{extract_window, refine_window, DEFAULT_WINDOW_SIZE};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(name = "svba", version, about = "Structureless visual-inertial bundle adjustment for VIO initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset bundle.
    Simulate(SimulateArgs),
    /// Refine all keyframes of a bundle as one window.
    Refine(RefineArgs),
    /// Compare an estimated state file against ground truth.
    Eval(EvalArgs),
    /// Refine and score every sliding-window position of a bundle.
    Bench(BenchArgs),
    /// Check analytic Jacobians against finite differences.
    Jactest(JactestArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Trajectory family: sinusoid, circle, figure-eight or static.
    #[arg(long, default_value = "sinusoid")]
    traj: String,
    #[arg(long, default_value_t = 10)]
    keyframes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    imu_rate: f64,
    #[arg(long, default_value_t = 2.0)]
    keyframe_rate: f64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pixel_sigma: f64,
    /// Exact IMU samples.
    #[arg(long)]
    no_imu_noise: bool,
    /// Exact IMU samples and pixels.
    #[arg(long)]
    noiseless: bool,
    /// Do not write an initial guess.
    #[arg(long)]
    no_initial: bool,
    #[command(flatten)]
    perturbation: PerturbationArgs,
}

#[derive(Args, Clone, Copy)]
struct PerturbationArgs {
    /// Initial-guess position sigma, m.
    #[arg(long, default_value_t = 0.05)]
    perturb_position: f64,
    /// Initial-guess orientation sigma, degrees.
    #[arg(long, default_value_t = 2.0)]
    perturb_orientation_deg: f64,
    /// Initial-guess velocity sigma, m/s.
    #[arg(long, default_value_t = 0.1)]
    perturb_velocity: f64,
    #[arg(long, default_value_t = 0.01)]
    perturb_accel_bias: f64,
    #[arg(long, default_value_t = 0.001)]
    perturb_gyro_bias: f64,
}

impl PerturbationArgs {
    fn spec(&self, seed: u64) -> PerturbationSpec {
        PerturbationSpec {
            position_sigma: self.perturb_position,
            orientation_sigma: self.perturb_orientation_deg.to_radians(),
            velocity_sigma: self.perturb_velocity,
            accel_bias_sigma: self.perturb_accel_bias,
            gyro_bias_sigma: self.perturb_gyro_bias,
            seed,
        }
    }
}

/// Solver options shared by `refine` and `bench`. Unset flags fall back to
/// the `--config` file and then to built-in defaults.
#[derive(Args)]
struct SolveArgs {
    /// structureless or structure-based.
    #[arg(long)]
    mode: Option<String>,
    /// all-pairs or consecutive.
    #[arg(long)]
    pairing: Option<String>,
    /// Epipolar residual sigma (default 1.5 / mean focal length).
    #[arg(long)]
    epipolar_sigma: Option<f64>,
    /// Reprojection sigma, px.
    #[arg(long)]
    pixel_sigma: Option<f64>,
    /// Huber threshold; 0 disables the robust loss.
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Keep only this many tracks per window, spread over the image.
    #[arg(long)]
    max_tracks: Option<usize>,
    /// Seed for `--init-from-groundtruth-perturbed`.
    #[arg(long)]
    seed: Option<u64>,
    /// key = value file with defaults for the options above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Build the initial guess by perturbing the bundle's ground truth.
    #[arg(long)]
    init_from_groundtruth_perturbed: bool,
    #[command(flatten)]
    perturbation: PerturbationArgs,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated states (states.csv layout).
    #[arg(long)]
    estimate: PathBuf,
    /// Ground-truth states (same layout).
    #[arg(long)]
    truth: PathBuf,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the aligned estimate as a TUM trajectory.
    #[arg(long)]
    aligned: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    window_size: Option<usize>,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct JactestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    /// Deliberately corrupt a Jacobian to confirm the check catches it.
    #[arg(long, hide = true)]
    inject_dcdt_sign_error: bool,
}

/// Options resolved from flags, the config file and defaults.
#[derive(Debug, Clone, Copy)]
struct RunConfig {
    mode: Mode,
    problem: ProblemConfig,
    window_size: usize,
    max_tracks: Option<usize>,
    seed: u64,
}

const CONFIG_KEYS: [&str; 9] = [
    "mode",
    "pairing",
    "epipolar_sigma",
    "pixel_sigma",
    "huber_delta",
    "max_iterations",
    "max_tracks",
    "window_size",
    "seed",
];

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), n + 1);
        };
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key '{key}'", path.display(), n + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn pick<T>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    file.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow::anyhow!("config key {key} = '{v}': {e}")))
        .transpose()
}

impl SolveArgs {
    fn resolve(&self, window_size: Option<usize>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut problem = ProblemConfig::default();
        let mode = pick(self.mode.clone(), &file, "mode")?
            .map(|m| Mode::from_str(&m))
            .transpose()?
            .unwrap_or_default();
        if let Some(p) = pick(self.pairing.clone(), &file, "pairing")? {
            problem.pairing = Pairing::from_str(&p)?;
        }
        problem.epipolar_sigma = pick(self.epipolar_sigma, &file, "epipolar_sigma")?;
        if let Some(s) = pick(self.pixel_sigma, &file, "pixel_sigma")? {
            problem.pixel_sigma = s;
        }
        let delta = pick(self.huber_delta, &file, "huber_delta")?.unwrap_or(DEFAULT_HUBER_DELTA);
        problem.loss = if delta == 0.0 {
            RobustLoss::None
        } else {
            RobustLoss::Huber { delta }
        };
        if let Some(n) = pick(self.max_iterations, &file, "max_iterations")? {
            problem.settings.max_iterations = n;
        }
        let window_size = pick(window_size, &file, "window_size")?.unwrap_or(DEFAULT_WINDOW_SIZE);
        if window_size < 3 {
            bail!("window size must be at least 3, got {window_size}");
        }
        Ok(RunConfig {
            mode,
            problem,
            window_size,
            max_tracks: pick(self.max_tracks, &file, "max_tracks")?,
            seed: pick(self.seed, &file, "seed")?.unwrap_or(0),
        })
    }

    /// The initial guess: perturbed ground truth on request, otherwise the
    /// bundle's own `initial.csv`.
    fn initial_states(&self, bundle: &DatasetBundle, seed: u64) -> Result<Vec<KeyframeState>> {
        if self.init_from_groundtruth_perturbed {
            let Some(truth) = &bundle.groundtruth else {
                bail!("--init-from-groundtruth-perturbed needs groundtruth.csv in the bundle");
            };
            return Ok(perturb_states(truth, &self.perturbation.spec(seed))?);
        }
        match &bundle.initial {
            Some(init) => Ok(init.clone()),
            None => bail!("bundle has no initial.csv; pass --init-from-groundtruth-perturbed to synthesize one"),
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let family = TrajectoryFamily::from_str(&args.traj)?;
    let mut cfg = SimulationConfig {
        seed: args.seed,
        ..SimulationConfig::default()
    };
    cfg.trajectory.family = family;
    cfg.trajectory.imu_rate_hz = args.imu_rate;
    cfg.trajectory.keyframe_rate_hz = args.keyframe_rate;
    cfg.trajectory = cfg.trajectory.with_keyframes(args.keyframes);
    cfg.pixel_sigma = args.pixel_sigma;
    cfg.imu_noise = !args.no_imu_noise;
    if args.noiseless {
        cfg = cfg.noiseless();
    }
    cfg.perturbation = (!args.no_initial).then(|| args.perturbation.spec(args.seed));
    if args.keyframes < 3 {
        bail!("need at least 3 keyframes, got {}", args.keyframes);
    }
    let data = simulate(&cfg)?;
    save_bundle(&data.bundle, &args.out)?;
    println!(
        "wrote {} keyframes, {} IMU samples, {} tracks to {}",
        data.bundle.keyframes.len(),
        data.bundle.imu.len(),
        data.bundle.tracks.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_refine(args: &RefineArgs) -> Result<u8> {
    let run = args.solve.resolve(None)?;
    let bundle = load_bundle(&args.input)?;
    let initial = args.solve.initial_states(&bundle, run.seed)?;
    let mut window = extract_window(&bundle, &initial, 0, bundle.keyframes.len())?;
    if let Some(n) = run.max_tracks {
        window.limit_tracks(n);
    }
    let solution = refine_window(&window, &bundle.calibration, &run.problem, run.mode)?;
    save_results(&solution.states, &solution.report, &args.out)?;
    let r = &solution.report;
    println!("final cost: {:e}", r.final_cost);
    println!("iterations: {}", r.iterations);
    println!("solve time: {:.3} ms", r.solve_time_ms);
    println!("termination: {:?}", r.termination);
    if !r.dropped_tracks.is_empty() {
        println!("dropped tracks: {}", r.dropped_tracks.len());
    }
    if let Some(truth) = &bundle.groundtruth {
        let e = evaluate(&solution.states, truth)?;
        println!(
            "ATE: {:.6} m, {:.6} deg; velocity RMSE {:.6} m/s",
            e.ate_position, e.ate_rotation, e.velocity_rmse
        );
    }
    Ok(if r.termination == Termination::NumericalFailure {
        EXIT_NUMERICAL
    } else {
        0
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let estimate = load_states(&args.estimate)?;
    let truth = load_states(&args.truth)?;
    let e = evaluate(&estimate, &truth)?;
    let csv = format!(
        "ate_pos_m,ate_rot_deg,vel_rmse_mps\n{},{},{}\n",
        e.ate_position, e.ate_rotation, e.velocity_rmse
    );
    write_or_print(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.aligned {
        let align = align_posyaw(&estimate, &truth)?;
        let aligned: Vec<KeyframeState> = estimate.iter().map(|s| align.apply(s)).collect();
        save_tum(&aligned, path)?;
    }
    Ok(0)
}

fn cmd_bench(args: &BenchArgs) -> Result<u8> {
    let run = args.solve.resolve(args.window_size)?;
    let bundle = load_bundle(&args.input)?;
    let Some(truth) = bundle.groundtruth.clone() else {
        bail!("bench needs groundtruth.csv in the bundle");
    };
    let initial = args.solve.initial_states(&bundle, run.seed)?;
    let options = BenchmarkOptions {
        mode: run.mode,
        window_size: run.window_size,
        max_tracks: run.max_tracks,
    };
    let table = run_benchmark(&bundle, &initial, &truth, &run.problem, &options)?;
    write_or_print(args.out.as_deref(), &table.to_csv())?;
    let failures = table
        .rows
        .iter()
        .filter(|r| r.termination == Termination::NumericalFailure)
        .count();
    if failures > 0 {
        eprintln!("{failures} window(s) ended in numerical failure");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

fn cmd_jactest(args: &JactestArgs) -> Result<u8> {
    let fault = if args.inject_dcdt_sign_error {
        Fault::DcDtSign
    } else {
        Fault::None
    };
    let suites = run_all(args.trials, args.seed, fault)?;
    let mut ok = true;
    for s in &suites {
        let tag = if s.passed() { "PASS" } else { "FAIL" };
        println!(
            "{tag} {}: {} instances, max relative error {:.3e} (tolerance {:.0e}), {} failures",
            s.name, s.instances, s.max_relative_error, s.tolerance, s.failures
        );
        ok &= s.passed();
    }
    Ok(if ok { 0 } else { EXIT_VALIDATION })
}

fn main() -> ExitCode {
    // Usage errors share the validation exit code; 2 is reserved for numerical failure.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Jactest(a) => cmd_jactest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}

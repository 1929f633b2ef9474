//! `reflidar`: simulate lidar data, detect reflector markers, run odometry in
//! plain, layer or tracking mode, and evaluate the results.
//!
//! Exit codes: 0 on success, 1 when a command fails at run time, 2 on usage
//! errors (bad flags, unknown sensor or world).

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reflidar::eval::{parse_sweep, DEFAULT_FAIL_THRESHOLD};
use reflidar::experiment::{DEFAULT_SENSOR, DEFAULT_SPEED};
use reflidar::{Eligibility, LidarSpec, Mode};

use commands::*;

/// Error reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "reflidar",
    version,
    about = "Reflector-marker aided 2D lidar odometry toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scan log and its ground truth along a route.
    Simulate(SimulateArgs),
    /// Run a marker detector over a scan log.
    Detect(DetectArgs),
    /// Run lidar odometry over a scan log.
    Odometry(OdometryArgs),
    /// Align an estimated trajectory to a reference and report the ATE.
    Evaluate(EvaluateArgs),
    /// Precision/recall tables of the detectors over an intensity-threshold sweep.
    Pr(PrArgs),
    /// Simulate, run every mode and evaluate over the built-in worlds.
    Reproduce(ReproduceArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
    /// List built-in worlds and sensor presets.
    List,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in world name or world TOML file.
    #[arg(long)]
    world: String,
    /// Waypoint file (`x y theta` per line); defaults to the world's built-in route.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value = "lms151", value_parser = LidarSpec::PRESET_NAMES)]
    sensor: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Robot speed in m/s.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Scan log (JSON lines).
    scans: PathBuf,
    #[arg(long, value_enum, default_value_t = DetectorChoice::Proposed)]
    detector: DetectorChoice,
    /// Intensity threshold; defaults to each scan's sensor value.
    #[arg(long)]
    threshold: Option<f64>,
    /// Detector parameters (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Layer,
    Tracking,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::Layer => Mode::Layer,
            ModeArg::Tracking => Mode::Tracking,
        }
    }
}

#[derive(Args)]
struct OdometryArgs {
    /// Scan log (JSON lines).
    scans: PathBuf,
    /// Overrides the mode in the configuration file.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Odometry configuration (TOML); missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated trajectory.
    estimate: PathBuf,
    /// Reference trajectory.
    reference: PathBuf,
    /// Maximum position error in meters for a run to count as a success.
    #[arg(long, default_value_t = DEFAULT_FAIL_THRESHOLD)]
    threshold: f64,
    /// Also write the summary and per-pose errors here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrDetector {
    Proposed,
    Threshold,
    Both,
}

#[derive(Args)]
struct PrArgs {
    /// Scan log (JSON lines).
    scans: PathBuf,
    /// Sensor pose of every scan, e.g. the simulator's ground truth.
    #[arg(long)]
    trajectory: PathBuf,
    /// World whose markers serve as labels (built-in name or TOML file).
    #[arg(long)]
    world: String,
    #[arg(long, value_enum, default_value_t = PrDetector::Both)]
    detector: PrDetector,
    /// Intensity thresholds as `start:end:count`.
    #[arg(long, default_value = "500:10000:20")]
    sweep: String,
    /// Count every visible marker for recall, not only those within 6 m and 60 degrees.
    #[arg(long)]
    all_labels: bool,
    /// Detector parameters (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Built-in world; repeat for several. Defaults to corridor, corridor_marked and room.
    #[arg(long)]
    world: Vec<String>,
    /// Mode to run; repeat for several. Defaults to all three.
    #[arg(long, value_enum)]
    mode: Vec<ModeArg>,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds per world.
    #[arg(long, default_value_t = 10)]
    runs: u64,
    #[arg(long, default_value = DEFAULT_SENSOR, value_parser = LidarSpec::PRESET_NAMES)]
    sensor: String,
    #[arg(long, default_value_t = DEFAULT_SPEED)]
    speed: f64,
    /// Maximum position error in meters for a run to count as a success.
    #[arg(long, default_value_t = DEFAULT_FAIL_THRESHOLD)]
    threshold: f64,
    /// Odometry configuration shared by all runs (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest written by an earlier run.
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let params = SimulateParams::resolve(
                &a.world,
                a.trajectory.as_deref(),
                &a.sensor,
                a.seed,
                a.speed,
            )?;
            let mut inputs: Vec<(&str, &Path)> = Vec::new();
            if let Some(t) = &a.trajectory {
                inputs.push(("trajectory", t));
            }
            let world_path = Path::new(&a.world);
            if world_path.exists() && !reflidar::sim::WORLD_NAMES.contains(&a.world.as_str()) {
                inputs.push(("world", world_path));
            }
            simulate(&params, &a.out, &inputs)
        }
        Command::Detect(a) => {
            let params = DetectParams {
                detector: a.detector,
                threshold: a.threshold,
                params: load_detector_params(a.config.as_deref())?,
            };
            detect(&params, &a.scans, &a.out)
        }
        Command::Odometry(a) => {
            let mut cfg = load_odometry_config(a.config.as_deref())?;
            if let Some(m) = a.mode {
                cfg.mode = m.into();
            }
            cfg.validate()?;
            odometry(&cfg, &a.scans, &a.out)
        }
        Command::Evaluate(a) => evaluate(
            &EvaluateParams {
                threshold: a.threshold,
            },
            &a.estimate,
            &a.reference,
            a.out.as_deref(),
        ),
        Command::Pr(a) => {
            let sweep = parse_sweep(&a.sweep).map_err(|e| UsageError(e.to_string()))?;
            let detectors = match a.detector {
                PrDetector::Proposed => vec![DetectorChoice::Proposed],
                PrDetector::Threshold => vec![DetectorChoice::Threshold],
                PrDetector::Both => vec![DetectorChoice::Proposed, DetectorChoice::Threshold],
            };
            let e = Eligibility::default();
            let params = PrParams {
                world: load_world(&a.world)?.to_toml(),
                detectors,
                sweep,
                eligibility: (!a.all_labels).then_some((e.max_range, e.max_incidence)),
                params: load_detector_params(a.config.as_deref())?,
            };
            pr(&params, &a.scans, &a.trajectory, &a.out)
        }
        Command::Reproduce(a) => {
            let worlds = if a.world.is_empty() {
                reflidar::experiment::ReproduceOptions::default().worlds
            } else {
                a.world
            };
            let modes = if a.mode.is_empty() {
                Mode::ALL.to_vec()
            } else {
                a.mode.into_iter().map(Mode::from).collect()
            };
            let config = load_odometry_config(a.config.as_deref())?;
            config.validate()?;
            let params = ReproduceParams {
                worlds,
                modes,
                seeds: (a.seed..a.seed + a.runs).collect(),
                sensor: a.sensor,
                speed: a.speed,
                fail_threshold: a.threshold,
                config,
            };
            run_reproduce(&params, &a.out)
        }
        Command::Rerun(a) => rerun(&a.manifest, a.out),
        Command::List => {
            println!("worlds: {}", reflidar::sim::WORLD_NAMES.join(", "));
            println!("sensors: {}", LidarSpec::PRESET_NAMES.join(", "));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

//! End-to-end runs on the built-in scenarios: simulate, run odometry in one
//! or more modes and score each trajectory against ground truth.
//!
//! [`reproduce`] returns file contents rather than writing them so that the
//! same bytes can be compared in tests and written by the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::eval::{
    compute_ate, format_ate_summary, format_error_table, EvalError, TimedPose, TrajectoryReport,
    DEFAULT_FAIL_THRESHOLD,
};
use crate::geometry::Pose2D;
use crate::odometry::{
    format_keyframe_log, format_trajectory, Keyframe, Mode, Odometry, OdometryConfig,
    OdometryError, OdometryOutput, TrajectoryEntry,
};
use crate::scan::{LaserScan, LidarSpec, ScanError};
use crate::sim::{builtin_route, builtin_world, simulate_trajectory, SimConfig, SimError, World};

/// Sensor used by the scenario runs unless told otherwise.
pub const DEFAULT_SENSOR: &str = "r2000";
/// Robot speed in m/s for the scenario runs.
pub const DEFAULT_SPEED: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Odometry(#[from] OdometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A simulated sequence with its ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub world: World,
    pub scans: Vec<LaserScan>,
    pub ground_truth: Vec<Pose2D>,
}

impl Dataset {
    pub fn reference(&self) -> Vec<TimedPose> {
        self.scans
            .iter()
            .zip(&self.ground_truth)
            .map(|(s, p)| (s.timestamp(), *p))
            .collect()
    }

    /// Ground truth in trajectory-file format (all rows flagged as keyframes).
    pub fn ground_truth_text(&self) -> String {
        let entries: Vec<TrajectoryEntry> = self
            .reference()
            .into_iter()
            .map(|(timestamp, pose)| TrajectoryEntry {
                timestamp,
                pose,
                is_keyframe: true,
                match_ok: true,
            })
            .collect();
        format_trajectory(&entries)
    }
}

/// Simulates the built-in route of a built-in world.
pub fn simulate_builtin(
    world: &str,
    sensor: &str,
    seed: u64,
    speed: f64,
) -> Result<Dataset, ExperimentError> {
    let spec = LidarSpec::preset(sensor)?;
    let world = builtin_world(world)?;
    let route = builtin_route(&world.name)?;
    let (scans, ground_truth) =
        simulate_trajectory(&world, &route, speed, &SimConfig::new(spec, seed))?;
    Ok(Dataset {
        world,
        scans,
        ground_truth,
    })
}

/// Result of running one odometry configuration over a dataset.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: Mode,
    pub outputs: Vec<OdometryOutput>,
    pub keyframes: Vec<Keyframe>,
    pub report: TrajectoryReport,
    /// Wall-clock time spent in odometry, excluding simulation and scoring.
    pub elapsed: Duration,
}

impl ModeRun {
    pub fn trajectory(&self) -> Vec<TrajectoryEntry> {
        self.outputs.iter().map(TrajectoryEntry::from).collect()
    }
}

pub fn run_mode(
    data: &Dataset,
    cfg: &OdometryConfig,
    fail_threshold: f64,
) -> Result<ModeRun, ExperimentError> {
    let mut odo = Odometry::new(cfg.clone())?;
    let start = Instant::now();
    let mut outputs = Vec::with_capacity(data.scans.len());
    for s in &data.scans {
        outputs.push(odo.process_scan(s)?);
    }
    let elapsed = start.elapsed();
    let estimate: Vec<TimedPose> = outputs.iter().map(|o| (o.timestamp, o.pose)).collect();
    let report = compute_ate(&estimate, &data.reference(), fail_threshold)?;
    Ok(ModeRun {
        mode: cfg.mode,
        outputs,
        keyframes: odo.keyframe_history().to_vec(),
        report,
        elapsed,
    })
}

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub worlds: Vec<String>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub sensor: String,
    pub speed: f64,
    pub fail_threshold: f64,
    /// Settings shared by every run; the mode field is overridden per run.
    pub config: OdometryConfig,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            worlds: ["corridor", "corridor_marked", "room"]
                .map(String::from)
                .to_vec(),
            modes: Mode::ALL.to_vec(),
            seeds: (0..10).collect(),
            sensor: DEFAULT_SENSOR.into(),
            speed: DEFAULT_SPEED,
            fail_threshold: DEFAULT_FAIL_THRESHOLD,
            config: OdometryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub world: String,
    pub mode: Mode,
    pub seed: u64,
    pub rmse: f64,
    pub max_error: f64,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub runs: Vec<RunSummary>,
    /// Relative path to file contents. Nothing here depends on wall-clock time.
    pub files: BTreeMap<String, String>,
}

/// Runs every world × seed × mode combination.
///
/// Files produced per world and seed: `ground_truth.txt`, and for each mode
/// `<mode>.txt` (trajectory), `<mode>_keyframes.txt`, `<mode>_ate.txt` and
/// `<mode>_errors.txt`. A top-level `summary.txt` holds the per-run table and
/// the success matrix.
pub fn reproduce(opts: &ReproduceOptions) -> Result<Reproduction, ExperimentError> {
    for w in &opts.worlds {
        builtin_world(w)?;
    }
    LidarSpec::preset(&opts.sensor)?;
    let mut runs = Vec::new();
    let mut files = BTreeMap::new();
    for world in &opts.worlds {
        for &seed in &opts.seeds {
            let data = simulate_builtin(world, &opts.sensor, seed, opts.speed)?;
            let dir = format!("{world}/seed{seed}");
            files.insert(format!("{dir}/ground_truth.txt"), data.ground_truth_text());
            for &mode in &opts.modes {
                let cfg = OdometryConfig {
                    mode,
                    ..opts.config.clone()
                };
                let run = run_mode(&data, &cfg, opts.fail_threshold)?;
                files.insert(
                    format!("{dir}/{mode}.txt"),
                    format_trajectory(&run.trajectory()),
                );
                files.insert(
                    format!("{dir}/{mode}_keyframes.txt"),
                    format_keyframe_log(&run.keyframes),
                );
                files.insert(
                    format!("{dir}/{mode}_ate.txt"),
                    format_ate_summary(&run.report),
                );
                files.insert(
                    format!("{dir}/{mode}_errors.txt"),
                    format_error_table(&run.report),
                );
                runs.push(RunSummary {
                    world: world.clone(),
                    mode,
                    seed,
                    rmse: run.report.rmse,
                    max_error: run.report.max_error,
                    success: run.report.success,
                });
            }
        }
    }
    let mut summary = format_run_table(&runs);
    summary.push('\n');
    summary.push_str(&format_success_matrix(&runs));
    files.insert("summary.txt".into(), summary);
    Ok(Reproduction { runs, files })
}

pub fn format_run_table(runs: &[RunSummary]) -> String {
    let mut s = String::from("world mode seed rmse max result\n");
    for r in runs {
        let _ = writeln!(
            s,
            "{} {} {} {:.6} {:.6} {}",
            r.world,
            r.mode,
            r.seed,
            r.rmse,
            r.max_error,
            if r.success { "SUCCESS" } else { "FAILED" }
        );
    }
    s
}

/// Rows are worlds and columns are modes, each cell `successes/runs`, in
/// first-appearance order.
pub fn format_success_matrix(runs: &[RunSummary]) -> String {
    let mut worlds: Vec<&str> = Vec::new();
    let mut modes: Vec<Mode> = Vec::new();
    for r in runs {
        if !worlds.contains(&r.world.as_str()) {
            worlds.push(&r.world);
        }
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let width = worlds
        .iter()
        .map(|w| w.len())
        .max()
        .unwrap_or(0)
        .max("world".len());
    let mut s = format!("{:width$}", "world");
    for m in &modes {
        let _ = write!(s, " {:>9}", m.name());
    }
    s.push('\n');
    for w in &worlds {
        let _ = write!(s, "{w:width$}");
        for m in &modes {
            let cell: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.world == *w && r.mode == *m)
                .collect();
            let ok = cell.iter().filter(|r| r.success).count();
            let _ = write!(s, " {:>9}", format!("{ok}/{}", cell.len()));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(world: &str, mode: Mode, success: bool) -> RunSummary {
        RunSummary {
            world: world.into(),
            mode,
            seed: 0,
            rmse: 0.0,
            max_error: 0.0,
            success,
        }
    }

    #[test]
    fn matrix_counts_successes() {
        let runs = vec![
            summary("room", Mode::Plain, true),
            summary("room", Mode::Plain, false),
            summary("room", Mode::Layer, true),
            summary("corridor", Mode::Plain, false),
        ];
        let m = format_success_matrix(&runs);
        let lines: Vec<&str> = m.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(
            lines[1].starts_with("room") && lines[1].contains("1/2") && lines[1].contains("1/1")
        );
        assert!(lines[2].contains("0/1") && lines[2].contains("0/0"));
    }

    #[test]
    fn unknown_world_rejected() {
        let opts = ReproduceOptions {
            worlds: vec!["atlantis".into()],
            ..Default::default()
        };
        assert!(matches!(
            reproduce(&opts),
            Err(ExperimentError::Sim(SimError::UnknownWorld { .. }))
        ));
    }
}

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use reflidar::eval::{
    associate, format_ate_summary, format_error_table, format_pr_table, TimedPose,
};
use reflidar::experiment::{format_success_matrix, reproduce, ReproduceOptions};
use reflidar::odometry::{format_keyframe_log, read_trajectory, write_trajectory, TrajectoryEntry};
use reflidar::scan::{read_scan_log, write_scan_log};
use reflidar::sim::{parse_waypoints, IntensityModel};
use reflidar::*;

use crate::manifest::RunManifest;
use crate::UsageError;

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes to standard output; a closed pipe surfaces as an error that `main`
/// treats as a quiet exit.
pub fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_scans(path: &Path) -> Result<Vec<LaserScan>> {
    let file = File::open(path).with_context(|| format!("opening scan log {}", path.display()))?;
    read_scan_log(BufReader::new(file))
        .with_context(|| format!("reading scan log {}", path.display()))
}

fn read_poses(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let file =
        File::open(path).with_context(|| format!("opening trajectory {}", path.display()))?;
    read_trajectory(BufReader::new(file))
        .with_context(|| format!("reading trajectory {}", path.display()))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn from_value<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).context("manifest parameters do not match the command")
}

/// Built-in world name, or a path to a world TOML file.
pub fn load_world(arg: &str) -> Result<World> {
    if sim::WORLD_NAMES.contains(&arg) {
        return Ok(builtin_world(arg)?);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(UsageError(format!(
            "unknown world `{arg}`: expected one of {} or a world TOML file",
            sim::WORLD_NAMES.join(", ")
        ))
        .into());
    }
    let text =
        fs::read_to_string(path).with_context(|| format!("reading world {}", path.display()))?;
    World::from_toml(&text).with_context(|| format!("parsing world {}", path.display()))
}

pub fn load_sensor(name: &str) -> Result<LidarSpec> {
    LidarSpec::preset(name).map_err(|_| {
        UsageError(format!(
            "unknown sensor `{name}`: available presets are {}",
            LidarSpec::PRESET_NAMES.join(", ")
        ))
        .into()
    })
}

pub fn load_odometry_config(path: Option<&Path>) -> Result<OdometryConfig> {
    match path {
        None => Ok(OdometryConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            OdometryConfig::from_toml(&text)
                .with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn load_detector_params(path: Option<&Path>) -> Result<DetectorParams> {
    let params: DetectorParams = match path {
        None => DetectorParams::default(),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing detector config {}", p.display()))?
        }
    };
    params.validate()?;
    Ok(params)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateParams {
    /// World definition in TOML.
    pub world: String,
    pub route: Vec<Pose2D>,
    pub sensor: String,
    pub seed: u64,
    pub speed: f64,
    pub range_noise_sigma: f64,
    pub intensity_noise_sigma: f64,
    pub divergence_halfangle: f64,
    pub stationary_duration: f64,
    pub intensity_model: IntensityModel,
}

impl SimulateParams {
    pub fn resolve(
        world: &str,
        trajectory: Option<&Path>,
        sensor: &str,
        seed: u64,
        speed: f64,
    ) -> Result<Self> {
        let spec = load_sensor(sensor)?;
        let w = load_world(world)?;
        let route = match trajectory {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading waypoints {}", p.display()))?;
                parse_waypoints(&text)
                    .with_context(|| format!("parsing waypoints {}", p.display()))?
            }
            None => builtin_route(&w.name).map_err(|_| {
                UsageError(format!(
                    "world `{}` has no built-in route; pass --trajectory",
                    w.name
                ))
            })?,
        };
        let cfg = SimConfig::new(spec, seed);
        Ok(Self {
            world: w.to_toml(),
            route,
            sensor: sensor.into(),
            seed,
            speed,
            range_noise_sigma: cfg.range_noise_sigma,
            intensity_noise_sigma: cfg.intensity_noise_sigma,
            divergence_halfangle: cfg.divergence_halfangle,
            stationary_duration: cfg.stationary_duration,
            intensity_model: cfg.intensity_model,
        })
    }
}

pub fn simulate(params: &SimulateParams, out: &Path, inputs: &[(&str, &Path)]) -> Result<()> {
    let world = World::from_toml(&params.world)?;
    let mut cfg = SimConfig::new(load_sensor(&params.sensor)?, params.seed);
    cfg.range_noise_sigma = params.range_noise_sigma;
    cfg.intensity_noise_sigma = params.intensity_noise_sigma;
    cfg.divergence_halfangle = params.divergence_halfangle;
    cfg.stationary_duration = params.stationary_duration;
    cfg.intensity_model = params.intensity_model.clone();
    let (scans, poses) = simulate_trajectory(&world, &params.route, params.speed, &cfg)?;

    create_dir(out)?;
    let mut w = BufWriter::new(File::create(out.join("scans.jsonl"))?);
    write_scan_log(&mut w, &scans)?;
    w.flush()?;
    let truth: Vec<TrajectoryEntry> = scans
        .iter()
        .zip(&poses)
        .map(|(s, p)| TrajectoryEntry {
            timestamp: s.timestamp(),
            pose: *p,
            is_keyframe: true,
            match_ok: true,
        })
        .collect();
    write_trajectory(
        BufWriter::new(File::create(out.join("ground_truth.txt"))?),
        &truth,
    )?;

    let mut m = RunManifest::new("simulate", to_value(params)?);
    m.seed = Some(params.seed);
    for (role, path) in inputs {
        m = m.input(role, path);
    }
    m.outputs = vec!["scans.jsonl".into(), "ground_truth.txt".into()];
    m.write(out)?;
    emit(&format!(
        "{} scans of `{}` with {} written to {}\n",
        scans.len(),
        world.name,
        params.sensor,
        out.display()
    ))?;
    Ok(())
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorChoice {
    Proposed,
    Threshold,
}

impl DetectorChoice {
    fn kind(self, params: &DetectorParams) -> DetectorKind {
        match self {
            DetectorChoice::Proposed => DetectorKind::Proposed(params.clone()),
            DetectorChoice::Threshold => DetectorKind::Threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectParams {
    pub detector: DetectorChoice,
    /// Intensity threshold; each scan's sensor value when absent.
    pub threshold: Option<f64>,
    pub params: DetectorParams,
}

pub fn format_detections(scans: &[LaserScan], detections: &[Vec<MarkerDetection>]) -> String {
    let mut s = String::from(
        "# timestamp x y normal_angle first_beam last_beam points incidence mean_intensity\n",
    );
    for (scan, dets) in scans.iter().zip(detections) {
        for d in dets {
            let normal = d
                .normal_angle()
                .map_or("nan".to_string(), |a| a.to_string());
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {}",
                scan.timestamp(),
                d.center.x,
                d.center.y,
                normal,
                d.start,
                d.end,
                d.point_count,
                d.incidence,
                d.mean_intensity
            );
        }
    }
    s
}

pub fn detect(params: &DetectParams, scans_path: &Path, out: &Path) -> Result<()> {
    let scans = read_scans(scans_path)?;
    let kind = params.detector.kind(&params.params);
    let detections: Vec<Vec<MarkerDetection>> = scans
        .iter()
        .map(|s| kind.run(s, params.threshold.unwrap_or(s.spec().min_intensity)))
        .collect();
    create_dir(out)?;
    write_file(
        out,
        "detections.txt",
        &format_detections(&scans, &detections),
    )?;
    let mut m = RunManifest::new("detect", to_value(params)?).input("scans", scans_path);
    m.outputs = vec!["detections.txt".into()];
    m.write(out)?;
    let total: usize = detections.iter().map(Vec::len).sum();
    emit(&format!("{total} detections in {} scans\n", scans.len()))?;
    Ok(())
}

// ---------------------------------------------------------------- odometry

/// Per-scan tracker state: `timestamp id x y observations missed mature`.
fn format_track_rows(out: &mut String, timestamp: f64, tracks: &[Track]) {
    for t in tracks {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            timestamp, t.id, t.position.x, t.position.y, t.observations, t.missed, t.mature as u8
        );
    }
}

pub fn odometry(cfg: &OdometryConfig, scans_path: &Path, out: &Path) -> Result<()> {
    let scans = read_scans(scans_path)?;
    let mut odo = Odometry::new(cfg.clone())?;
    let mut entries = Vec::with_capacity(scans.len());
    let mut tracks = String::from("# timestamp id x y observations missed mature\n");
    for s in &scans {
        let o = odo.process_scan(s)?;
        format_track_rows(&mut tracks, o.timestamp, odo.tracker().tracks());
        entries.push(TrajectoryEntry::from(&o));
    }
    create_dir(out)?;
    write_trajectory(
        BufWriter::new(File::create(out.join("trajectory.txt"))?),
        &entries,
    )?;
    write_file(
        out,
        "keyframes.txt",
        &format_keyframe_log(odo.keyframe_history()),
    )?;
    write_file(out, "tracks.txt", &tracks)?;
    write_file(out, "config.toml", &cfg.to_toml())?;
    let mut m = RunManifest::new("odometry", to_value(cfg)?).input("scans", scans_path);
    m.mode = Some(cfg.mode.name().into());
    m.outputs = [
        "trajectory.txt",
        "keyframes.txt",
        "tracks.txt",
        "config.toml",
    ]
    .map(String::from)
    .to_vec();
    m.write(out)?;
    let failed = entries.iter().filter(|e| !e.match_ok).count();
    emit(&format!(
        "{} poses, {} keyframes, {failed} failed matches ({} mode)\n",
        entries.len(),
        odo.keyframe_history().len(),
        cfg.mode
    ))?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateParams {
    pub threshold: f64,
}

fn timed(entries: &[TrajectoryEntry]) -> Vec<TimedPose> {
    entries.iter().map(|e| (e.timestamp, e.pose)).collect()
}

pub fn evaluate(
    params: &EvaluateParams,
    estimate: &Path,
    reference: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let est = timed(&read_poses(estimate)?);
    let reference_poses = timed(&read_poses(reference)?);
    let pairs = associate(&est, &reference_poses).len();
    if pairs < est.len() {
        eprintln!(
            "warning: {} of {} estimated poses have no reference pose within half a reference period",
            est.len() - pairs,
            est.len()
        );
    }
    let report = compute_ate(&est, &reference_poses, params.threshold).with_context(|| {
        format!(
            "cannot align {} ({} poses) with {} ({} poses)",
            estimate.display(),
            est.len(),
            reference.display(),
            reference_poses.len()
        )
    })?;
    let summary = format_ate_summary(&report);
    emit(&summary)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(dir, "ate.txt", &summary)?;
        write_file(dir, "errors.txt", &format_error_table(&report))?;
        let mut m = RunManifest::new("evaluate", to_value(params)?)
            .input("estimate", estimate)
            .input("reference", reference);
        m.outputs = vec!["ate.txt".into(), "errors.txt".into()];
        m.write(dir)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- pr

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrParams {
    /// World definition in TOML; its markers are the labels.
    pub world: String,
    pub detectors: Vec<DetectorChoice>,
    pub sweep: Vec<f64>,
    /// `(max range, max incidence in radians)` restricting recall, if any.
    pub eligibility: Option<(f64, f64)>,
    pub params: DetectorParams,
}

pub fn pr(params: &PrParams, scans_path: &Path, poses_path: &Path, out: &Path) -> Result<()> {
    let scans = read_scans(scans_path)?;
    let poses: Vec<Pose2D> = read_poses(poses_path)?.iter().map(|e| e.pose).collect();
    if scans.len() != poses.len() {
        bail!(
            "{} has {} scans but {} has {} poses; pr needs one sensor pose per scan",
            scans_path.display(),
            scans.len(),
            poses_path.display(),
            poses.len()
        );
    }
    let world = World::from_toml(&params.world)?;
    let labels = labels_from_world(&world);
    let eligibility = params
        .eligibility
        .map(|(max_range, max_incidence)| Eligibility {
            max_range,
            max_incidence,
        });
    create_dir(out)?;
    let mut m = RunManifest::new("pr", to_value(params)?)
        .input("scans", scans_path)
        .input("trajectory", poses_path);
    for choice in &params.detectors {
        let kind = choice.kind(&params.params);
        let report = sweep_detector(
            &scans,
            &poses,
            &labels,
            &kind,
            &params.sweep,
            eligibility.as_ref(),
        );
        let table = format_pr_table(&report);
        let name = format!("pr_{}.csv", kind.name());
        write_file(out, &name, &table)?;
        m.outputs.push(name);
        emit(&format!("{}\n", kind.name()))?;
        emit(&table)?;
    }
    m.write(out)?;
    Ok(())
}

// ---------------------------------------------------------------- reproduce

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproduceParams {
    pub worlds: Vec<String>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub sensor: String,
    pub speed: f64,
    pub fail_threshold: f64,
    pub config: OdometryConfig,
}

pub fn run_reproduce(params: &ReproduceParams, out: &Path) -> Result<()> {
    load_sensor(&params.sensor)?;
    for w in &params.worlds {
        if !sim::WORLD_NAMES.contains(&w.as_str()) {
            return Err(UsageError(format!(
                "unknown world `{w}`: reproduce runs built-in worlds only ({})",
                sim::WORLD_NAMES.join(", ")
            ))
            .into());
        }
    }
    let opts = ReproduceOptions {
        worlds: params.worlds.clone(),
        modes: params.modes.clone(),
        seeds: params.seeds.clone(),
        sensor: params.sensor.clone(),
        speed: params.speed,
        fail_threshold: params.fail_threshold,
        config: params.config.clone(),
    };
    let result = reproduce(&opts)?;
    create_dir(out)?;
    for (name, text) in &result.files {
        write_file(out, name, text)?;
    }
    let mut m = RunManifest::new("reproduce", to_value(params)?);
    m.outputs = result.files.keys().cloned().collect();
    m.write(out)?;
    emit(&format_success_matrix(&result.runs))?;
    Ok(())
}

// ---------------------------------------------------------------- rerun

pub fn rerun(manifest_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let m = RunManifest::read(manifest_path)?;
    let out = match out {
        Some(o) => o,
        None => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let input = |role: &str| -> Result<PathBuf> { Ok(PathBuf::from(m.input_path(role)?)) };
    match m.command.as_str() {
        "simulate" => {
            let inputs: Vec<(String, PathBuf)> = m
                .inputs
                .iter()
                .map(|(k, v)| (k.clone(), PathBuf::from(v)))
                .collect();
            let refs: Vec<(&str, &Path)> = inputs
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_path()))
                .collect();
            simulate(&from_value(&m.params)?, &out, &refs)
        }
        "detect" => detect(&from_value(&m.params)?, &input("scans")?, &out),
        "odometry" => odometry(&from_value(&m.params)?, &input("scans")?, &out),
        "evaluate" => evaluate(
            &from_value(&m.params)?,
            &input("estimate")?,
            &input("reference")?,
            Some(&out),
        ),
        "pr" => pr(
            &from_value(&m.params)?,
            &input("scans")?,
            &input("trajectory")?,
            &out,
        ),
        "reproduce" => run_reproduce(&from_value(&m.params)?, &out),
        other => bail!("manifest names unknown command `{other}`"),
    }
}

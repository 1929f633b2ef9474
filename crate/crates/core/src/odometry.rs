//! Scan-to-local-map lidar odometry with a bounded keyframe buffer.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{detect, DetectorParams, MarkerDetection};
use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::layered::{split_points, LayeredGrids};
use crate::ndt::{match_scan, MatchOptions, MatchResult};
use crate::scan::{LaserScan, ScanPoint};
use crate::tracking::{
    match_tracked, resolve_reference, DuplicatePolicy, TrackCostParams, TrackObservation, TrackRef,
    Tracker, TrackerParams,
};

#[derive(Debug, Error)]
pub enum OdometryError {
    #[error("scan timestamps must increase strictly: {previous} then {current}")]
    OutOfOrder { previous: f64, current: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Plain,
    Layer,
    Tracking,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Plain, Mode::Layer, Mode::Tracking];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Layer => "layer",
            Mode::Tracking => "tracking",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected plain, layer or tracking)"))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeCriteria {
    /// Minimum score per point-cell association.
    pub min_score: f64,
    /// Minimum fraction of scan points associated with the local map.
    pub min_overlap: f64,
    pub max_translation: f64,
    pub max_rotation: f64,
}

impl Default for KeyframeCriteria {
    fn default() -> Self {
        Self {
            min_score: 0.3,
            min_overlap: 0.7,
            max_translation: 1.0,
            max_rotation: 30f64.to_radians(),
        }
    }
}

/// Outcome of checking one match result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOutcome {
    pub score_ok: bool,
    pub overlap_ok: bool,
    pub motion_ok: bool,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.score_ok && self.overlap_ok && self.motion_ok
    }
}

impl KeyframeCriteria {
    pub fn check(&self, result: &MatchResult, keyframe_pose: &Pose2D) -> CheckOutcome {
        let rel = keyframe_pose.between(&result.pose);
        CheckOutcome {
            score_ok: result.associations > 0 && result.normalized_score() >= self.min_score,
            overlap_ok: result.associated_ratio >= self.min_overlap,
            motion_ok: rel.translation_norm() <= self.max_translation
                && rel.theta.abs() <= self.max_rotation,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            return Err("min_overlap must lie in (0, 1]".into());
        }
        if !(self.min_score > 0.0 && self.max_translation > 0.0 && self.max_rotation > 0.0) {
            return Err("keyframe thresholds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryConfig {
    pub mode: Mode,
    pub cell_size: f64,
    /// Number of keyframes kept in the local map.
    pub keyframes: usize,
    /// Weight of the marker layer in layer mode.
    pub marker_weight: f64,
    /// Radius of the circle synthesized around marker points.
    pub synth_radius: f64,
    /// Scale applied to the inverse Hessian for the covariance hint.
    pub covariance_scale: f64,
    /// Covariance inflation when matching failed.
    pub failure_inflation: f64,
    /// Move assigned tracks to their matched positions after each scan.
    pub relocate_tracks: bool,
    pub duplicate_policy: DuplicatePolicy,
    pub criteria: KeyframeCriteria,
    pub matching: MatchOptions,
    pub detector: DetectorParams,
    pub tracker: TrackerParams,
    pub track_cost: TrackCostParams,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Plain,
            cell_size: 0.5,
            keyframes: 10,
            marker_weight: 10.0,
            synth_radius: 0.05,
            covariance_scale: 1.0,
            failure_inflation: 1e3,
            relocate_tracks: true,
            duplicate_policy: DuplicatePolicy::Oldest,
            criteria: KeyframeCriteria::default(),
            matching: MatchOptions::default(),
            detector: DetectorParams::default(),
            tracker: TrackerParams::default(),
            track_cost: TrackCostParams::default(),
        }
    }
}

impl OdometryConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdometryError> {
        let err = |m: &str| Err(OdometryError::Config(m.to_string()));
        if !(self.cell_size > 0.0) {
            return err("cell_size must be positive");
        }
        if self.keyframes == 0 {
            return err("keyframes must be at least 1");
        }
        if !(self.marker_weight >= 0.0 && self.synth_radius > 0.0) {
            return err("marker_weight must be >= 0 and synth_radius > 0");
        }
        let t = &self.tracker;
        if !(t.c_d > 0.0 && t.c_t > 0.0 && t.gate > 0.0 && t.n_min >= 1 && t.max_missed >= 1) {
            return err("tracker parameters out of range");
        }
        if !(self.track_cost.weight >= 0.0) {
            return err("track weight must be >= 0");
        }
        self.criteria.validate().map_err(OdometryError::Config)?;
        self.detector
            .validate()
            .map_err(|e| OdometryError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, OdometryError> {
        let cfg: Self = toml::from_str(text).map_err(|e| OdometryError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub scan: LaserScan,
    pub pose: Pose2D,
    pub detections: Vec<MarkerDetection>,
    /// Tracks seen in this scan, in the odometry frame. Immature ones are
    /// kept so they can serve as references once they mature.
    pub tracks_snapshot: Vec<TrackRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryOutput {
    pub timestamp: f64,
    pub pose: Pose2D,
    pub is_keyframe: bool,
    pub match_ok: bool,
    pub covariance_hint: Matrix3<f64>,
}

/// Bounded keyframe buffer and the grids built from it.
#[derive(Debug, Clone)]
pub struct LocalMap {
    capacity: usize,
    cell_size: f64,
    marker_weight: f64,
    synth_radius: f64,
    layered: bool,
    keyframes: VecDeque<Keyframe>,
    grids: LayeredGrids,
}

impl LocalMap {
    fn new(cfg: &OdometryConfig) -> Self {
        let layered = cfg.mode == Mode::Layer;
        Self {
            capacity: cfg.keyframes,
            cell_size: cfg.cell_size,
            marker_weight: cfg.marker_weight,
            synth_radius: cfg.synth_radius,
            layered,
            keyframes: VecDeque::new(),
            grids: LayeredGrids::build(
                &[],
                &[],
                cfg.cell_size,
                cfg.marker_weight,
                cfg.synth_radius,
            ),
        }
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> {
        self.keyframes.iter()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn latest(&self) -> Option<&Keyframe> {
        self.keyframes.back()
    }

    pub fn grids(&self) -> &LayeredGrids {
        &self.grids
    }

    /// Grids computed from scratch from the current buffer.
    pub fn rebuilt(&self) -> LayeredGrids {
        let mut regular = Vec::new();
        let mut marker = Vec::new();
        for kf in &self.keyframes {
            let pts = kf.scan.to_cartesian();
            let (r, m) = if self.layered {
                split_points(&pts, &kf.detections)
            } else {
                (pts.iter().map(|p| p.point).collect(), Vec::new())
            };
            regular.extend(r.iter().map(|p| kf.pose.transform_point(p)));
            marker.extend(m.iter().map(|p| kf.pose.transform_point(p)));
        }
        LayeredGrids::build(
            &regular,
            &marker,
            self.cell_size,
            self.marker_weight,
            self.synth_radius,
        )
    }

    fn push(&mut self, kf: Keyframe) {
        if self.keyframes.len() == self.capacity {
            self.keyframes.pop_front();
        }
        self.keyframes.push_back(kf);
        self.grids = self.rebuilt();
    }

    /// Reference tracks of the buffer with unique ids.
    pub fn reference_tracks(&self, policy: DuplicatePolicy) -> Vec<TrackRef> {
        resolve_reference(
            self.keyframes.iter().map(|k| k.tracks_snapshot.as_slice()),
            policy,
        )
    }
}

/// Per-scan data prepared before matching.
struct Prepared {
    points: Vec<ScanPoint>,
    detections: Vec<MarkerDetection>,
    /// Mature tracks in the sensor frame.
    current_tracks: Vec<TrackRef>,
    /// Every detection with its track id, mature or not, in the sensor frame.
    tracked: Vec<TrackRef>,
}

#[derive(Debug, Clone)]
struct Candidate {
    scan: LaserScan,
    pose: Pose2D,
    detections: Vec<MarkerDetection>,
    tracks: Vec<TrackRef>,
}

impl Candidate {
    fn into_keyframe(self) -> Keyframe {
        let pose = self.pose;
        Keyframe {
            scan: self.scan,
            pose,
            detections: self.detections,
            tracks_snapshot: self
                .tracks
                .iter()
                .map(|t| TrackRef {
                    id: t.id,
                    position: pose.transform_point(&t.position),
                    normal_angle: t.normal_angle.map(|a| normalize_angle(a + pose.theta)),
                })
                .collect(),
        }
    }
}

pub struct Odometry {
    cfg: OdometryConfig,
    map: LocalMap,
    tracker: Tracker,
    history: Vec<Keyframe>,
    /// Poses emitted for the last two scans, oldest first.
    recent: VecDeque<Pose2D>,
    last_timestamp: Option<f64>,
    last_pass: Option<Candidate>,
    known_track_ids: BTreeSet<u64>,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig) -> Result<Self, OdometryError> {
        cfg.validate()?;
        Ok(Self {
            map: LocalMap::new(&cfg),
            tracker: Tracker::new(cfg.tracker.clone()),
            cfg,
            history: Vec::new(),
            recent: VecDeque::with_capacity(2),
            last_timestamp: None,
            last_pass: None,
            known_track_ids: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.cfg
    }

    pub fn local_map(&self) -> &LocalMap {
        &self.map
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Every keyframe declared so far with its declaration pose.
    pub fn keyframe_history(&self) -> &[Keyframe] {
        &self.history
    }

    fn predict(&self) -> Pose2D {
        match (self.recent.front(), self.recent.back()) {
            (Some(a), Some(b)) if self.recent.len() == 2 => b.compose(&a.between(b)),
            (_, Some(b)) => *b,
            _ => Pose2D::identity(),
        }
    }

    fn prepare(&mut self, scan: &LaserScan, initial: &Pose2D) -> Prepared {
        let points = scan.to_cartesian();
        let detections = match self.cfg.mode {
            Mode::Plain => Vec::new(),
            Mode::Layer | Mode::Tracking => detect(scan, &self.cfg.detector),
        };
        let mut current_tracks = Vec::new();
        let mut tracked = Vec::new();
        if self.cfg.mode == Mode::Tracking {
            let obs: Vec<TrackObservation> = detections
                .iter()
                .map(|d| TrackObservation {
                    position: initial.transform_point(&d.center),
                    normal_angle: d.normal_angle().map(|a| normalize_angle(a + initial.theta)),
                })
                .collect();
            let ids = self.tracker.update(&obs);
            for (d, id) in detections.iter().zip(ids) {
                let t = TrackRef {
                    id,
                    position: d.center,
                    normal_angle: d.normal_angle(),
                };
                if self.tracker.track(id).is_some_and(|t| t.mature) {
                    current_tracks.push(t);
                }
                tracked.push(t);
            }
        }
        Prepared {
            points,
            detections,
            current_tracks,
            tracked,
        }
    }

    fn match_current(&self, prep: &Prepared, initial: Pose2D) -> MatchResult {
        let grids = &self.map.grids;
        let opts = &self.cfg.matching;
        match self.cfg.mode {
            Mode::Plain => {
                let pts: Vec<Point2> = prep.points.iter().map(|p| p.point).collect();
                match_scan(&grids.regular, &pts, initial, opts)
            }
            Mode::Layer => {
                let (regular, marker) = split_points(&prep.points, &prep.detections);
                crate::layered::match_layered(grids, &regular, &marker, initial, opts)
            }
            Mode::Tracking => {
                let pts: Vec<Point2> = prep.points.iter().map(|p| p.point).collect();
                let mut reference = self.map.reference_tracks(self.cfg.duplicate_policy);
                reference.retain(|r| self.tracker.track(r.id).is_some_and(|t| t.mature));
                match_tracked(
                    &grids.regular,
                    &pts,
                    &prep.current_tracks,
                    &reference,
                    &self.cfg.track_cost,
                    initial,
                    opts,
                )
            }
        }
    }

    fn add_keyframe(&mut self, kf: Keyframe) {
        self.known_track_ids
            .extend(kf.tracks_snapshot.iter().map(|t| t.id));
        self.history.push(kf.clone());
        self.map.push(kf);
    }

    fn finish(&mut self, timestamp: f64, pose: Pose2D) {
        if self.recent.len() == 2 {
            self.recent.pop_front();
        }
        self.recent.push_back(pose);
        self.last_timestamp = Some(timestamp);
    }

    fn relocate(&mut self, prep: &Prepared, pose: &Pose2D) {
        if !self.cfg.relocate_tracks || self.cfg.mode != Mode::Tracking {
            return;
        }
        for t in &prep.current_tracks {
            self.tracker.relocate(
                t.id,
                pose.transform_point(&t.position),
                t.normal_angle.map(|a| normalize_angle(a + pose.theta)),
            );
        }
    }

    /// Processes one scan and returns its pose estimate.
    pub fn process_scan(&mut self, scan: &LaserScan) -> Result<OdometryOutput, OdometryError> {
        let timestamp = scan.timestamp();
        if let Some(previous) = self.last_timestamp {
            if !(timestamp > previous) {
                return Err(OdometryError::OutOfOrder {
                    previous,
                    current: timestamp,
                });
            }
        }

        let initial = self.predict();
        let prep = self.prepare(scan, &initial);
        let candidate = |pose: Pose2D, prep: &Prepared| Candidate {
            scan: scan.clone(),
            pose,
            detections: prep.detections.clone(),
            tracks: prep.tracked.clone(),
        };

        if self.map.is_empty() {
            let pose = Pose2D::identity();
            self.add_keyframe(candidate(pose, &prep).into_keyframe());
            self.finish(timestamp, pose);
            return Ok(OdometryOutput {
                timestamp,
                pose,
                is_keyframe: true,
                match_ok: true,
                covariance_hint: Matrix3::identity() * 1e-6,
            });
        }

        let kf_pose = self.map.latest().expect("map is not empty").pose;
        let result = self.match_current(&prep, initial);
        let check = self.cfg.criteria.check(&result, &kf_pose);
        let fallback_covariance =
            result.covariance(self.cfg.covariance_scale) * self.cfg.failure_inflation;
        let new_track = prep
            .current_tracks
            .iter()
            .any(|t| !self.known_track_ids.contains(&t.id));

        let mut is_keyframe = false;
        let mut final_result = None;
        if check.passed() {
            if new_track {
                self.add_keyframe(candidate(result.pose, &prep).into_keyframe());
                self.last_pass = None;
                is_keyframe = true;
            } else {
                self.last_pass = Some(candidate(result.pose, &prep));
            }
            final_result = Some(result);
        } else if let Some(pass) = self.last_pass.take() {
            self.add_keyframe(pass.into_keyframe());
            let kf_pose = self.map.latest().expect("keyframe just added").pose;
            let rematch = self.match_current(&prep, initial);
            if self.cfg.criteria.check(&rematch, &kf_pose).passed() {
                self.last_pass = Some(candidate(rematch.pose, &prep));
                final_result = Some(rematch);
            }
        } else if check.score_ok {
            // Nothing fresher to promote: the current scan still matches
            // well, it only drifted out of the keyframe's reach.
            self.add_keyframe(candidate(result.pose, &prep).into_keyframe());
            is_keyframe = true;
            final_result = Some(result);
        }

        let output = match final_result {
            Some(r) => {
                self.relocate(&prep, &r.pose);
                OdometryOutput {
                    timestamp,
                    pose: r.pose,
                    is_keyframe,
                    match_ok: true,
                    covariance_hint: r.covariance(self.cfg.covariance_scale),
                }
            }
            None => OdometryOutput {
                timestamp,
                pose: initial,
                is_keyframe: false,
                match_ok: false,
                covariance_hint: fallback_covariance,
            },
        };
        self.finish(timestamp, output.pose);
        Ok(output)
    }
}

/// Runs a fresh odometry instance over `scans`.
pub fn run(
    scans: &[LaserScan],
    cfg: &OdometryConfig,
) -> Result<(Vec<OdometryOutput>, Vec<Keyframe>), OdometryError> {
    let mut odo = Odometry::new(cfg.clone())?;
    let mut out = Vec::with_capacity(scans.len());
    for s in scans {
        out.push(odo.process_scan(s)?);
    }
    Ok((out, odo.history))
}

/// One row of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub pose: Pose2D,
    pub is_keyframe: bool,
    pub match_ok: bool,
}

impl From<&OdometryOutput> for TrajectoryEntry {
    fn from(o: &OdometryOutput) -> Self {
        Self {
            timestamp: o.timestamp,
            pose: o.pose,
            is_keyframe: o.is_keyframe,
            match_ok: o.match_ok,
        }
    }
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            e.timestamp, e.pose.x, e.pose.y, e.pose.theta, e.is_keyframe as u8, e.match_ok as u8
        );
    }
    s
}

pub fn write_trajectory<W: Write>(
    mut out: W,
    entries: &[TrajectoryEntry],
) -> Result<(), OdometryError> {
    out.write_all(format_trajectory(entries).as_bytes())?;
    Ok(())
}

/// Parses a trajectory file; blank lines and `#` comments are skipped.
pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryEntry>, OdometryError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| OdometryError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 4 && fields.len() != 6 {
            return Err(err(format!(
                "expected 4 or 6 fields, found {}",
                fields.len()
            )));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|e| err(format!("field {}: {e}", k + 1)))
        };
        let flag = |k: usize| match fields.get(k) {
            None => Ok(true),
            Some(&"1") | Some(&"true") => Ok(true),
            Some(&"0") | Some(&"false") => Ok(false),
            Some(other) => Err(err(format!("field {}: bad flag `{other}`", k + 1))),
        };
        out.push(TrajectoryEntry {
            timestamp: num(0)?,
            pose: Pose2D {
                x: num(1)?,
                y: num(2)?,
                theta: num(3)?,
            },
            is_keyframe: flag(4)?,
            match_ok: flag(5)?,
        });
    }
    Ok(out)
}

/// Keyframe debug log: one line per keyframe, `timestamp x y theta detections tracks`.
pub fn format_keyframe_log(keyframes: &[Keyframe]) -> String {
    let mut s = String::new();
    for k in keyframes {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            k.scan.timestamp(),
            k.pose.x,
            k.pose.y,
            k.pose.theta,
            k.detections.len(),
            k.tracks_snapshot.len()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::LidarSpec;
    use std::sync::Arc;

    fn box_scan(t: f64) -> LaserScan {
        // Sensor at the center of an irregular room, sampled analytically.
        let spec = Arc::new(LidarSpec::lms151());
        let n = spec.beam_count();
        let start = spec.centered_start_angle();
        let walls = [
            (Point2::new(-3.0, -2.0), Point2::new(4.0, -2.0)),
            (Point2::new(4.0, -2.0), Point2::new(4.0, 1.0)),
            (Point2::new(4.0, 1.0), Point2::new(1.0, 3.0)),
            (Point2::new(1.0, 3.0), Point2::new(-3.0, 3.0)),
            (Point2::new(-3.0, 3.0), Point2::new(-3.0, -2.0)),
        ];
        let mut ranges = Vec::with_capacity(n);
        for b in 0..n {
            let a = start + b as f64 * spec.angular_resolution;
            let d = Point2::new(a.cos(), a.sin());
            let mut best = f64::NAN;
            for (p, q) in walls {
                let e = q - p;
                let den = d.x * e.y - d.y * e.x;
                if den.abs() < 1e-12 {
                    continue;
                }
                let r = (p.x * e.y - p.y * e.x) / den;
                let u = (p.x * d.y - p.y * d.x) / den;
                if r > 0.0 && (0.0..=1.0).contains(&u) && !(r >= best) {
                    best = r;
                }
            }
            ranges.push(best);
        }
        LaserScan::new(t, start, ranges, vec![100.0; n], spec).unwrap()
    }

    #[test]
    fn empty_stream() {
        let (out, kfs) = run(&[], &OdometryConfig::default()).unwrap();
        assert!(out.is_empty() && kfs.is_empty());
    }

    #[test]
    fn stationary_fixed_point() {
        let scans: Vec<_> = (0..20).map(|i| box_scan(i as f64 * 0.02)).collect();
        for mode in Mode::ALL {
            let (out, kfs) = run(&scans, &OdometryConfig::with_mode(mode)).unwrap();
            assert_eq!(out.len(), 20);
            assert!(out[0].is_keyframe && out[0].pose == Pose2D::identity());
            for o in &out[1..] {
                assert!(o.match_ok);
                assert!(!o.is_keyframe);
                assert!(o.pose.translation_norm() < 1e-3);
                assert!(o.pose.theta.abs() < 0.05f64.to_radians());
            }
            assert_eq!(kfs.len(), 1);
        }
    }

    #[test]
    fn rejects_out_of_order() {
        let mut odo = Odometry::new(OdometryConfig::default()).unwrap();
        odo.process_scan(&box_scan(1.0)).unwrap();
        assert!(matches!(
            odo.process_scan(&box_scan(1.0)),
            Err(OdometryError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn trajectory_round_trip() {
        let entries = vec![
            TrajectoryEntry {
                timestamp: 0.02,
                pose: Pose2D::new(1.0 / 3.0, -2.5, 0.1),
                is_keyframe: true,
                match_ok: false,
            },
            TrajectoryEntry {
                timestamp: 0.04,
                pose: Pose2D::new(1e-17, 7.0, -3.0),
                is_keyframe: false,
                match_ok: true,
            },
        ];
        let text = format_trajectory(&entries);
        let back = read_trajectory(text.as_bytes()).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn trajectory_parse_error_has_line() {
        let err = read_trajectory("0 0 0 0 1 1\n0.1 x 0 0 1 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, OdometryError::Parse { line: 2, .. }));
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = OdometryConfig::with_mode(Mode::Tracking);
        let back = OdometryConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial =
            OdometryConfig::from_toml("mode = \"layer\"\n[criteria]\nmin_overlap = 0.5\n").unwrap();
        assert_eq!(partial.mode, Mode::Layer);
        assert_eq!(partial.criteria.min_overlap, 0.5);
        assert_eq!(partial.keyframes, 10);
        assert!(OdometryConfig::from_toml("keyframes = 0\n").is_err());
    }
}

//! Deterministic 2D lidar simulation of line-segment worlds with
//! retroreflective markers.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::scan::{LaserScan, LidarSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("unknown world `{name}` (available: {available})")]
    UnknownWorld { name: String, available: String },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("world file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
    pub reflectivity: f64,
}

impl Segment {
    pub fn new(a: Point2, b: Point2, reflectivity: f64) -> Self {
        Self { a, b, reflectivity }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn direction(&self) -> Point2 {
        (self.b - self.a) / self.length()
    }

    /// Point at arc length `s` from `a`.
    pub fn at(&self, s: f64) -> Point2 {
        self.a + self.direction() * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    /// Index of the host segment.
    pub segment: usize,
    /// Distance of the marker center from the host segment's first endpoint.
    pub offset: f64,
    pub width: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub name: String,
    pub segments: Vec<Segment>,
    pub markers: Vec<Marker>,
}

impl World {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidWorld(m));
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length() > 0.0) {
                return bad(format!("segment {i} has zero length"));
            }
            if !(s.reflectivity >= 0.0) {
                return bad(format!("segment {i} has negative reflectivity"));
            }
        }
        for (i, m) in self.markers.iter().enumerate() {
            let Some(host) = self.segments.get(m.segment) else {
                return bad(format!(
                    "marker {i} refers to missing segment {}",
                    m.segment
                ));
            };
            if !(m.width > 0.0) {
                return bad(format!("marker {i} has non-positive width"));
            }
            if m.offset - 0.5 * m.width < 0.0 || m.offset + 0.5 * m.width > host.length() {
                return bad(format!("marker {i} does not fit on its host segment"));
            }
            if !(m.reflectivity > host.reflectivity) {
                return bad(format!("marker {i} is not brighter than its host segment"));
            }
        }
        Ok(())
    }

    /// Endpoints of a marker in the world frame.
    pub fn marker_endpoints(&self, index: usize) -> (Point2, Point2) {
        let m = &self.markers[index];
        let s = &self.segments[m.segment];
        (
            s.at(m.offset - 0.5 * m.width),
            s.at(m.offset + 0.5 * m.width),
        )
    }

    pub fn marker_center(&self, index: usize) -> Point2 {
        let m = &self.markers[index];
        self.segments[m.segment].at(m.offset)
    }

    /// Unit normal of a marker's host segment (sign arbitrary).
    pub fn marker_normal(&self, index: usize) -> Point2 {
        let d = self.segments[self.markers[index].segment].direction();
        Point2::new(-d.y, d.x)
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: WorldFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        file.into_world()
    }

    pub fn to_toml(&self) -> String {
        let file = WorldFile {
            name: self.name.clone(),
            segments: self
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| SegmentEntry {
                    name: Some(format!("s{i}")),
                    a: [s.a.x, s.a.y],
                    b: [s.b.x, s.b.y],
                    reflectivity: s.reflectivity,
                })
                .collect(),
            markers: self
                .markers
                .iter()
                .map(|m| MarkerEntry {
                    segment: SegmentRef::Name(format!("s{}", m.segment)),
                    offset: m.offset,
                    width: m.width,
                    reflectivity: m.reflectivity,
                })
                .collect(),
        };
        toml::to_string(&file).expect("world serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldFile {
    name: String,
    #[serde(default)]
    segments: Vec<SegmentEntry>,
    #[serde(default)]
    markers: Vec<MarkerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    a: [f64; 2],
    b: [f64; 2],
    #[serde(default = "default_wall_reflectivity")]
    reflectivity: f64,
}

fn default_wall_reflectivity() -> f64 {
    WALL_REFLECTIVITY
}

fn default_marker_width() -> f64 {
    MARKER_WIDTH
}

fn default_marker_reflectivity() -> f64 {
    MARKER_REFLECTIVITY
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkerEntry {
    segment: SegmentRef,
    offset: f64,
    #[serde(default = "default_marker_width")]
    width: f64,
    #[serde(default = "default_marker_reflectivity")]
    reflectivity: f64,
}

impl WorldFile {
    fn into_world(self) -> Result<World, SimError> {
        let names: Vec<Option<String>> = self.segments.iter().map(|s| s.name.clone()).collect();
        let segments = self
            .segments
            .into_iter()
            .map(|s| {
                Segment::new(
                    Point2::new(s.a[0], s.a[1]),
                    Point2::new(s.b[0], s.b[1]),
                    s.reflectivity,
                )
            })
            .collect();
        let mut markers = Vec::with_capacity(self.markers.len());
        for m in self.markers {
            let segment = match m.segment {
                SegmentRef::Index(i) => i,
                SegmentRef::Name(n) => names
                    .iter()
                    .position(|s| s.as_deref() == Some(n.as_str()))
                    .ok_or_else(|| SimError::InvalidWorld(format!("no segment named `{n}`")))?,
            };
            markers.push(Marker {
                segment,
                offset: m.offset,
                width: m.width,
                reflectivity: m.reflectivity,
            });
        }
        let world = World {
            name: self.name,
            segments,
            markers,
        };
        world.validate()?;
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub base_scale: f64,
    pub incidence_exponent: f64,
    pub range_falloff: f64,
}

impl IntensityModel {
    /// Intensity scale tuned per preset so walls stay below and markers
    /// above the preset's intensity threshold.
    pub fn for_spec(spec: &LidarSpec) -> Self {
        let base_scale = match spec.name.as_str() {
            "lms151" => 400.0,
            "r2000" => 200.0,
            "os32c" => 3200.0,
            _ => 0.4 * spec.min_intensity,
        };
        Self {
            base_scale,
            incidence_exponent: 0.5,
            range_falloff: 0.02,
        }
    }

    pub fn intensity(&self, reflectivity: f64, range: f64, cos_incidence: f64) -> f64 {
        reflectivity * self.base_scale * cos_incidence.max(0.0).powf(self.incidence_exponent)
            / (1.0 + self.range_falloff * range * range)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub spec: Arc<LidarSpec>,
    pub range_noise_sigma: f64,
    pub intensity_noise_sigma: f64,
    pub intensity_model: IntensityModel,
    pub divergence_halfangle: f64,
    pub seed: u64,
    /// Length of the scan sequence produced for a zero-length path, seconds.
    pub stationary_duration: f64,
}

impl SimConfig {
    pub fn new(spec: LidarSpec, seed: u64) -> Self {
        Self {
            intensity_model: IntensityModel::for_spec(&spec),
            divergence_halfangle: spec.angular_resolution,
            spec: Arc::new(spec),
            range_noise_sigma: 0.01,
            intensity_noise_sigma: 0.0,
            seed,
            stationary_duration: 1.0,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.range_noise_sigma = 0.0;
        self.intensity_noise_sigma = 0.0;
        self
    }
}

/// Nearest intersection of a ray with a segment: `(range, param along segment in [0, 1])`.
pub fn ray_segment(origin: &Point2, dir: &Point2, seg: &Segment) -> Option<(f64, f64)> {
    let e = seg.b - seg.a;
    let den = dir.x * e.y - dir.y * e.x;
    if den.abs() < 1e-15 {
        return None;
    }
    let w = seg.a - origin;
    let r = (w.x * e.y - w.y * e.x) / den;
    let u = (w.x * dir.y - w.y * dir.x) / den;
    (r > 0.0 && (0.0..=1.0).contains(&u)).then_some((r, u))
}

struct Hit {
    range: f64,
    segment: usize,
    /// Arc length of the hit along the segment.
    along: f64,
    cos_incidence: f64,
}

fn cast(world: &World, origin: &Point2, dir: &Point2) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, s) in world.segments.iter().enumerate() {
        if let Some((r, u)) = ray_segment(origin, dir, s) {
            if best.as_ref().is_none_or(|b| r < b.range) {
                let d = s.direction();
                best = Some(Hit {
                    range: r,
                    segment: i,
                    along: u * s.length(),
                    cos_incidence: (dir.x * d.y - dir.y * d.x).abs(),
                });
            }
        }
    }
    best
}

/// Reflectivity seen by a beam: the marker's inside it, a blend for beams
/// whose footprint only grazes a marker edge, the wall's otherwise.
fn beam_reflectivity(world: &World, hit: &Hit, footprint: f64) -> f64 {
    let wall = world.segments[hit.segment].reflectivity;
    let mut best = wall;
    for m in world.markers.iter().filter(|m| m.segment == hit.segment) {
        let lo = m.offset - 0.5 * m.width;
        let hi = m.offset + 0.5 * m.width;
        if (lo..=hi).contains(&hit.along) {
            return m.reflectivity;
        }
        let gap = (lo - hit.along).max(hit.along - hi);
        if gap < footprint {
            best = best.max(wall + 2.0 / 3.0 * (m.reflectivity - wall));
        }
    }
    best
}

/// Simulates one scan with noise stream 0 and timestamp 0.
pub fn simulate_scan(world: &World, sensor_pose: &Pose2D, cfg: &SimConfig) -> LaserScan {
    simulate_scan_at(world, sensor_pose, cfg, 0, 0.0)
}

/// Simulates the `index`-th scan of a sequence; `index` selects the noise stream.
pub fn simulate_scan_at(
    world: &World,
    sensor_pose: &Pose2D,
    cfg: &SimConfig,
    index: u64,
    timestamp: f64,
) -> LaserScan {
    let spec = &cfg.spec;
    let n = spec.beam_count();
    let start = spec.centered_start_angle();
    let origin = sensor_pose.translation();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let range_noise =
        Normal::new(0.0, cfg.range_noise_sigma).expect("sigma is finite and non-negative");
    let intensity_noise =
        Normal::new(0.0, cfg.intensity_noise_sigma).expect("sigma is finite and non-negative");
    let tan_half = cfg.divergence_halfangle.tan();

    let mut ranges = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    for b in 0..n {
        let a = sensor_pose.theta + start + b as f64 * spec.angular_resolution;
        let dir = Point2::new(a.cos(), a.sin());
        // Draw unconditionally so every beam consumes the same randomness.
        let dr = if cfg.range_noise_sigma > 0.0 {
            range_noise.sample(&mut rng)
        } else {
            0.0
        };
        let di = if cfg.intensity_noise_sigma > 0.0 {
            intensity_noise.sample(&mut rng)
        } else {
            0.0
        };
        match cast(world, &origin, &dir) {
            Some(hit) if hit.range <= spec.max_usable_range => {
                let footprint = hit.range * tan_half / hit.cos_incidence.max(1e-6);
                let refl = beam_reflectivity(world, &hit, footprint);
                let i = cfg
                    .intensity_model
                    .intensity(refl, hit.range, hit.cos_incidence);
                ranges.push((hit.range + dr).max(0.0));
                intensities.push((i + di).max(0.0));
            }
            _ => {
                ranges.push(f64::NAN);
                intensities.push(0.0);
            }
        }
    }
    LaserScan::new(timestamp, start, ranges, intensities, spec.clone())
        .expect("beam counts match the spec")
}

/// Length charged for turning in place, per radian.
pub const ROTATION_LENGTH_PER_RAD: f64 = 0.5;

/// Sensor poses along the waypoint polyline at the sensor frequency.
pub fn sample_path(
    waypoints: &[Pose2D],
    speed: f64,
    frequency: f64,
    stationary_duration: f64,
) -> Result<Vec<Pose2D>, SimError> {
    if waypoints.len() < 2 {
        return Err(SimError::InvalidTrajectory(
            "at least two waypoints are required".into(),
        ));
    }
    if !(speed > 0.0 && frequency > 0.0) {
        return Err(SimError::InvalidTrajectory(
            "speed and frequency must be positive".into(),
        ));
    }
    let lengths: Vec<f64> = waypoints
        .windows(2)
        .map(|w| {
            let t = (w[1].translation() - w[0].translation()).norm();
            if t > 0.0 {
                t
            } else {
                normalize_angle(w[1].theta - w[0].theta).abs() * ROTATION_LENGTH_PER_RAD
            }
        })
        .collect();
    let total: f64 = lengths.iter().sum();
    let step = speed / frequency;
    if total <= 0.0 {
        let count = ((stationary_duration * frequency).round() as usize).max(1);
        return Ok(vec![waypoints[0]; count]);
    }
    let count = ((total / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let mut poses = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..count {
        let s = k as f64 * step;
        while seg + 1 < lengths.len() && s >= seg_start + lengths[seg] {
            seg_start += lengths[seg];
            seg += 1;
        }
        let f = if lengths[seg] > 0.0 {
            ((s - seg_start) / lengths[seg]).min(1.0)
        } else {
            0.0
        };
        let (p, q) = (waypoints[seg], waypoints[seg + 1]);
        let pos = p.translation() + (q.translation() - p.translation()) * f;
        let theta = p.theta + normalize_angle(q.theta - p.theta) * f;
        poses.push(Pose2D::new(pos.x, pos.y, theta));
    }
    Ok(poses)
}

/// Simulates a full sequence: one scan and one ground-truth pose per tick.
pub fn simulate_trajectory(
    world: &World,
    waypoints: &[Pose2D],
    speed: f64,
    cfg: &SimConfig,
) -> Result<(Vec<LaserScan>, Vec<Pose2D>), SimError> {
    let poses = sample_path(
        waypoints,
        speed,
        cfg.spec.frequency,
        cfg.stationary_duration,
    )?;
    let scans = poses
        .iter()
        .enumerate()
        .map(|(k, p)| simulate_scan_at(world, p, cfg, k as u64, k as f64 / cfg.spec.frequency))
        .collect();
    Ok((scans, poses))
}

pub const WALL_REFLECTIVITY: f64 = 1.0;
pub const MARKER_REFLECTIVITY: f64 = 20.0;
pub const POST_REFLECTIVITY: f64 = 8.0;
pub const MARKER_WIDTH: f64 = 0.05;
pub const POST_DIAMETER: f64 = 0.06;

pub const CORRIDOR_LENGTH: f64 = 40.0;
pub const CORRIDOR_HALF_WIDTH: f64 = 1.5;
pub const CORRIDOR_MARKER_SPACING: f64 = 5.0;

fn wall(a: (f64, f64), b: (f64, f64)) -> Segment {
    Segment::new(
        Point2::new(a.0, a.1),
        Point2::new(b.0, b.1),
        WALL_REFLECTIVITY,
    )
}

fn polygon(points: &[(f64, f64)]) -> Vec<Segment> {
    (0..points.len())
        .map(|i| wall(points[i], points[(i + 1) % points.len()]))
        .collect()
}

fn marker(segment: usize, offset: f64) -> Marker {
    Marker {
        segment,
        offset,
        width: MARKER_WIDTH,
        reflectivity: MARKER_REFLECTIVITY,
    }
}

/// Round post approximated by a 12-gon.
fn post(center: (f64, f64)) -> Vec<Segment> {
    let r = 0.5 * POST_DIAMETER;
    (0..12)
        .map(|k| {
            let a0 = 2.0 * PI * k as f64 / 12.0;
            let a1 = 2.0 * PI * (k + 1) as f64 / 12.0;
            Segment::new(
                Point2::new(center.0 + r * a0.cos(), center.1 + r * a0.sin()),
                Point2::new(center.0 + r * a1.cos(), center.1 + r * a1.sin()),
                POST_REFLECTIVITY,
            )
        })
        .collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Segment> {
    polygon(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
}

/// Two parallel open-ended walls; nothing closes the ends.
pub fn corridor() -> World {
    World {
        name: "corridor".into(),
        segments: vec![
            wall(
                (0.0, -CORRIDOR_HALF_WIDTH),
                (CORRIDOR_LENGTH, -CORRIDOR_HALF_WIDTH),
            ),
            wall(
                (0.0, CORRIDOR_HALF_WIDTH),
                (CORRIDOR_LENGTH, CORRIDOR_HALF_WIDTH),
            ),
        ],
        markers: Vec::new(),
    }
}

/// `corridor` with a marker every 5 m, alternating between the walls.
pub fn corridor_marked() -> World {
    let mut w = corridor();
    w.name = "corridor_marked".into();
    let count = (CORRIDOR_LENGTH / CORRIDOR_MARKER_SPACING) as usize;
    w.markers = (0..count)
        .map(|k| {
            marker(
                k % 2,
                0.5 * CORRIDOR_MARKER_SPACING + k as f64 * CORRIDOR_MARKER_SPACING,
            )
        })
        .collect();
    w
}

pub fn room() -> World {
    let mut segments = polygon(&[
        (0.0, 0.0),
        (12.0, 0.0),
        (12.0, 3.0),
        (10.5, 3.0),
        (10.5, 5.0),
        (12.0, 5.0),
        (12.0, 8.0),
        (6.5, 8.0),
        (6.5, 7.3),
        (4.5, 7.3),
        (4.5, 8.0),
        (0.0, 8.0),
    ]);
    segments.extend(rect(4.25, 3.25, 4.75, 3.75));
    segments.extend(rect(6.8, 4.3, 7.2, 4.7));
    segments.extend(rect(2.8, 4.8, 3.2, 5.2));
    segments.push(wall((8.0, 0.0), (8.6, 0.6)));
    World {
        name: "room".into(),
        segments,
        markers: vec![marker(0, 5.0), marker(11, 4.0), marker(6, 3.0)],
    }
}

pub const HALL_LENGTH: f64 = 20.0;
pub const HALL_HALF_WIDTH: f64 = 2.0;

/// Closed hall with markers on both long walls and bright posts standing free.
pub fn distractor_hall() -> World {
    let segments_walls = rect(0.0, -HALL_HALF_WIDTH, HALL_LENGTH, HALL_HALF_WIDTH);
    let mut markers = Vec::new();
    // rect() walls: 0 bottom (x increasing), 2 top (x decreasing).
    for k in 0..6 {
        let x = 2.0 + 3.0 * k as f64;
        markers.push(marker(0, x));
        markers.push(marker(2, HALL_LENGTH - (x + 1.5)));
    }
    let mut segments = segments_walls;
    for c in [
        (3.0, 0.9),
        (6.5, -1.0),
        (9.5, 1.1),
        (12.5, -0.8),
        (15.5, 1.0),
        (17.5, -1.2),
    ] {
        segments.extend(post(c));
    }
    World {
        name: "distractor_hall".into(),
        segments,
        markers,
    }
}

pub const WORLD_NAMES: [&str; 4] = ["corridor", "corridor_marked", "room", "distractor_hall"];

pub fn builtin_worlds() -> Vec<World> {
    vec![corridor(), corridor_marked(), room(), distractor_hall()]
}

pub fn builtin_world(name: &str) -> Result<World, SimError> {
    builtin_worlds()
        .into_iter()
        .find(|w| w.name == name)
        .ok_or_else(|| SimError::UnknownWorld {
            name: name.to_string(),
            available: WORLD_NAMES.join(", "),
        })
}

/// Default waypoint route through a built-in world.
pub fn builtin_route(name: &str) -> Result<Vec<Pose2D>, SimError> {
    let p = Pose2D::new;
    let h = PI / 2.0;
    Ok(match name {
        "corridor" | "corridor_marked" => vec![p(0.0, 0.0, 0.0), p(CORRIDOR_LENGTH, 0.0, 0.0)],
        "room" => vec![
            p(1.5, 1.5, 0.0),
            p(9.0, 1.5, 0.0),
            p(9.0, 1.5, h),
            p(9.0, 6.3, h),
            p(9.0, 6.3, PI),
            p(1.5, 6.3, PI),
            p(1.5, 6.3, -h),
            p(1.5, 2.5, -h),
        ],
        "distractor_hall" => vec![p(1.0, 0.0, 0.0), p(HALL_LENGTH - 1.0, 0.0, 0.0)],
        other => {
            return Err(SimError::UnknownWorld {
                name: other.to_string(),
                available: WORLD_NAMES.join(", "),
            })
        }
    })
}

/// Parses waypoints, one `x y theta` per line; `#` starts a comment.
pub fn parse_waypoints(text: &str) -> Result<Vec<Pose2D>, SimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        match v {
            Ok(v) if v.len() == 3 => out.push(Pose2D::new(v[0], v[1], v[2])),
            _ => {
                return Err(SimError::InvalidTrajectory(format!(
                    "line {}: expected `x y theta`",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_world() -> World {
        World {
            name: "square".into(),
            segments: rect(-5.0, -5.0, 5.0, 5.0),
            markers: Vec::new(),
        }
    }

    fn four_beam_spec() -> LidarSpec {
        LidarSpec {
            name: "quad".into(),
            frequency: 10.0,
            fov: 2.0 * PI,
            angular_resolution: PI / 2.0,
            min_intensity: 100.0,
            point_tolerance: 1,
            max_usable_range: 30.0,
        }
    }

    #[test]
    fn square_ranges() {
        let cfg = SimConfig::new(four_beam_spec(), 1).noiseless();
        let scan = simulate_scan(&square_world(), &Pose2D::identity(), &cfg);
        assert_eq!(scan.len(), 4);
        for r in scan.ranges() {
            assert!((r - 5.0).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn empty_world_all_invalid() {
        let w = World {
            name: "void".into(),
            segments: vec![],
            markers: vec![],
        };
        let scan = simulate_scan(
            &w,
            &Pose2D::identity(),
            &SimConfig::new(LidarSpec::lms151(), 0),
        );
        assert!(scan.ranges().iter().all(|r| r.is_nan()));
    }

    #[test]
    fn marker_brightness_ratio() {
        let m = IntensityModel::for_spec(&LidarSpec::lms151());
        let wall = m.intensity(WALL_REFLECTIVITY, 2.0, 0.9);
        let mark = m.intensity(MARKER_REFLECTIVITY, 2.0, 0.9);
        assert!(mark >= 20.0 * wall - 1e-9);
    }

    #[test]
    fn head_on_marker_beam_count() {
        // Wall 1 m ahead, marker centered on the optical axis. The sensor is
        // turned by a quarter step so the marker spans six beam bearings.
        let world = World {
            name: "plate".into(),
            segments: vec![wall((1.0, -2.0), (1.0, 2.0))],
            markers: vec![marker(0, 2.0)],
        };
        let spec = LidarSpec::lms151();
        let cfg = SimConfig::new(spec.clone(), 0).noiseless();
        let turn = 0.25 * spec.angular_resolution;
        let scan = simulate_scan(&world, &Pose2D::new(0.0, 0.0, turn), &cfg);
        let hot = scan
            .intensities()
            .iter()
            .filter(|&&i| i >= spec.min_intensity)
            .count();
        // Core beams by enumeration: rays whose wall hit lies on the marker.
        let core = (0..scan.len())
            .filter(|&b| {
                let a = scan.bearing(b) + turn;
                a.cos() > 0.0 && a.tan().abs() <= 0.025
            })
            .count();
        assert_eq!(core, 6);
        assert_eq!(hot, core + 2);
    }

    #[test]
    fn deterministic_and_seeded() {
        let w = corridor_marked();
        let cfg = SimConfig::new(LidarSpec::lms151(), 7);
        let pose = Pose2D::new(3.0, 0.1, 0.05);
        let a = simulate_scan_at(&w, &pose, &cfg, 3, 0.06);
        let b = simulate_scan_at(&w, &pose, &cfg, 3, 0.06);
        assert_eq!(crate::scan::scan_to_line(&a), crate::scan::scan_to_line(&b));
        let c = simulate_scan_at(&w, &pose, &cfg, 4, 0.06);
        assert_ne!(a.ranges(), c.ranges());
    }

    #[test]
    fn straight_line_tick_count() {
        let cfg = SimConfig::new(LidarSpec::lms151(), 0);
        let route = [Pose2D::identity(), Pose2D::new(10.0, 0.0, 0.0)];
        let (scans, gt) = simulate_trajectory(&corridor(), &route, 1.0, &cfg).unwrap();
        assert_eq!(scans.len(), 500);
        assert_eq!(gt.len(), 500);
        for w in gt.windows(2) {
            assert!(((w[1].translation() - w[0].translation()).norm() - 0.02).abs() < 1e-9);
        }
        for w in scans.windows(2) {
            assert!(w[1].timestamp() > w[0].timestamp());
        }
    }

    #[test]
    fn stationary_path() {
        let mut cfg = SimConfig::new(LidarSpec::lms151(), 0).noiseless();
        cfg.stationary_duration = 0.1;
        let p = Pose2D::new(5.0, 0.0, 0.0);
        let (scans, gt) = simulate_trajectory(&corridor(), &[p, p], 1.0, &cfg).unwrap();
        assert_eq!(scans.len(), 5);
        assert!(gt.iter().all(|g| *g == p));
        let first = crate::scan::scan_to_line(&scans[0].with_timestamp(0.0));
        for s in &scans[1..] {
            assert_eq!(crate::scan::scan_to_line(&s.with_timestamp(0.0)), first);
        }
    }

    #[test]
    fn builtin_world_facts() {
        assert!(corridor().markers.is_empty());
        let marked = corridor_marked();
        assert_eq!(marked.markers.len(), 8);
        for w in builtin_worlds() {
            w.validate().unwrap();
            builtin_route(&w.name).unwrap();
        }
        // Posts stand free: no post vertex lies on a wall.
        let hall = distractor_hall();
        let posts: Vec<_> = hall
            .segments
            .iter()
            .filter(|s| s.reflectivity == POST_REFLECTIVITY)
            .collect();
        assert!(posts.len() >= 5 * 12);
        for s in posts {
            assert!(s.a.y.abs() < HALL_HALF_WIDTH - 0.5);
        }
        assert!(builtin_world("nowhere").is_err());
    }

    #[test]
    fn world_toml_round_trip() {
        for w in builtin_worlds() {
            let back = World::from_toml(&w.to_toml()).unwrap();
            assert_eq!(back, w);
        }
        let text = r#"
name = "tiny"
[[segments]]
name = "north"
a = [0.0, 1.0]
b = [4.0, 1.0]
[[markers]]
segment = "north"
offset = 2.0
[[markers]]
segment = 0
offset = 1.0
"#;
        let w = World::from_toml(text).unwrap();
        assert_eq!(w.markers.len(), 2);
        assert_eq!(w.markers[0].width, MARKER_WIDTH);
        let bad = text.replace("offset = 2.0", "offset = 3.99");
        assert!(World::from_toml(&bad).is_err());
    }

    #[test]
    fn waypoints_parse() {
        let w = parse_waypoints("# route\n0 0 0\n1 2 0.5 # end\n").unwrap();
        assert_eq!(w.len(), 2);
        assert!(parse_waypoints("1 2\n").is_err());
    }
}

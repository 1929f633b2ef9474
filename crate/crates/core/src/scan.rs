//! Laser scans, sensor descriptions and the line-oriented scan log format.
//!
//! A scan log holds one JSON object per line:
//!
//! ```text
//! {"t":0.02,"start_angle":-2.356,"ranges":[1.2,null,...],"intensities":[310.0,0.0,...],"sensor":"lms151"}
//! ```
//!
//! Invalid returns are written as `null` and read back as NaN. `sensor` is
//! either a preset name or an inline object with the [`LidarSpec`] fields.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("ranges ({ranges}) and intensities ({intensities}) differ in length")]
    LengthMismatch { ranges: usize, intensities: usize },
    #[error("negative range {value} at beam {index}")]
    NegativeRange { index: usize, value: f64 },
    #[error("invalid lidar spec: {0}")]
    InvalidSpec(String),
    #[error("unknown sensor preset `{0}` (available: lms151, r2000, os32c)")]
    UnknownPreset(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static description of a 2D lidar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub name: String,
    /// Scan rate in Hz.
    pub frequency: f64,
    /// Field of view in radians.
    pub fov: f64,
    /// Angle between consecutive beams in radians.
    pub angular_resolution: f64,
    /// Intensity threshold `i_min` in sensor units.
    pub min_intensity: f64,
    /// Allowed deviation `p_d` between measured and expected marker point count.
    pub point_tolerance: u32,
    pub max_usable_range: f64,
}

impl LidarSpec {
    pub fn lms151() -> Self {
        Self {
            name: "lms151".into(),
            frequency: 50.0,
            fov: 270f64.to_radians(),
            angular_resolution: 0.5f64.to_radians(),
            min_intensity: 1000.0,
            point_tolerance: 1,
            max_usable_range: 20.0,
        }
    }

    pub fn r2000() -> Self {
        Self {
            name: "r2000".into(),
            frequency: 50.0,
            fov: TAU,
            angular_resolution: 0.1f64.to_radians(),
            min_intensity: 500.0,
            point_tolerance: 2,
            max_usable_range: 30.0,
        }
    }

    pub fn os32c() -> Self {
        Self {
            name: "os32c".into(),
            frequency: 13.0,
            fov: 270f64.to_radians(),
            angular_resolution: 0.4f64.to_radians(),
            min_intensity: 8000.0,
            point_tolerance: 1,
            max_usable_range: 15.0,
        }
    }

    pub const PRESET_NAMES: [&'static str; 3] = ["lms151", "r2000", "os32c"];

    pub fn preset(name: &str) -> Result<Self, ScanError> {
        match name.to_ascii_lowercase().as_str() {
            "lms151" => Ok(Self::lms151()),
            "r2000" => Ok(Self::r2000()),
            "os32c" => Ok(Self::os32c()),
            _ => Err(ScanError::UnknownPreset(name.to_string())),
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::lms151(), Self::r2000(), Self::os32c()]
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let bad = |m: &str| Err(ScanError::InvalidSpec(m.to_string()));
        if !(self.angular_resolution > 0.0) {
            return bad("angular_resolution must be positive");
        }
        if !(self.fov > 0.0 && self.fov <= TAU + 1e-12) {
            return bad("fov must lie in (0, 2pi]");
        }
        if !(self.min_intensity > 0.0) {
            return bad("min_intensity must be positive");
        }
        if !(self.frequency > 0.0) {
            return bad("frequency must be positive");
        }
        if !(self.max_usable_range > 0.0) {
            return bad("max_usable_range must be positive");
        }
        Ok(())
    }

    /// Number of beams covering the field of view.
    pub fn beam_count(&self) -> usize {
        let steps = (self.fov / self.angular_resolution).round() as usize;
        if self.fov >= TAU - 1e-9 {
            steps
        } else {
            steps + 1
        }
    }

    /// Bearing of the first beam when the field of view is centered on the x axis.
    pub fn centered_start_angle(&self) -> f64 {
        -0.5 * self.fov
    }

    pub fn with_min_intensity(&self, min_intensity: f64) -> Self {
        Self {
            min_intensity,
            ..self.clone()
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }
}

/// One Cartesian scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub point: Point2,
    pub intensity: f64,
    pub beam: usize,
}

/// Polar range and intensity samples from one sweep. Invalid returns are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    timestamp: f64,
    start_angle: f64,
    ranges: Vec<f64>,
    intensities: Vec<f64>,
    spec: Arc<LidarSpec>,
}

impl LaserScan {
    pub fn new(
        timestamp: f64,
        start_angle: f64,
        ranges: Vec<f64>,
        intensities: Vec<f64>,
        spec: Arc<LidarSpec>,
    ) -> Result<Self, ScanError> {
        if ranges.len() != intensities.len() {
            return Err(ScanError::LengthMismatch {
                ranges: ranges.len(),
                intensities: intensities.len(),
            });
        }
        if let Some((index, &value)) = ranges.iter().enumerate().find(|(_, r)| **r < 0.0) {
            return Err(ScanError::NegativeRange { index, value });
        }
        // Infinite ranges are treated the same as missing returns.
        let ranges = ranges
            .into_iter()
            .map(|r| if r.is_finite() { r } else { f64::NAN })
            .collect();
        Ok(Self {
            timestamp,
            start_angle,
            ranges,
            intensities,
            spec,
        })
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn start_angle(&self) -> f64 {
        self.start_angle
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn spec(&self) -> &Arc<LidarSpec> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn bearing(&self, beam: usize) -> f64 {
        self.start_angle + beam as f64 * self.spec.angular_resolution
    }

    pub fn is_valid(&self, beam: usize) -> bool {
        self.ranges.get(beam).is_some_and(|r| r.is_finite())
    }

    /// Cartesian point of a beam, `None` for invalid returns.
    pub fn point(&self, beam: usize) -> Option<Point2> {
        let r = *self.ranges.get(beam)?;
        if !r.is_finite() {
            return None;
        }
        let (s, c) = self.bearing(beam).sin_cos();
        Some(Point2::new(r * c, r * s))
    }

    pub fn with_start_angle(&self, start_angle: f64) -> Self {
        Self {
            start_angle,
            ..self.clone()
        }
    }

    pub fn with_timestamp(&self, timestamp: f64) -> Self {
        Self {
            timestamp,
            ..self.clone()
        }
    }

    pub fn with_spec(&self, spec: Arc<LidarSpec>) -> Self {
        Self {
            spec,
            ..self.clone()
        }
    }

    pub fn to_cartesian(&self) -> Vec<ScanPoint> {
        to_cartesian(self)
    }
}

pub fn to_cartesian(scan: &LaserScan) -> Vec<ScanPoint> {
    (0..scan.len())
        .filter_map(|beam| {
            scan.point(beam).map(|point| ScanPoint {
                point,
                intensity: scan.intensities[beam],
                beam,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SensorField {
    Preset(String),
    Inline(LidarSpec),
}

#[derive(Serialize, Deserialize)]
struct ScanRecord {
    t: f64,
    start_angle: f64,
    ranges: Vec<Option<f64>>,
    intensities: Vec<f64>,
    sensor: SensorField,
}

/// Serializes one scan as a single log line (without the trailing newline).
pub fn scan_to_line(scan: &LaserScan) -> String {
    let spec = scan.spec.as_ref();
    let sensor = match LidarSpec::preset(&spec.name) {
        Ok(p) if &p == spec => SensorField::Preset(spec.name.clone()),
        _ => SensorField::Inline(spec.clone()),
    };
    let record = ScanRecord {
        t: scan.timestamp,
        start_angle: scan.start_angle,
        ranges: scan
            .ranges
            .iter()
            .map(|r| r.is_finite().then_some(*r))
            .collect(),
        intensities: scan.intensities.clone(),
        sensor,
    };
    serde_json::to_string(&record).expect("scan records always serialize")
}

/// Parses one log line. `line` is the 1-based line number used in errors.
pub fn scan_from_line(text: &str, line: usize) -> Result<LaserScan, ScanError> {
    let record: ScanRecord = serde_json::from_str(text).map_err(|e| ScanError::Parse {
        line,
        message: e.to_string(),
    })?;
    let spec = match record.sensor {
        SensorField::Preset(name) => LidarSpec::preset(&name).map_err(|e| ScanError::Parse {
            line,
            message: e.to_string(),
        })?,
        SensorField::Inline(spec) => spec,
    };
    spec.validate().map_err(|e| ScanError::Parse {
        line,
        message: e.to_string(),
    })?;
    let ranges = record
        .ranges
        .into_iter()
        .map(|r| r.unwrap_or(f64::NAN))
        .collect();
    LaserScan::new(
        record.t,
        record.start_angle,
        ranges,
        record.intensities,
        Arc::new(spec),
    )
    .map_err(|e| ScanError::Parse {
        line,
        message: e.to_string(),
    })
}

pub fn write_scan_log<W: Write>(mut out: W, scans: &[LaserScan]) -> Result<(), ScanError> {
    for scan in scans {
        writeln!(out, "{}", scan_to_line(scan))?;
    }
    Ok(())
}

/// Reads a scan log; blank lines are skipped. Scans sharing an identical
/// sensor description share one `Arc<LidarSpec>`.
pub fn read_scan_log<R: BufRead>(input: R) -> Result<Vec<LaserScan>, ScanError> {
    let mut scans: Vec<LaserScan> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut scan = scan_from_line(&line, i + 1)?;
        if let Some(prev) = scans.last() {
            if prev.spec == scan.spec {
                scan.spec = Arc::clone(&prev.spec);
            }
        }
        scans.push(scan);
    }
    Ok(scans)
}

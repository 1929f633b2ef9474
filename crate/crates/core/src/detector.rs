//! Detection of wall-mounted retroreflective markers of known width.
//!
//! Every beam above the intensity threshold is treated as a candidate and
//! run through a fixed sequence of gates: range window, wall-segment growth,
//! segment size, intensity-jump borders, line fit, incidence angle and the
//! expected point count. Surviving candidates that describe the same marker
//! are merged by Euclidean distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sym2_eigen, Point2};
use crate::scan::LaserScan;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("line fit needs at least two distinct points")]
    DegenerateLine,
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

/// Which point stands in for the marker center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    #[default]
    CenterOfMass,
    HighestIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub r_min: f64,
    pub r_max: f64,
    /// Euclidean window `w` used to grow the wall segment around a candidate.
    pub window: f64,
    pub min_segment_length: f64,
    pub min_segment_points: usize,
    /// Maximum mean squared error of the marker line fit, m².
    pub max_fit_mse: f64,
    /// Jumps must reach `jump_fraction * i_min`.
    pub jump_fraction: f64,
    pub marker_width: f64,
    pub flat_angle_max: f64,
    pub duplicate_merge_dist: f64,
    pub center_mode: CenterMode,
    /// Drop markers whose normal points straight at the sensor (specular suspects).
    pub reject_facing: bool,
    pub facing_tolerance: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            r_min: 0.5,
            r_max: 6.0,
            window: 0.15,
            min_segment_length: 0.15,
            min_segment_points: 5,
            max_fit_mse: 0.01,
            jump_fraction: 0.333,
            marker_width: 0.05,
            flat_angle_max: 80f64.to_radians(),
            duplicate_merge_dist: 0.10,
            center_mode: CenterMode::CenterOfMass,
            reject_facing: false,
            facing_tolerance: 1f64.to_radians(),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let checks = [
            (
                self.r_min > 0.0 && self.r_min < self.r_max,
                "0 < r_min < r_max",
            ),
            (self.window > 0.0, "window > 0"),
            (self.min_segment_length > 0.0, "min_segment_length > 0"),
            (self.min_segment_points >= 3, "min_segment_points >= 3"),
            (self.max_fit_mse > 0.0, "max_fit_mse > 0"),
            (
                self.jump_fraction > 0.0 && self.jump_fraction <= 1.0,
                "0 < jump_fraction <= 1",
            ),
            (self.marker_width > 0.0, "marker_width > 0"),
            (
                self.flat_angle_max > 0.0 && self.flat_angle_max < std::f64::consts::FRAC_PI_2,
                "0 < flat_angle_max < pi/2",
            ),
            (
                self.duplicate_merge_dist >= 0.0,
                "duplicate_merge_dist >= 0",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(DetectorError::InvalidParams(msg.to_string())),
            None => Ok(()),
        }
    }
}

/// A detected marker in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDetection {
    pub center: Point2,
    /// Unit normal facing the sensor; `None` for detectors that do not estimate it.
    pub normal: Option<Point2>,
    /// First and last beam index of the marker support (inclusive).
    pub start: usize,
    pub end: usize,
    pub point_count: usize,
    pub incidence: f64,
    pub mean_intensity: f64,
}

impl MarkerDetection {
    pub fn support(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn normal_angle(&self) -> Option<f64> {
        self.normal.map(|n| n.y.atan2(n.x))
    }
}

/// Total-least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub centroid: Point2,
    pub direction: Point2,
    /// Normal oriented toward the origin.
    pub normal: Point2,
    /// Mean squared perpendicular distance.
    pub mse: f64,
}

pub fn fit_line(points: &[Point2]) -> Result<LineFit, DetectorError> {
    if points.len() < 2 {
        return Err(DetectorError::DegenerateLine);
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Point2>() / n;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let (small, large, v_small, v_large) = sym2_eigen(&cov);
    let scale = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if !(large > (1e-12 * scale).powi(2)) {
        return Err(DetectorError::DegenerateLine);
    }
    let mut normal = v_small;
    if normal.dot(&(-centroid)) < 0.0 {
        normal = -normal;
    }
    Ok(LineFit {
        centroid,
        direction: v_large,
        normal,
        mse: small.max(0.0),
    })
}

/// Number of beams expected to return from a marker of width `marker_width`
/// whose center is at `center`, seen at incidence `incidence`. Two beams are
/// added for the divergence of the edge beams.
pub fn expected_point_count(
    center: &Point2,
    incidence: f64,
    marker_width: f64,
    resolution: f64,
) -> usize {
    let dist = center.norm();
    let half = 0.5 * marker_width;
    let dx = half * incidence.sin();
    let dy = half * incidence.cos();
    let alpha = dy.atan2(dist - dx);
    let beta = dy.atan2(dist + dx);
    ((alpha + beta) / resolution).round() as usize + 2
}

struct Candidate {
    det: MarkerDetection,
}

/// Runs the marker detector on one scan.
pub fn detect(scan: &LaserScan, params: &DetectorParams) -> Vec<MarkerDetection> {
    let spec = scan.spec();
    let i_min = spec.min_intensity;
    let min_jump = params.jump_fraction * i_min;
    let ranges = scan.ranges();
    let intensity = scan.intensities();
    let points: Vec<Option<Point2>> = (0..scan.len()).map(|b| scan.point(b)).collect();
    let n = points.len();

    let mut candidates = Vec::new();
    for j in 0..n {
        let Some(pj) = points[j] else { continue };
        if intensity[j] < i_min {
            continue;
        }
        let r = ranges[j];
        if r < params.r_min || r > params.r_max {
            continue;
        }

        // Grow the wall segment until a neighbor leaves the window.
        let within = |k: usize| points[k].is_some_and(|pk| (pk - pj).norm() <= params.window);
        let mut lo = j;
        while lo > 0 && within(lo - 1) {
            lo -= 1;
        }
        let mut hi = j;
        while hi + 1 < n && within(hi + 1) {
            hi += 1;
        }
        let seg_points = hi - lo + 1;
        let p_lo = points[lo].expect("segment points are valid");
        let p_hi = points[hi].expect("segment points are valid");
        if (p_lo - p_hi).norm() < params.min_segment_length
            || seg_points < params.min_segment_points
        {
            continue;
        }

        // Largest upward and downward intensity steps bound the marker.
        let mut up = (f64::NEG_INFINITY, lo);
        let mut down = (f64::INFINITY, lo);
        for k in lo..hi {
            let step = intensity[k + 1] - intensity[k];
            if step > up.0 {
                up = (step, k);
            }
            if step < down.0 {
                down = (step, k);
            }
        }
        if up.0 < min_jump || -down.0 < min_jump {
            continue;
        }
        let start = up.1 + 1;
        let end = down.1;
        if !(start <= j && j <= end) {
            continue;
        }

        let marker: Vec<Point2> = (start..=end).filter_map(|k| points[k]).collect();
        let center = match params.center_mode {
            CenterMode::CenterOfMass => marker.iter().sum::<Point2>() / marker.len() as f64,
            CenterMode::HighestIntensity => {
                let mut best = start;
                for k in start..=end {
                    if intensity[k] > intensity[best] {
                        best = k;
                    }
                }
                points[best].expect("marker points are valid")
            }
        };

        let Ok(fit) = fit_line(&marker) else { continue };
        if fit.mse > params.max_fit_mse {
            continue;
        }
        let mut normal = fit.normal;
        if normal.dot(&(-center)) < 0.0 {
            normal = -normal;
        }
        let cos_inc = (normal.dot(&(-center)) / center.norm()).clamp(-1.0, 1.0);
        let incidence = cos_inc.acos();
        if incidence > params.flat_angle_max {
            continue;
        }
        if params.reject_facing && incidence < params.facing_tolerance {
            continue;
        }

        let actual = end - start + 1;
        let expected = expected_point_count(
            &center,
            incidence,
            params.marker_width,
            spec.angular_resolution,
        );
        if actual.abs_diff(expected) > spec.point_tolerance as usize {
            continue;
        }

        let mean_intensity = (start..=end).map(|k| intensity[k]).sum::<f64>() / actual as f64;
        candidates.push(Candidate {
            det: MarkerDetection {
                center,
                normal: Some(normal),
                start,
                end,
                point_count: actual,
                incidence,
                mean_intensity,
            },
        });
    }

    merge_duplicates(candidates, params.duplicate_merge_dist)
}

/// Keeps the best-supported candidate among neighbors closer than `dist`.
fn merge_duplicates(mut candidates: Vec<Candidate>, dist: f64) -> Vec<MarkerDetection> {
    candidates.sort_by(|a, b| {
        b.det
            .point_count
            .cmp(&a.det.point_count)
            .then(a.det.start.cmp(&b.det.start))
    });
    let mut kept: Vec<MarkerDetection> = Vec::new();
    for c in candidates {
        if kept
            .iter()
            .all(|k| (k.center - c.det.center).norm() >= dist)
        {
            kept.push(c.det);
        }
    }
    kept.sort_by_key(|d| d.start);
    kept
}

//! Trajectory alignment, absolute tracking error, and detector
//! precision/recall against bounding-box labels.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::detector::{detect, DetectorParams, MarkerDetection};
use crate::geometry::{Point2, Pose2D};
use crate::scan::LaserScan;
use crate::sim::World;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("alignment needs at least two associated poses, found {found} (estimate {estimate}, reference {reference})")]
    TooFewAssociations {
        found: usize,
        estimate: usize,
        reference: usize,
    },
    #[error("invalid sweep `{0}` (expected start:end:count)")]
    BadSweep(String),
}

/// A pose with its timestamp.
pub type TimedPose = (f64, Pose2D);

/// Largest timestamp gap accepted when pairing poses: half the median
/// reference period.
pub fn association_gap(reference: &[TimedPose]) -> f64 {
    let mut dts: Vec<f64> = reference.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if dts.is_empty() {
        return 0.0;
    }
    dts.sort_by(f64::total_cmp);
    0.5 * dts[dts.len() / 2]
}

/// Nearest-timestamp pairs `(estimate index, reference index)`.
pub fn associate(estimate: &[TimedPose], reference: &[TimedPose]) -> Vec<(usize, usize)> {
    let gap = association_gap(reference);
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, (t, _)) in estimate.iter().enumerate() {
        if reference.is_empty() {
            break;
        }
        while j + 1 < reference.len()
            && (reference[j + 1].0 - t).abs() <= (reference[j].0 - t).abs()
        {
            j += 1;
        }
        if (reference[j].0 - t).abs() <= gap + 1e-12 * t.abs().max(1.0) {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Least-squares rigid transform mapping `from` points onto `to` points.
pub fn rigid_fit(from: &[Point2], to: &[Point2]) -> Pose2D {
    let n = from.len() as f64;
    let cf = from.iter().sum::<Point2>() / n;
    let ct = to.iter().sum::<Point2>() / n;
    let (mut sin, mut cos) = (0.0, 0.0);
    for (a, b) in from.iter().zip(to) {
        let a = a - cf;
        let b = b - ct;
        cos += a.dot(&b);
        sin += a.x * b.y - a.y * b.x;
    }
    let theta = sin.atan2(cos);
    let r = Pose2D::new(0.0, 0.0, theta);
    let t = ct - r.transform_point(&cf);
    Pose2D::new(t.x, t.y, theta)
}

/// Transform `g` such that `g * estimate` best matches `reference` in position.
pub fn align_trajectories(
    estimate: &[TimedPose],
    reference: &[TimedPose],
) -> Result<Pose2D, EvalError> {
    let pairs = associate(estimate, reference);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewAssociations {
            found: pairs.len(),
            estimate: estimate.len(),
            reference: reference.len(),
        });
    }
    let from: Vec<Point2> = pairs
        .iter()
        .map(|&(i, _)| estimate[i].1.translation())
        .collect();
    let to: Vec<Point2> = pairs
        .iter()
        .map(|&(_, j)| reference[j].1.translation())
        .collect();
    Ok(rigid_fit(&from, &to))
}

pub const DEFAULT_FAIL_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub rmse: f64,
    pub max_error: f64,
    /// `(timestamp, error)` for every associated pose.
    pub per_pose_errors: Vec<(f64, f64)>,
    pub aligned_transform: Pose2D,
    pub fail_threshold: f64,
    pub success: bool,
}

pub fn compute_ate(
    estimate: &[TimedPose],
    reference: &[TimedPose],
    fail_threshold: f64,
) -> Result<TrajectoryReport, EvalError> {
    let g = align_trajectories(estimate, reference)?;
    let pairs = associate(estimate, reference);
    let per_pose_errors: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(i, j)| {
            let p = g.transform_point(&estimate[i].1.translation());
            (estimate[i].0, (p - reference[j].1.translation()).norm())
        })
        .collect();
    let n = per_pose_errors.len() as f64;
    let rmse = (per_pose_errors.iter().map(|e| e.1 * e.1).sum::<f64>() / n).sqrt();
    let max_error = per_pose_errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(TrajectoryReport {
        rmse,
        max_error,
        per_pose_errors,
        aligned_transform: g,
        fail_threshold,
        success: max_error <= fail_threshold,
    })
}

pub fn format_ate_summary(r: &TrajectoryReport) -> String {
    format!(
        "rmse {:.6}\nmax {:.6}\nposes {}\nalignment {:.9} {:.9} {:.9}\nresult {}\n",
        r.rmse,
        r.max_error,
        r.per_pose_errors.len(),
        r.aligned_transform.x,
        r.aligned_transform.y,
        r.aligned_transform.theta,
        if r.success { "SUCCESS" } else { "FAILED" }
    )
}

pub fn format_error_table(r: &TrajectoryReport) -> String {
    let mut s = String::from("timestamp,error\n");
    for (t, e) in &r.per_pose_errors {
        let _ = writeln!(s, "{t},{e}");
    }
    s
}

pub const LABEL_PAD: f64 = 0.01;
pub const LABEL_GROW: f64 = 0.10;

/// Axis-aligned marker box in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLabel {
    pub min: Point2,
    pub max: Point2,
    pub grow_margin: f64,
    /// Normal of the wall carrying the marker, when known.
    pub normal: Option<Point2>,
}

impl MarkerLabel {
    pub fn center(&self) -> Point2 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        let g = self.grow_margin;
        p.x >= self.min.x - g
            && p.x <= self.max.x + g
            && p.y >= self.min.y - g
            && p.y <= self.max.y + g
    }
}

/// Labels for every marker of a simulated world.
pub fn labels_from_world(world: &World) -> Vec<MarkerLabel> {
    (0..world.markers.len())
        .map(|i| {
            let (a, b) = world.marker_endpoints(i);
            let pad = Point2::new(LABEL_PAD, LABEL_PAD);
            MarkerLabel {
                min: a.inf(&b) - pad,
                max: a.sup(&b) + pad,
                grow_margin: LABEL_GROW,
                normal: Some(world.marker_normal(i)),
            }
        })
        .collect()
}

/// Restricts recall bookkeeping to labels seen close and not too obliquely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eligibility {
    pub max_range: f64,
    pub max_incidence: f64,
}

impl Default for Eligibility {
    fn default() -> Self {
        Self {
            max_range: 6.0,
            max_incidence: 60f64.to_radians(),
        }
    }
}

impl Eligibility {
    pub fn admits(&self, label: &MarkerLabel, sensor: &Pose2D) -> bool {
        let to_sensor = sensor.translation() - label.center();
        let dist = to_sensor.norm();
        if dist > self.max_range {
            return false;
        }
        match label.normal {
            Some(n) if dist > 0.0 => {
                (n.dot(&to_sensor).abs() / dist).clamp(0.0, 1.0).acos() <= self.max_incidence
            }
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    /// Visible labels (per scan) with a detection inside.
    pub hits: usize,
    /// Visible labels (per scan) without any detection inside.
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrReport {
    pub detector: String,
    pub points: Vec<PrPoint>,
}

/// Scores the detections of a scan sequence with known sensor poses.
///
/// Each detection is a true positive when it falls in a grown label box and a
/// false positive otherwise. A label that has a scan point inside its box is
/// visible in that scan; a visible label with no detection inside counts as a
/// false negative, one with a detection as a hit. With `eligibility`, only
/// labels it admits enter the hit and false-negative counts.
pub fn evaluate_detector(
    scans: &[LaserScan],
    poses: &[Pose2D],
    detections: &[Vec<MarkerDetection>],
    labels: &[MarkerLabel],
    eligibility: Option<&Eligibility>,
    threshold: f64,
) -> PrPoint {
    let (mut tp, mut fp, mut hits, mut fn_) = (0, 0, 0, 0);
    for ((scan, pose), dets) in scans.iter().zip(poses).zip(detections) {
        let world_dets: Vec<Point2> = dets
            .iter()
            .map(|d| pose.transform_point(&d.center))
            .collect();
        for d in &world_dets {
            if labels.iter().any(|l| l.contains(d)) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let points: Vec<Point2> = scan
            .to_cartesian()
            .iter()
            .map(|p| pose.transform_point(&p.point))
            .collect();
        for label in labels {
            if eligibility.is_some_and(|e| !e.admits(label, pose)) {
                continue;
            }
            if !points.iter().any(|p| label.contains(p)) {
                continue;
            }
            if world_dets.iter().any(|d| label.contains(d)) {
                hits += 1;
            } else {
                fn_ += 1;
            }
        }
    }
    PrPoint {
        threshold,
        precision: if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            1.0
        },
        recall: if hits + fn_ > 0 {
            hits as f64 / (hits + fn_) as f64
        } else {
            1.0
        },
        tp,
        fp,
        hits,
        fn_,
    }
}

/// Largest gap between consecutive points of one threshold-detector run.
/// Equal to the detector's default wall-segment window.
pub const RUN_BREAK_DISTANCE: f64 = 0.15;

/// Baseline: each maximal run of consecutive valid beams at or above `i_min`
/// becomes one detection at the run's mean position. A run also ends at a
/// depth jump, where neighbouring points are more than [`RUN_BREAK_DISTANCE`]
/// apart, so a bright object in front of a marker does not pull the marker's
/// detection off it.
pub fn threshold_detector(scan: &LaserScan, i_min: f64) -> Vec<MarkerDetection> {
    let mut out = Vec::new();
    let mut run: Vec<(usize, Point2, f64)> = Vec::new();
    let flush = |run: &mut Vec<(usize, Point2, f64)>, out: &mut Vec<MarkerDetection>| {
        if run.is_empty() {
            return;
        }
        let n = run.len() as f64;
        out.push(MarkerDetection {
            center: run.iter().map(|r| r.1).sum::<Point2>() / n,
            normal: None,
            start: run[0].0,
            end: run[run.len() - 1].0,
            point_count: run.len(),
            incidence: 0.0,
            mean_intensity: run.iter().map(|r| r.2).sum::<f64>() / n,
        });
        run.clear();
    };
    for b in 0..scan.len() {
        let i = scan.intensities()[b];
        match scan.point(b) {
            Some(p) if i >= i_min => {
                if run
                    .last()
                    .is_some_and(|r| (r.1 - p).norm() > RUN_BREAK_DISTANCE)
                {
                    flush(&mut run, &mut out);
                }
                run.push((b, p, i));
            }
            _ => flush(&mut run, &mut out),
        }
    }
    flush(&mut run, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    Proposed(DetectorParams),
    Threshold,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Proposed(_) => "proposed",
            DetectorKind::Threshold => "threshold",
        }
    }

    pub fn run(&self, scan: &LaserScan, i_min: f64) -> Vec<MarkerDetection> {
        match self {
            DetectorKind::Proposed(p) => {
                let spec = std::sync::Arc::new(scan.spec().with_min_intensity(i_min));
                detect(&scan.with_spec(spec), p)
            }
            DetectorKind::Threshold => threshold_detector(scan, i_min),
        }
    }
}

/// `count` evenly spaced thresholds from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|k| start + (end - start) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Parses `start:end:count`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>, EvalError> {
    let bad = || EvalError::BadSweep(text.to_string());
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !(start > 0.0) || !(end >= start) {
        return Err(bad());
    }
    Ok(linspace(start, end, count))
}

pub fn sweep_detector(
    scans: &[LaserScan],
    poses: &[Pose2D],
    labels: &[MarkerLabel],
    kind: &DetectorKind,
    thresholds: &[f64],
    eligibility: Option<&Eligibility>,
) -> PrReport {
    let points = thresholds
        .iter()
        .map(|&t| {
            let dets: Vec<Vec<MarkerDetection>> = scans.iter().map(|s| kind.run(s, t)).collect();
            evaluate_detector(scans, poses, &dets, labels, eligibility, t)
        })
        .collect();
    PrReport {
        detector: kind.name().to_string(),
        points,
    }
}

pub fn format_pr_table(r: &PrReport) -> String {
    let mut s = String::from("threshold,precision,recall,tp,fp,hits,fn\n");
    for p in &r.points {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{},{},{}",
            p.threshold, p.precision, p.recall, p.tp, p.fp, p.hits, p.fn_
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::LidarSpec;
    use std::sync::Arc;

    fn traj(n: usize) -> Vec<TimedPose> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                (
                    t,
                    Pose2D::new(t.cos() * 3.0, (1.3 * t).sin() * 2.0 + t, 0.1 * t),
                )
            })
            .collect()
    }

    #[test]
    fn identical_is_identity() {
        let a = traj(50);
        let g = align_trajectories(&a, &a).unwrap();
        assert!(g.translation_norm() < 1e-12 && g.theta.abs() < 1e-12);
        let r = compute_ate(&a, &a, 1.0).unwrap();
        assert!(r.rmse <= 1e-9 && r.success);
    }

    #[test]
    fn recovers_known_transform() {
        let a = traj(60);
        let g = Pose2D::new(4.0, -1.0, 2.5);
        let b: Vec<_> = a.iter().map(|(t, p)| (*t, g.compose(p))).collect();
        let est = align_trajectories(&a, &b).unwrap();
        assert!((est.x - g.x).abs() < 1e-9 && (est.y - g.y).abs() < 1e-9);
        assert!((est.theta - g.theta).abs() < 1e-9);
        assert!(compute_ate(&a, &b, 1.0).unwrap().rmse < 1e-9);
    }

    #[test]
    fn too_few_pairs() {
        let a = traj(1);
        assert!(matches!(
            align_trajectories(&a, &traj(5)),
            Err(EvalError::TooFewAssociations { found: 1, .. })
        ));
        // Estimate timestamps far from every reference timestamp.
        let shifted: Vec<_> = traj(5).into_iter().map(|(t, p)| (t + 100.0, p)).collect();
        assert!(align_trajectories(&shifted, &traj(5)).is_err());
    }

    #[test]
    fn association_gap_half_period() {
        let r = traj(10);
        assert!((association_gap(&r) - 0.05).abs() < 1e-12);
        let est = vec![(0.04, Pose2D::identity()), (0.56, Pose2D::identity())];
        assert_eq!(associate(&est, &r), vec![(0, 0), (1, 6)]);
        let far = vec![(1.2, Pose2D::identity())];
        assert!(associate(&far, &r).is_empty());
    }

    #[test]
    fn label_growth() {
        let l = MarkerLabel {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(0.05, 0.02),
            grow_margin: 0.1,
            normal: None,
        };
        assert!(l.contains(&Point2::new(-0.09, 0.11)));
        assert!(!l.contains(&Point2::new(-0.11, 0.0)));
    }

    fn scan_from(intensities: Vec<f64>) -> LaserScan {
        let n = intensities.len();
        let spec = Arc::new(LidarSpec {
            name: "strip".into(),
            frequency: 10.0,
            fov: (n - 1) as f64 * 0.01,
            angular_resolution: 0.01,
            min_intensity: 100.0,
            point_tolerance: 1,
            max_usable_range: 10.0,
        });
        LaserScan::new(0.0, 0.0, vec![2.0; n], intensities, spec).unwrap()
    }

    #[test]
    fn threshold_runs() {
        assert!(threshold_detector(&scan_from(vec![1.0; 8]), 100.0).is_empty());
        let s = scan_from(vec![1.0, 200.0, 300.0, 250.0, 1.0, 1.0]);
        let d = threshold_detector(&s, 100.0);
        assert_eq!(d.len(), 1);
        let expected = (s.point(1).unwrap() + s.point(2).unwrap() + s.point(3).unwrap()) / 3.0;
        assert!((d[0].center - expected).norm() < 1e-12);
        assert!(d[0].normal.is_none());
        let s = scan_from(vec![200.0, 200.0, 1.0, 200.0]);
        assert_eq!(threshold_detector(&s, 100.0).len(), 2);
    }

    #[test]
    fn threshold_run_ends_at_depth_jump() {
        let bright = vec![200.0; 4];
        let near = LaserScan::new(
            0.0,
            0.0,
            vec![1.0, 1.0, 2.0, 2.0],
            bright.clone(),
            scan_from(bright.clone()).spec().clone(),
        )
        .unwrap();
        let d = threshold_detector(&near, 100.0);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].start, d[0].end, d[1].start, d[1].end), (0, 1, 2, 3));
    }

    #[test]
    fn empty_detection_counts() {
        let s = scan_from(vec![1.0; 4]);
        let label = MarkerLabel {
            min: Point2::new(50.0, 50.0),
            max: Point2::new(51.0, 51.0),
            grow_margin: 0.1,
            normal: None,
        };
        let p = evaluate_detector(
            &[s],
            &[Pose2D::identity()],
            &[vec![]],
            &[label],
            None,
            100.0,
        );
        assert_eq!((p.tp, p.fp, p.fn_, p.hits), (0, 0, 0, 0));
    }

    #[test]
    fn sweep_parsing() {
        let v = parse_sweep("100:10000:20").unwrap();
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], 100.0);
        assert_eq!(v[19], 10000.0);
        assert!(parse_sweep("1:2").is_err());
        assert!(parse_sweep("5:1:3").is_err());
    }
}

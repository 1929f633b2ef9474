//! Two-layer NDT matching: regular points and marker points are matched
//! against separate grids, and the marker layer is weighted.

use std::f64::consts::TAU;

use crate::detector::MarkerDetection;
use crate::geometry::{Point2, Pose2D};
use crate::ndt::{
    accumulate_score, build_grid, maximize, GridSet, MatchOptions, MatchResult, Objective,
    ScoreEval,
};
use crate::scan::ScanPoint;

/// Points synthesized on the circle around every marker point.
pub const CIRCLE_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGrids {
    pub regular: GridSet,
    pub marker: GridSet,
    pub marker_weight: f64,
    pub synth_radius: f64,
}

impl LayeredGrids {
    pub fn build(
        regular: &[Point2],
        marker: &[Point2],
        cell_size: f64,
        marker_weight: f64,
        synth_radius: f64,
    ) -> Self {
        Self {
            regular: build_grid(regular, cell_size),
            marker: build_marker_layer(marker, synth_radius, cell_size),
            marker_weight,
            synth_radius,
        }
    }
}

/// Partitions scan points by whether their beam lies in a detection's support.
pub fn split_points(
    points: &[ScanPoint],
    detections: &[MarkerDetection],
) -> (Vec<Point2>, Vec<Point2>) {
    let mut regular = Vec::with_capacity(points.len());
    let mut marker = Vec::new();
    for p in points {
        if detections.iter().any(|d| d.support().contains(&p.beam)) {
            marker.push(p.point);
        } else {
            regular.push(p.point);
        }
    }
    (regular, marker)
}

/// Builds the marker layer; every marker point is accompanied by
/// [`CIRCLE_POINTS`] points on a circle of radius `radius` so that even an
/// isolated marker point fills a cell.
pub fn build_marker_layer(marker_points: &[Point2], radius: f64, cell_size: f64) -> GridSet {
    assert!(radius > 0.0, "synthesis radius must be positive");
    let mut cloud = Vec::with_capacity(marker_points.len() * (CIRCLE_POINTS + 1));
    for p in marker_points {
        cloud.push(*p);
        for k in 0..CIRCLE_POINTS {
            let (s, c) = (TAU * k as f64 / CIRCLE_POINTS as f64).sin_cos();
            cloud.push(p + Point2::new(radius * c, radius * s));
        }
    }
    build_grid(&cloud, cell_size)
}

/// Weighted sum of the regular-layer and marker-layer NDT scores.
pub struct LayeredObjective<'a> {
    pub grids: &'a LayeredGrids,
    pub regular: &'a [Point2],
    pub marker: &'a [Point2],
}

impl Objective for LayeredObjective<'_> {
    fn evaluate(&self, pose: &Pose2D) -> ScoreEval {
        let mut eval = ScoreEval::zero();
        accumulate_score(&self.grids.regular, self.regular, pose, 1.0, &mut eval);
        if !self.marker.is_empty() {
            accumulate_score(
                &self.grids.marker,
                self.marker,
                pose,
                self.grids.marker_weight,
                &mut eval,
            );
        }
        eval
    }
}

pub fn layered_score(
    grids: &LayeredGrids,
    regular: &[Point2],
    marker: &[Point2],
    pose: &Pose2D,
) -> ScoreEval {
    LayeredObjective {
        grids,
        regular,
        marker,
    }
    .evaluate(pose)
}

pub fn match_layered(
    grids: &LayeredGrids,
    regular: &[Point2],
    marker: &[Point2],
    initial: Pose2D,
    opts: &MatchOptions,
) -> MatchResult {
    maximize(
        &LayeredObjective {
            grids,
            regular,
            marker,
        },
        initial,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndt::{match_scan, score};

    fn sp(x: f64, y: f64, beam: usize) -> ScanPoint {
        ScanPoint {
            point: Point2::new(x, y),
            intensity: 0.0,
            beam,
        }
    }

    fn det(start: usize, end: usize) -> MarkerDetection {
        MarkerDetection {
            center: Point2::zeros(),
            normal: None,
            start,
            end,
            point_count: end - start + 1,
            incidence: 0.0,
            mean_intensity: 0.0,
        }
    }

    #[test]
    fn split_without_detections() {
        let pts: Vec<_> = (0..20).map(|i| sp(i as f64, 1.0, i)).collect();
        let (r, m) = split_points(&pts, &[]);
        assert_eq!((r.len(), m.len()), (20, 0));
    }

    #[test]
    fn split_support_range() {
        let pts: Vec<_> = (0..20).map(|i| sp(i as f64, 1.0, i)).collect();
        let (r, m) = split_points(&pts, &[det(10, 14)]);
        assert_eq!(m.len(), 5);
        assert_eq!(r.len() + m.len(), 20);
        // Overlapping supports are merged.
        let (r, m) = split_points(&pts, &[det(10, 14), det(12, 16)]);
        assert_eq!((r.len(), m.len()), (13, 7));
    }

    #[test]
    fn single_marker_point_cell() {
        let p = Point2::new(0.2, 0.3);
        let r = 0.05;
        let layer = build_marker_layer(&[p], r, 0.5);
        let cell = layer.grids[0].cell((0, 0)).expect("cell exists");
        assert!((cell.mean - p).norm() < 1e-12);
        assert_eq!(cell.point_count, 9);
        // Closed form: sum of squared offsets along x over 8 circle points is 4 r²,
        // divided by n - 1 = 8.
        let expected = r * r / 2.0;
        assert!((cell.covariance[(0, 0)] - expected).abs() < 1e-15);
        assert!((cell.covariance[(1, 1)] - expected).abs() < 1e-15);
        assert!(cell.covariance[(0, 1)].abs() < 1e-15);

        // Direct second-moment computation as an independent check.
        let mut sxx = 0.0;
        for k in 0..8 {
            let dx = r * (TAU * k as f64 / 8.0).cos();
            sxx += dx * dx;
        }
        assert!((sxx / 8.0 - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_marker_layer() {
        assert!(build_marker_layer(&[], 0.05, 0.5).is_empty());
    }

    fn toy_cloud() -> Vec<Point2> {
        let mut v = Vec::new();
        for i in 0..60 {
            let t = i as f64 * 0.05;
            v.push(Point2::new(t, 0.02 * (3.0 * t).sin()));
            v.push(Point2::new(0.01 * (5.0 * t).cos(), t));
            v.push(Point2::new(3.0 - 0.3 * t, 3.0));
        }
        v
    }

    #[test]
    fn zero_weight_reduces_to_plain() {
        let cloud = toy_cloud();
        let grids = LayeredGrids::build(&cloud, &[], 0.5, 0.0, 0.05);
        let query: Vec<_> = cloud.iter().step_by(2).copied().collect();
        let init = Pose2D::new(0.05, -0.04, 0.02);
        let opts = MatchOptions::default();
        let a = match_layered(&grids, &query, &[], init, &opts);
        let b = match_scan(&grids.regular, &query, init, &opts);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn layers_do_not_mix() {
        // A marker point sitting inside a dense regular cell gets no credit
        // from the regular layer.
        let cloud = toy_cloud();
        let grids = LayeredGrids::build(&cloud, &[], 0.5, 10.0, 0.05);
        let q = cloud[10];
        let e = layered_score(&grids, &[], &[q], &Pose2D::identity());
        assert!(grids.regular.associates(&q));
        assert_eq!(e.score, 0.0);
        assert_eq!(e.associated_points, 0);
    }

    #[test]
    fn decomposes_into_layers() {
        let cloud = toy_cloud();
        let markers = [Point2::new(1.0, 0.0), Point2::new(0.0, 2.0)];
        let grids = LayeredGrids::build(&cloud, &markers, 0.5, 7.5, 0.05);
        let pose = Pose2D::new(0.01, 0.02, 0.01);
        let q: Vec<_> = cloud.iter().step_by(3).copied().collect();
        let total = layered_score(&grids, &q, &markers, &pose);
        let plain = score(&grids.regular, &q, &pose);
        let marker = score(&grids.marker, &markers, &pose);
        assert!((total.score - (plain.score + 7.5 * marker.score)).abs() < 1e-12);
    }
}

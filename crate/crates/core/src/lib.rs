//! 2D lidar odometry with retroreflective markers.
//!
//! The crate covers the whole pipeline: scan representation, marker
//! detection, NDT scan matching (plain, with a weighted marker layer, or with
//! tracked markers), the keyframe-based odometry loop, a line-segment lidar
//! simulator and trajectory/detector evaluation.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod layered;
pub mod ndt;
pub mod odometry;
pub mod scan;
pub mod sim;
pub mod tracking;

pub use detector::{
    detect, expected_point_count, fit_line, CenterMode, DetectorError, DetectorParams, LineFit,
    MarkerDetection,
};
pub use eval::{
    align_trajectories, compute_ate, evaluate_detector, labels_from_world, sweep_detector,
    threshold_detector, DetectorKind, Eligibility, EvalError, MarkerLabel, PrPoint, PrReport,
    TimedPose, TrajectoryReport,
};
pub use experiment::{
    reproduce, run_mode, simulate_builtin, Dataset, ExperimentError, ModeRun, ReproduceOptions,
    Reproduction, RunSummary,
};
pub use geometry::{normalize_angle, Point2, Pose2D};
pub use layered::{match_layered, split_points, LayeredGrids};
pub use ndt::{build_grid, match_scan, GridSet, MatchOptions, MatchResult, NdtGrid, ScoreEval};
pub use odometry::{
    run, Keyframe, KeyframeCriteria, LocalMap, Mode, Odometry, OdometryConfig, OdometryError,
    OdometryOutput, TrajectoryEntry,
};
pub use scan::{LaserScan, LidarSpec, ScanError, ScanPoint};
pub use sim::{
    builtin_route, builtin_world, builtin_worlds, simulate_scan, simulate_trajectory, SimConfig,
    SimError, World,
};
pub use tracking::{
    cost_tracks, match_tracked, solve_assignment, update_tracks, Assignment, DuplicatePolicy,
    Track, TrackCostParams, TrackRef, Tracker, TrackerParams,
};

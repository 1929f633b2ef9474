//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::too_many_arguments, clippy::large_enum_variant)]

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reflidar::layered::LayeredObjective;
use reflidar::ndt::{NdtObjective, Objective};
use reflidar::tracking::TrackedObjective;
use reflidar::*;

pub const FD_STEP: f64 = 1e-6;

fn shifted(pose: &Pose2D, k: usize, h: f64) -> Pose2D {
    let mut p = *pose;
    match k {
        0 => p.x += h,
        1 => p.y += h,
        _ => p.theta += h,
    }
    p
}

/// Central-difference gradient of the score and Hessian (from the analytic
/// gradient), with the worst relative error of each against the analytic
/// values. Errors are measured in the max norm and relative to the larger of
/// the finite-difference norm and `floor`.
pub fn derivative_errors<O: Objective + ?Sized>(obj: &O, pose: &Pose2D, floor: f64) -> (f64, f64) {
    let e = obj.evaluate(pose);
    let mut g = Vector3::zeros();
    let mut h = Matrix3::zeros();
    for k in 0..3 {
        let plus = obj.evaluate(&shifted(pose, k, FD_STEP));
        let minus = obj.evaluate(&shifted(pose, k, -FD_STEP));
        g[k] = (plus.score - minus.score) / (2.0 * FD_STEP);
        h.set_column(k, &((plus.gradient - minus.gradient) / (2.0 * FD_STEP)));
    }
    let ge = (e.gradient - g).amax() / g.amax().max(floor);
    let he = (e.hessian - h).amax() / h.amax().max(floor);
    (ge, he)
}

/// True when no point changes cell in any grid across the finite-difference
/// stencil around `pose`; the score is smooth there.
pub fn stencil_is_smooth(grids: &GridSet, points: &[Point2], pose: &Pose2D) -> bool {
    let keys = |p: &Pose2D| -> Vec<(i64, i64)> {
        points
            .iter()
            .flat_map(|q| {
                let t = p.transform_point(q);
                grids.grids.iter().map(move |g| g.key(&t))
            })
            .collect()
    };
    let center = keys(pose);
    (0..3).all(|k| {
        // A margin of ten steps keeps every evaluation on the same side.
        keys(&shifted(pose, k, 10.0 * FD_STEP)) == center
            && keys(&shifted(pose, k, -10.0 * FD_STEP)) == center
    })
}

pub fn random_room_pose(rng: &mut ChaCha8Rng) -> Pose2D {
    Pose2D::new(
        rng.random_range(1.2..9.5),
        rng.random_range(1.2..6.6),
        rng.random_range(-3.0..3.0),
    )
}

pub fn small_offset(rng: &mut ChaCha8Rng, t: f64, r: f64) -> Pose2D {
    Pose2D::new(
        rng.random_range(-t..t),
        rng.random_range(-t..t),
        rng.random_range(-r..r),
    )
}

/// A reference scan, a current scan taken nearby, and the true pose of the
/// current scan in the reference frame.
pub struct ScanPair {
    pub reference: Vec<Point2>,
    pub current: Vec<Point2>,
    pub reference_scan: LaserScan,
    pub current_scan: LaserScan,
    pub relative: Pose2D,
}

pub fn scan_pair(world: &World, a: Pose2D, b: Pose2D, spec: &LidarSpec, seed: u64) -> ScanPair {
    let cfg = SimConfig::new(spec.clone(), seed);
    let reference_scan = simulate_scan(world, &a, &cfg);
    let current_scan = sim::simulate_scan_at(world, &b, &cfg, 1, 0.02);
    let pts = |s: &LaserScan| s.to_cartesian().iter().map(|p| p.point).collect::<Vec<_>>();
    ScanPair {
        reference: pts(&reference_scan),
        current: pts(&current_scan),
        reference_scan,
        current_scan,
        relative: a.between(&b),
    }
}

pub enum FdCase {
    Plain {
        grids: GridSet,
        points: Vec<Point2>,
    },
    Layered {
        grids: LayeredGrids,
        regular: Vec<Point2>,
        marker: Vec<Point2>,
    },
    Tracked {
        grids: GridSet,
        points: Vec<Point2>,
        current: Vec<TrackRef>,
        reference: Vec<TrackRef>,
        params: TrackCostParams,
    },
}

impl FdCase {
    pub fn objective(&self) -> Box<dyn Objective + '_> {
        match self {
            FdCase::Plain { grids, points } => Box::new(NdtObjective { grids, points }),
            FdCase::Layered {
                grids,
                regular,
                marker,
            } => Box::new(LayeredObjective {
                grids,
                regular,
                marker,
            }),
            FdCase::Tracked {
                grids,
                points,
                current,
                reference,
                params,
            } => Box::new(TrackedObjective {
                grids,
                points,
                current,
                reference,
                params,
            }),
        }
    }

    pub fn smooth_at(&self, pose: &Pose2D) -> bool {
        match self {
            FdCase::Plain { grids, points } | FdCase::Tracked { grids, points, .. } => {
                stencil_is_smooth(grids, points, pose)
            }
            FdCase::Layered {
                grids,
                regular,
                marker,
            } => {
                stencil_is_smooth(&grids.regular, regular, pose)
                    && stencil_is_smooth(&grids.marker, marker, pose)
            }
        }
    }
}

/// Splits a point list by membership in a few random beam windows.
fn random_split(points: &[Point2], rng: &mut ChaCha8Rng) -> (Vec<Point2>, Vec<Point2>) {
    let n = points.len();
    let windows: Vec<(usize, usize)> = (0..rng.random_range(1..4))
        .map(|_| {
            let s = rng.random_range(0..n);
            (s, (s + rng.random_range(2..12)).min(n))
        })
        .collect();
    let mut regular = Vec::new();
    let mut marker = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if windows.iter().any(|&(s, e)| i >= s && i < e) {
            marker.push(*p);
        } else {
            regular.push(*p);
        }
    }
    (regular, marker)
}

/// Random objective of the given kind (0 plain, 1 layered, 2 tracked) and an
/// evaluation pose near the true alignment.
pub fn random_fd_case(kind: usize, world: &World, rng: &mut ChaCha8Rng) -> (FdCase, Pose2D) {
    let a = random_room_pose(rng);
    let b = a.compose(&small_offset(rng, 0.3, 0.1));
    let pair = scan_pair(world, a, b, &LidarSpec::lms151(), rng.random());
    let pose = pair.relative.compose(&small_offset(rng, 0.1, 0.05));
    let case = match kind {
        0 => FdCase::Plain {
            grids: build_grid(&pair.reference, 0.5),
            points: pair.current,
        },
        1 => {
            let (rr, rm) = random_split(&pair.reference, rng);
            let (cr, cm) = random_split(&pair.current, rng);
            FdCase::Layered {
                grids: LayeredGrids::build(&rr, &rm, 0.5, rng.random_range(1.0..20.0), 0.05),
                regular: cr,
                marker: cm,
            }
        }
        _ => {
            let n = rng.random_range(1..6);
            let current: Vec<TrackRef> = (0..n)
                .map(|i| TrackRef {
                    id: i as u64,
                    position: Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                    normal_angle: Some(rng.random_range(-3.0..3.0)),
                })
                .collect();
            // Reference ids are shifted so only some of them are shared.
            let reference: Vec<TrackRef> = current
                .iter()
                .map(|t| TrackRef {
                    id: t.id + rng.random_range(0..2),
                    position: pair.relative.transform_point(&t.position)
                        + Point2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)),
                    normal_angle: t
                        .normal_angle
                        .map(|a| a + pair.relative.theta + rng.random_range(-0.05..0.05)),
                })
                .collect();
            FdCase::Tracked {
                grids: build_grid(&pair.reference, 0.5),
                points: pair.current,
                current,
                reference,
                params: TrackCostParams {
                    weight: rng.random_range(1.0..3e4),
                    use_orientation: rng.random_bool(0.5),
                    orientation_weight: rng.random_range(0.1..2.0),
                },
            }
        }
    };
    (case, pose)
}

/// Exhaustive minimum of the assignment cost over all partial matchings that
/// respect the gate.
pub fn brute_force_assignment(costs: &DMatrix<f64>, c_d: f64, c_t: f64, gate: f64) -> f64 {
    fn go(
        i: usize,
        used: &mut Vec<bool>,
        costs: &DMatrix<f64>,
        gate_sq: f64,
        acc: f64,
        pairs: usize,
        c: (f64, f64),
        best: &mut f64,
    ) {
        if i == costs.nrows() {
            let total =
                acc + (costs.nrows() - pairs) as f64 * c.0 + (costs.ncols() - pairs) as f64 * c.1;
            if total < *best {
                *best = total;
            }
            return;
        }
        go(i + 1, used, costs, gate_sq, acc, pairs, c, best);
        for j in 0..costs.ncols() {
            if !used[j] && costs[(i, j)] <= gate_sq {
                used[j] = true;
                go(
                    i + 1,
                    used,
                    costs,
                    gate_sq,
                    acc + costs[(i, j)],
                    pairs + 1,
                    c,
                    best,
                );
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(
        0,
        &mut vec![false; costs.ncols()],
        costs,
        gate * gate,
        0.0,
        0,
        (c_d, c_t),
        &mut best,
    );
    best
}

/// Random assignment instance: squared distances between points scattered in
/// a 10 cm square, so the 5 cm gate bites in a good share of pairs.
pub fn random_assignment(rng: &mut ChaCha8Rng, nd: usize, nt: usize) -> DMatrix<f64> {
    let mut pt = || Point2::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.1));
    let dets: Vec<Point2> = (0..nd).map(|_| pt()).collect();
    let tracks: Vec<Point2> = (0..nt).map(|_| pt()).collect();
    DMatrix::from_fn(nd, nt, |i, j| (dets[i] - tracks[j]).norm_squared())
}

/// Ray-enumeration count of the beams returned by a marker of width `width`
/// centred at bearing `bearing` and distance `range`, turned by `incidence`
/// away from facing the sensor. A beam counts when its ray crosses the marker
/// segment, or when it misses but its divergence cone (half-angle
/// `divergence`) still reaches an endpoint.
pub fn ray_enumeration_count(
    range: f64,
    bearing: f64,
    incidence: f64,
    width: f64,
    resolution: f64,
    start: f64,
    beams: usize,
    divergence: f64,
) -> usize {
    let center = Point2::new(range * bearing.cos(), range * bearing.sin());
    let facing = bearing + std::f64::consts::PI;
    let normal_angle = facing + incidence;
    let along = Point2::new(-normal_angle.sin(), normal_angle.cos());
    let a = center - along * (0.5 * width);
    let b = center + along * (0.5 * width);
    let ba = a.y.atan2(a.x);
    let bb = b.y.atan2(b.x);
    let mut count = 0;
    for k in 0..beams {
        let phi = start + k as f64 * resolution;
        let dir = Point2::new(phi.cos(), phi.sin());
        // Solve t*dir = a + s*(b - a) for t > 0 and s in [0, 1].
        let e = b - a;
        let den = dir.x * (-e.y) - dir.y * (-e.x);
        let hits = if den.abs() > 1e-15 {
            let t = (a.x * (-e.y) - a.y * (-e.x)) / den;
            let s = (dir.x * a.y - dir.y * a.x) / den;
            t > 0.0 && (0.0..=1.0).contains(&s)
        } else {
            false
        };
        let gap = normalize_angle(phi - ba)
            .abs()
            .min(normalize_angle(phi - bb).abs());
        if hits || gap < divergence {
            count += 1;
        }
    }
    count
}

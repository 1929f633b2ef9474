//! Normal distributions transform: Gaussian cell grids over 2D points and
//! Newton ascent of the NDT score over (x, y, theta).
//!
//! Every point cloud is represented by four grids whose lattices are shifted
//! by half a cell along x, y and both. A transformed query point is associated
//! with the cell that contains it in each of the four grids, and each
//! association contributes `exp(-0.5 * d' Σ^-1 d)` to the score.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};

use crate::geometry::{sym2_eigen, Point2, Pose2D};

/// Lattice offsets of the four grids, in cells.
pub const GRID_SHIFTS: [(f64, f64); 4] = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)];

/// Smallest-to-largest eigenvalue ratio enforced on cell covariances.
pub const EIGEN_RATIO_FLOOR: f64 = 1e-3;
/// Absolute eigenvalue floor on cell covariances, m².
pub const EIGEN_ABS_FLOOR: f64 = 1e-6;
pub const MIN_CELL_POINTS: usize = 3;

/// Multiplicative hash for integer cell keys (deterministic, fast).
#[derive(Default, Clone, Copy)]
pub struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.write_u64(*b as u64);
        }
    }

    fn write_i64(&mut self, i: i64) {
        self.write_u64(i as u64);
    }

    fn write_u64(&mut self, i: u64) {
        self.0 = (self.0.rotate_left(5) ^ i).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtCell {
    pub mean: Point2,
    pub covariance: Matrix2<f64>,
    pub inv_covariance: Matrix2<f64>,
    pub point_count: usize,
}

impl NdtCell {
    fn from_points(points: &[Point2]) -> Option<Self> {
        if points.len() < MIN_CELL_POINTS {
            return None;
        }
        let n = points.len() as f64;
        let mean = points.iter().sum::<Point2>() / n;
        let mut cov = Matrix2::zeros();
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= n - 1.0;
        let (small, large, v_small, v_large) = sym2_eigen(&cov);
        let floor = (EIGEN_RATIO_FLOOR * large).max(EIGEN_ABS_FLOOR);
        let small = small.max(floor);
        let large = large.max(floor);
        let covariance =
            v_small * v_small.transpose() * small + v_large * v_large.transpose() * large;
        let inv_covariance =
            v_small * v_small.transpose() / small + v_large * v_large.transpose() / large;
        Some(Self {
            mean,
            covariance,
            inv_covariance,
            point_count: points.len(),
        })
    }

    pub fn mahalanobis_sq(&self, p: &Point2) -> f64 {
        let d = p - self.mean;
        d.dot(&(self.inv_covariance * d))
    }
}

/// One lattice of Gaussian cells.
#[derive(Debug, Clone)]
pub struct NdtGrid {
    cell_size: f64,
    shift: usize,
    cells: Vec<((i64, i64), NdtCell)>,
    lookup: Lookup,
}

/// Key to cell index. Compact grids use a dense table.
#[derive(Debug, Clone)]
enum Lookup {
    Dense {
        origin: (i64, i64),
        width: usize,
        height: usize,
        slots: Vec<u32>,
    },
    Sparse(HashMap<(i64, i64), u32, BuildHasherDefault<CellHasher>>),
}

const EMPTY_SLOT: u32 = u32::MAX;
/// Largest bounding box, in cells, indexed densely.
const MAX_DENSE_SLOTS: usize = 1 << 20;

impl Lookup {
    fn new(cells: &[((i64, i64), NdtCell)]) -> Self {
        let Some(&((x0, y0), _)) = cells.first() else {
            return Lookup::Sparse(HashMap::default());
        };
        let (mut lo, mut hi) = ((x0, y0), (x0, y0));
        for ((kx, ky), _) in cells {
            lo = (lo.0.min(*kx), lo.1.min(*ky));
            hi = (hi.0.max(*kx), hi.1.max(*ky));
        }
        let width = (hi.0 - lo.0) as u64 + 1;
        let height = (hi.1 - lo.1) as u64 + 1;
        if width.saturating_mul(height) <= MAX_DENSE_SLOTS as u64 {
            let (width, height) = (width as usize, height as usize);
            let mut slots = vec![EMPTY_SLOT; width * height];
            for (i, ((kx, ky), _)) in cells.iter().enumerate() {
                slots[(ky - lo.1) as usize * width + (kx - lo.0) as usize] = i as u32;
            }
            Lookup::Dense {
                origin: lo,
                width,
                height,
                slots,
            }
        } else {
            Lookup::Sparse(
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, (k, _))| (*k, i as u32))
                    .collect(),
            )
        }
    }

    #[inline]
    fn get(&self, key: (i64, i64)) -> Option<usize> {
        match self {
            Lookup::Dense {
                origin,
                width,
                height,
                slots,
            } => {
                let dx = key.0.wrapping_sub(origin.0);
                let dy = key.1.wrapping_sub(origin.1);
                if dx < 0 || dy < 0 || dx as usize >= *width || dy as usize >= *height {
                    return None;
                }
                let slot = slots[dy as usize * width + dx as usize];
                (slot != EMPTY_SLOT).then_some(slot as usize)
            }
            Lookup::Sparse(map) => map.get(&key).map(|&i| i as usize),
        }
    }
}

impl NdtGrid {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Index into [`GRID_SHIFTS`].
    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn key(&self, p: &Point2) -> (i64, i64) {
        let (sx, sy) = GRID_SHIFTS[self.shift];
        (
            (p.x / self.cell_size - sx).floor() as i64,
            (p.y / self.cell_size - sy).floor() as i64,
        )
    }

    #[inline]
    pub fn cell_at(&self, p: &Point2) -> Option<&NdtCell> {
        self.cell(self.key(p))
    }

    #[inline]
    pub fn cell(&self, key: (i64, i64)) -> Option<&NdtCell> {
        self.lookup.get(key).map(|i| &self.cells[i].1)
    }

    /// Cells sorted by key.
    pub fn sorted_cells(&self) -> Vec<((i64, i64), &NdtCell)> {
        self.cells.iter().map(|(k, c)| (*k, c)).collect()
    }
}

/// The four shifted grids built from one point set.
#[derive(Debug, Clone)]
pub struct GridSet {
    pub grids: [NdtGrid; 4],
}

impl GridSet {
    pub fn empty(cell_size: f64) -> Self {
        build_grid(&[], cell_size)
    }

    pub fn cell_size(&self) -> f64 {
        self.grids[0].cell_size
    }

    pub fn is_empty(&self) -> bool {
        self.grids.iter().all(|g| g.is_empty())
    }

    pub fn total_cells(&self) -> usize {
        self.grids.iter().map(|g| g.len()).sum()
    }

    /// Whether `p` falls into a valid cell of at least one grid.
    pub fn associates(&self, p: &Point2) -> bool {
        self.grids.iter().any(|g| g.cell_at(p).is_some())
    }

    /// Text dump, one cell per line:
    /// `grid kx ky mean_x mean_y cov_xx cov_xy cov_yy count`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (gi, g) in self.grids.iter().enumerate() {
            for ((kx, ky), c) in g.sorted_cells() {
                let _ = writeln!(
                    out,
                    "{gi} {kx} {ky} {} {} {} {} {} {}",
                    c.mean.x,
                    c.mean.y,
                    c.covariance[(0, 0)],
                    c.covariance[(0, 1)],
                    c.covariance[(1, 1)],
                    c.point_count
                );
            }
        }
        out
    }
}

impl PartialEq for GridSet {
    fn eq(&self, other: &Self) -> bool {
        self.grids.iter().zip(&other.grids).all(|(a, b)| {
            a.cell_size == b.cell_size && a.shift == b.shift && a.sorted_cells() == b.sorted_cells()
        })
    }
}

pub fn build_grid(points: &[Point2], cell_size: f64) -> GridSet {
    assert!(cell_size > 0.0, "cell size must be positive");
    let build = |shift: usize| {
        let mut grid = NdtGrid {
            cell_size,
            shift,
            cells: Vec::new(),
            lookup: Lookup::Sparse(HashMap::default()),
        };
        let mut buckets: HashMap<(i64, i64), Vec<Point2>, BuildHasherDefault<CellHasher>> =
            HashMap::default();
        for p in points {
            buckets.entry(grid.key(p)).or_default().push(*p);
        }
        let mut keys: Vec<(i64, i64)> = buckets.keys().copied().collect();
        keys.sort_unstable();
        grid.cells = keys
            .into_iter()
            .filter_map(|k| NdtCell::from_points(&buckets[&k]).map(|c| (k, c)))
            .collect();
        grid.lookup = Lookup::new(&grid.cells);
        grid
    };
    GridSet {
        grids: [build(0), build(1), build(2), build(3)],
    }
}

/// Score, analytic derivatives and association statistics at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub score: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
    /// Query points associated with a cell in at least one grid.
    pub associated_points: usize,
    pub total_points: usize,
    /// Point-cell pairs contributing to the score.
    pub associations: usize,
}

impl ScoreEval {
    pub fn zero() -> Self {
        Self {
            score: 0.0,
            gradient: Vector3::zeros(),
            hessian: Matrix3::zeros(),
            associated_points: 0,
            total_points: 0,
            associations: 0,
        }
    }

    pub fn associated_ratio(&self) -> f64 {
        if self.total_points == 0 {
            0.0
        } else {
            self.associated_points as f64 / self.total_points as f64
        }
    }
}

/// Adds `weight` times the NDT score of `points` under `grids` at `pose`.
pub fn accumulate_score(
    grids: &GridSet,
    points: &[Point2],
    pose: &Pose2D,
    weight: f64,
    eval: &mut ScoreEval,
) {
    let (s, c) = pose.theta.sin_cos();
    let mut g = Vector3::zeros();
    let mut h = Matrix3::zeros();
    let mut score = 0.0;
    for p in points {
        // Rotated point and its derivative with respect to theta.
        let rp = Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
        let jt = Point2::new(-rp.y, rp.x);
        let tp = Point2::new(rp.x + pose.x, rp.y + pose.y);
        let mut hit = false;
        for grid in &grids.grids {
            let Some(cell) = grid.cell_at(&tp) else {
                continue;
            };
            hit = true;
            eval.associations += 1;
            let ci = &cell.inv_covariance;
            let d = tp - cell.mean;
            let cd = ci * d;
            let m = d.dot(&cd);
            let e = weight * (-0.5 * m).exp();
            let cjt = ci * jt;
            let gx = cd.x;
            let gy = cd.y;
            let gt = cd.dot(&jt);
            score += e;
            g.x -= e * gx;
            g.y -= e * gy;
            g.z -= e * gt;
            h[(0, 0)] += e * (gx * gx - ci[(0, 0)]);
            h[(0, 1)] += e * (gx * gy - ci[(0, 1)]);
            h[(1, 1)] += e * (gy * gy - ci[(1, 1)]);
            h[(0, 2)] += e * (gx * gt - cjt.x);
            h[(1, 2)] += e * (gy * gt - cjt.y);
            h[(2, 2)] += e * (gt * gt - jt.dot(&cjt) + cd.dot(&rp));
        }
        if hit {
            eval.associated_points += 1;
        }
    }
    h[(1, 0)] = h[(0, 1)];
    h[(2, 0)] = h[(0, 2)];
    h[(2, 1)] = h[(1, 2)];
    eval.score += score;
    eval.gradient += g;
    eval.hessian += h;
    eval.total_points += points.len();
}

/// Plain NDT score of `points` against `grids` at `pose`.
pub fn score(grids: &GridSet, points: &[Point2], pose: &Pose2D) -> ScoreEval {
    let mut eval = ScoreEval::zero();
    accumulate_score(grids, points, pose, 1.0, &mut eval);
    eval
}

/// A scalar objective over SE(2) with analytic first and second derivatives.
pub trait Objective {
    fn evaluate(&self, pose: &Pose2D) -> ScoreEval;
}

/// Plain single-layer NDT objective.
pub struct NdtObjective<'a> {
    pub grids: &'a GridSet,
    pub points: &'a [Point2],
}

impl Objective for NdtObjective<'_> {
    fn evaluate(&self, pose: &Pose2D) -> ScoreEval {
        score(self.grids, self.points, pose)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MatchOptions {
    pub max_iterations: usize,
    /// Parameter update norm below which the ascent stops.
    pub tolerance: f64,
    pub max_halvings: usize,
    pub max_step_translation: f64,
    pub max_step_rotation: f64,
    /// Curvatures of the negated Hessian are floored at this fraction of the largest one.
    pub curvature_floor: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            max_halvings: 10,
            max_step_translation: 0.5,
            max_step_rotation: 0.3,
            curvature_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub pose: Pose2D,
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
    pub associated_ratio: f64,
    pub associations: usize,
    /// Score at the initial pose followed by every accepted iterate.
    pub score_history: Vec<f64>,
}

impl MatchResult {
    /// Score divided by the number of point-cell associations.
    pub fn normalized_score(&self) -> f64 {
        if self.associations == 0 {
            0.0
        } else {
            self.score / self.associations as f64
        }
    }

    /// Inverse of the negated Hessian with eigenvalues floored, scaled by `scale`.
    pub fn covariance(&self, scale: f64) -> Matrix3<f64> {
        let m = -self.hessian;
        let eig = SymmetricEigen::new(m);
        let max = eig.eigenvalues.max().max(1e-12);
        let mut inv = Matrix3::zeros();
        for i in 0..3 {
            let l = eig.eigenvalues[i].max(1e-9 * max).max(1e-12);
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / l;
        }
        inv * scale
    }
}

fn newton_step(eval: &ScoreEval, opts: &MatchOptions) -> Vector3<f64> {
    // Directions of positive score curvature are stepped along with their
    // curvature magnitude instead of being dropped, so a start on the convex
    // flank of the cell distributions still moves uphill.
    let eig = SymmetricEigen::new(-eval.hessian);
    let max = eig.eigenvalues.amax();
    if !(max > 0.0) || !max.is_finite() {
        return Vector3::zeros();
    }
    let floor = opts.curvature_floor * max;
    let mut step = Vector3::zeros();
    for i in 0..3 {
        let l = eig.eigenvalues[i].abs().max(floor);
        let v = eig.eigenvectors.column(i);
        step += v * (v.dot(&eval.gradient) / l);
    }
    let t = step.x.hypot(step.y);
    let mut scale: f64 = 1.0;
    if t > opts.max_step_translation {
        scale = scale.min(opts.max_step_translation / t);
    }
    if step.z.abs() > opts.max_step_rotation {
        scale = scale.min(opts.max_step_rotation / step.z.abs());
    }
    step * scale
}

fn offset(pose: &Pose2D, step: &Vector3<f64>, t: f64) -> Pose2D {
    Pose2D::new(
        pose.x + t * step.x,
        pose.y + t * step.y,
        pose.theta + t * step.z,
    )
}

/// Newton ascent with step halving; returns the best pose seen.
pub fn maximize<O: Objective + ?Sized>(
    objective: &O,
    initial: Pose2D,
    opts: &MatchOptions,
) -> MatchResult {
    let mut pose = initial;
    let mut eval = objective.evaluate(&pose);
    let mut history = vec![eval.score];
    let mut converged = false;
    let mut iterations = 0;

    if eval.associated_points > 0 {
        while iterations < opts.max_iterations {
            iterations += 1;
            let step = newton_step(&eval, opts);
            let mut t = 1.0;
            let mut accepted = None;
            for k in 0..=opts.max_halvings {
                if k > 0 {
                    t *= 0.5;
                }
                let cand = offset(&pose, &step, t);
                let ce = objective.evaluate(&cand);
                if ce.score >= eval.score {
                    accepted = Some((cand, ce));
                    break;
                }
            }
            let Some((cand, ce)) = accepted else {
                // Every trial lowered the score. When even the shortest one
                // is below the tolerance the pose is a maximum at that
                // resolution; otherwise the ascent is stuck.
                converged = t * step.norm() < opts.tolerance;
                break;
            };
            let moved = t * step.norm();
            pose = cand;
            eval = ce;
            history.push(eval.score);
            if moved < opts.tolerance {
                converged = true;
                break;
            }
        }
    }

    MatchResult {
        pose,
        score: eval.score,
        iterations,
        converged,
        gradient: eval.gradient,
        hessian: eval.hessian,
        associated_ratio: eval.associated_ratio(),
        associations: eval.associations,
        score_history: history,
    }
}

/// Matches `points` against `grids` starting from `initial`.
pub fn match_scan(
    grids: &GridSet,
    points: &[Point2],
    initial: Pose2D,
    opts: &MatchOptions,
) -> MatchResult {
    maximize(&NdtObjective { grids, points }, initial, opts)
}

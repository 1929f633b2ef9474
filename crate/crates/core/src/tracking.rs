//! Marker tracking: minimum-cost assignment of detections to tracks, track
//! lifecycle, and the track alignment term added to the NDT score.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::ndt::{
    accumulate_score, maximize, GridSet, MatchOptions, MatchResult, Objective, ScoreEval,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Cost of leaving a detection unassigned, m².
    pub c_d: f64,
    /// Cost of leaving a track unassigned, m².
    pub c_t: f64,
    /// Pairs farther apart than this are never assigned, m.
    pub gate: f64,
    /// Observations before a track is used for matching.
    pub n_min: u32,
    /// Consecutive misses after which a track is dropped.
    pub max_missed: u32,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            c_d: 0.05 * 0.05,
            c_t: 0.05 * 0.05,
            gate: 0.05,
            n_min: 3,
            max_missed: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// Position in the odometry frame.
    pub position: Point2,
    /// Normal direction in the odometry frame, when the detector provides one.
    pub normal_angle: Option<f64>,
    pub observations: u32,
    pub missed: u32,
    pub mature: bool,
}

/// A detection handed to the tracker, already in the odometry frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackObservation {
    pub position: Point2,
    pub normal_angle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(detection, track)` index pairs sorted by detection.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimizes `sum d_ij + (N_D - |A|) c_D + (N_T - |A|) c_T` over partial
/// matchings, where `costs[(i, j)]` is the squared distance between detection
/// `i` and track `j`. Pairs with a distance above `gate` are forbidden.
///
/// Solved exactly with the Hungarian method on the square matrix augmented by
/// one "unassigned" slot per detection and per track.
pub fn solve_assignment(costs: &DMatrix<f64>, c_d: f64, c_t: f64, gate: f64) -> Assignment {
    let nd = costs.nrows();
    let nt = costs.ncols();
    let gate_sq = gate * gate;
    if nd == 0 || nt == 0 {
        return Assignment {
            pairs: Vec::new(),
            cost: nd as f64 * c_d + nt as f64 * c_t,
        };
    }

    // Anything above the all-unassigned cost can never be part of an optimum.
    let big = 2.0 * (nd as f64 * c_d + nt as f64 * c_t) + 1.0;
    let n = nd + nt;
    let mut a = DMatrix::from_element(n, n, big);
    for i in 0..nd {
        for j in 0..nt {
            let c = costs[(i, j)];
            if c <= gate_sq {
                a[(i, j)] = c;
            }
        }
        a[(i, nt + i)] = c_d;
    }
    for j in 0..nt {
        a[(nd + j, j)] = c_t;
        for k in 0..nd {
            a[(nd + j, nt + k)] = 0.0;
        }
    }

    let row_of_col = hungarian(&a);
    let mut pairs: Vec<(usize, usize)> = (0..nt)
        .filter_map(|j| {
            let i = row_of_col[j];
            (i < nd && a[(i, j)] < big).then_some((i, j))
        })
        .collect();
    pairs.sort_unstable();
    let matched = pairs.len();
    let cost = pairs.iter().map(|&(i, j)| costs[(i, j)]).sum::<f64>()
        + (nd - matched) as f64 * c_d
        + (nt - matched) as f64 * c_t;
    Assignment { pairs, cost }
}

/// Square minimum-cost assignment; returns the row assigned to each column.
fn hungarian(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: 1-based row matched to 1-based column j; p[0] is the row being inserted.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| p[j] - 1).collect()
}

/// Stateful tracker; ids are never reused within one instance.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Associates `detections` with the current tracks and advances the
    /// lifecycle. Returns the track id each detection ended up in.
    pub fn update(&mut self, detections: &[TrackObservation]) -> Vec<u64> {
        let costs = DMatrix::from_fn(detections.len(), self.tracks.len(), |i, j| {
            (detections[i].position - self.tracks[j].position).norm_squared()
        });
        let assignment =
            solve_assignment(&costs, self.params.c_d, self.params.c_t, self.params.gate);

        let mut det_track = vec![None; detections.len()];
        let mut track_hit = vec![false; self.tracks.len()];
        for &(i, j) in &assignment.pairs {
            det_track[i] = Some(j);
            track_hit[j] = true;
            let t = &mut self.tracks[j];
            t.position = detections[i].position;
            t.normal_angle = detections[i].normal_angle;
            t.observations += 1;
            t.missed = 0;
            t.mature = t.observations >= self.params.n_min;
        }
        for (t, hit) in self.tracks.iter_mut().zip(&track_hit) {
            if !hit {
                t.missed += 1;
            }
        }

        let mut ids = vec![0; detections.len()];
        for (id, j) in ids.iter_mut().zip(&det_track) {
            if let Some(j) = j {
                *id = self.tracks[*j].id;
            }
        }
        let max_missed = self.params.max_missed;
        self.tracks.retain(|t| t.missed <= max_missed);
        for (i, d) in detections.iter().enumerate() {
            if det_track[i].is_none() {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(Track {
                    id,
                    position: d.position,
                    normal_angle: d.normal_angle,
                    observations: 1,
                    missed: 0,
                    mature: self.params.n_min <= 1,
                });
                ids[i] = id;
            }
        }
        ids
    }

    /// Moves tracks to refined odometry-frame positions, e.g. after matching.
    pub fn relocate(&mut self, id: u64, position: Point2, normal_angle: Option<f64>) {
        if let Some(t) = self.tracks.iter_mut().find(|t| t.id == id) {
            t.position = position;
            t.normal_angle = normal_angle;
        }
    }
}

/// Functional form of [`Tracker::update`] for callers that keep the id counter.
pub fn update_tracks(
    tracks: Vec<Track>,
    detections: &[TrackObservation],
    params: &TrackerParams,
    next_id: &mut u64,
) -> Vec<Track> {
    let mut tracker = Tracker {
        params: params.clone(),
        tracks,
        next_id: *next_id,
    };
    tracker.update(detections);
    *next_id = tracker.next_id;
    tracker.tracks
}

/// A track position used in matching: the current scan's tracks are in the
/// sensor frame, reference tracks in the odometry frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRef {
    pub id: u64,
    pub position: Point2,
    pub normal_angle: Option<f64>,
}

/// Which instance wins when an id appears in several keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    #[default]
    Oldest,
    Newest,
    Mean,
}

/// Merges per-keyframe track snapshots (oldest first) into one reference set
/// with unique ids, sorted by id.
pub fn resolve_reference<'a, I>(snapshots: I, policy: DuplicatePolicy) -> Vec<TrackRef>
where
    I: IntoIterator<Item = &'a [TrackRef]>,
{
    let mut by_id: BTreeMap<u64, Vec<TrackRef>> = BTreeMap::new();
    for snap in snapshots {
        for t in snap {
            by_id.entry(t.id).or_default().push(*t);
        }
    }
    by_id
        .into_values()
        .map(|all| match policy {
            DuplicatePolicy::Oldest => all[0],
            DuplicatePolicy::Newest => *all.last().expect("non-empty"),
            DuplicatePolicy::Mean => {
                let n = all.len() as f64;
                let position = all.iter().map(|t| t.position).sum::<Point2>() / n;
                let normals: Vec<f64> = all.iter().filter_map(|t| t.normal_angle).collect();
                let normal_angle = (!normals.is_empty()).then(|| {
                    let (s, c) = normals
                        .iter()
                        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
                    s.atan2(c)
                });
                TrackRef {
                    id: all[0].id,
                    position,
                    normal_angle,
                }
            }
        })
        .collect()
}

fn shared<'a>(
    current: &'a [TrackRef],
    reference: &'a [TrackRef],
) -> impl Iterator<Item = (&'a TrackRef, &'a TrackRef)> {
    current
        .iter()
        .filter_map(move |c| reference.iter().find(|r| r.id == c.id).map(|r| (c, r)))
}

/// Sum of squared distances between `pose`-transformed current tracks and the
/// reference tracks with the same id.
pub fn cost_tracks(current: &[TrackRef], reference: &[TrackRef], pose: &Pose2D) -> f64 {
    shared(current, reference)
        .map(|(c, r)| (pose.transform_point(&c.position) - r.position).norm_squared())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackCostParams {
    /// Weight of the track cost against the NDT score, per m².
    pub weight: f64,
    /// Also penalize normal-direction differences of shared tracks.
    pub use_orientation: bool,
    /// Weight of the orientation error, per rad².
    pub orientation_weight: f64,
}

impl Default for TrackCostParams {
    fn default() -> Self {
        Self {
            weight: 3e4,
            use_orientation: false,
            orientation_weight: 1.0,
        }
    }
}

/// Subtracts `weight * cost_tracks` (plus the optional orientation term) and
/// its derivatives from `eval`.
pub fn accumulate_track_cost(
    current: &[TrackRef],
    reference: &[TrackRef],
    pose: &Pose2D,
    params: &TrackCostParams,
    eval: &mut ScoreEval,
) {
    if params.weight == 0.0 {
        return;
    }
    let (s, c) = pose.theta.sin_cos();
    let w = params.weight;
    for (cur, r) in shared(current, reference) {
        let p = cur.position;
        let rp = Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
        let jt = Point2::new(-rp.y, rp.x);
        let res = rp + pose.translation() - r.position;
        eval.score -= w * res.norm_squared();
        let g = Vector3::new(2.0 * res.x, 2.0 * res.y, 2.0 * res.dot(&jt));
        eval.gradient -= w * g;
        let mut h = nalgebra::Matrix3::zeros();
        h[(0, 0)] = 2.0;
        h[(1, 1)] = 2.0;
        h[(0, 2)] = 2.0 * jt.x;
        h[(2, 0)] = 2.0 * jt.x;
        h[(1, 2)] = 2.0 * jt.y;
        h[(2, 1)] = 2.0 * jt.y;
        h[(2, 2)] = 2.0 * (jt.dot(&jt) - res.dot(&rp));
        eval.hessian -= w * h;

        if params.use_orientation {
            if let (Some(a), Some(b)) = (cur.normal_angle, r.normal_angle) {
                let e = normalize_angle(pose.theta + a - b);
                let ow = w * params.orientation_weight;
                eval.score -= ow * e * e;
                eval.gradient.z -= ow * 2.0 * e;
                eval.hessian[(2, 2)] -= ow * 2.0;
            }
        }
    }
}

/// NDT score minus the weighted track cost.
pub struct TrackedObjective<'a> {
    pub grids: &'a GridSet,
    pub points: &'a [Point2],
    pub current: &'a [TrackRef],
    pub reference: &'a [TrackRef],
    pub params: &'a TrackCostParams,
}

impl Objective for TrackedObjective<'_> {
    fn evaluate(&self, pose: &Pose2D) -> ScoreEval {
        let mut eval = ScoreEval::zero();
        accumulate_score(self.grids, self.points, pose, 1.0, &mut eval);
        accumulate_track_cost(self.current, self.reference, pose, self.params, &mut eval);
        eval
    }
}

pub fn match_tracked(
    grids: &GridSet,
    points: &[Point2],
    current: &[TrackRef],
    reference: &[TrackRef],
    params: &TrackCostParams,
    initial: Pose2D,
    opts: &MatchOptions,
) -> MatchResult {
    maximize(
        &TrackedObjective {
            grids,
            points,
            current,
            reference,
            params,
        },
        initial,
        opts,
    )
}

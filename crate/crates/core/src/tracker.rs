//! Online frame-to-frame association by minimum-cost assignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::frame::HumanEmbedding;
use crate::grid::Pose;
use crate::math;
use crate::temporal::{combined_cost, psi_he, psi_tie, CenterFields, DEFAULT_LAMBDA_HE, DEFAULT_LAMBDA_TIE};
use crate::{Error, Result};

/// Cost given to pairs that cannot be compared; always above any gate.
pub const INCOMPARABLE_COST: f64 = 1e12;

/// A one-to-one partial matching between rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs in increasing row order.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    pub fn col_of_row(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }
}

/// Minimum-cost assignment on a row-major `rows x cols` matrix, complete
/// on the smaller side.
pub fn munkres_solve(cost: &[f64], rows: usize, cols: usize) -> Result<Assignment> {
    if cost.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            found: (cost.len(), 1),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("assignment costs must be finite"));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        });
    }
    let mut pairs = if rows <= cols {
        hungarian(|r, c| cost[r * cols + c], rows, cols)
    } else {
        hungarian(|r, c| cost[c * cols + r], cols, rows)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum();
    Ok(Assignment { pairs, cost: total })
}

/// Shortest augmenting path with row and column potentials; `n <= m`.
fn hungarian(a: impl Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<(usize, usize)> {
    // 1-based, column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

/// Mean over shared joints of `exp(-d^2 / (2 s^2 kappa_j^2))`; zero when no
/// joint is shared.
pub fn oks_similarity(a: &Pose, b: &Pose, scale: f64, kappa: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (j, (pa, pb)) in a.keypoints().iter().zip(b.keypoints()).enumerate() {
        let (Some(pa), Some(pb)) = (pa, pb) else { continue };
        let k = kappa.get(j).copied().unwrap_or(0.1);
        sum += math::exp(-pa.distance_sq(pb) / (2.0 * scale * scale * k * k));
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Keypoint box with zero-extent sides widened to one pixel.
fn padded_box(p: &Pose) -> [f64; 4] {
    let mut b = p.bbox();
    if b[2] - b[0] < 1.0 {
        b[2] = b[0] + 1.0;
    }
    if b[3] - b[1] < 1.0 {
        b[3] = b[1] + 1.0;
    }
    b
}

/// Intersection over union of the tight keypoint boxes.
pub fn iou_similarity(a: &Pose, b: &Pose) -> f64 {
    let (ba, bb) = (padded_box(a), padded_box(b));
    let iw = (ba[2].min(bb[2]) - ba[0].max(bb[0])).max(0.0);
    let ih = (ba[3].min(bb[3]) - ba[1].max(bb[1])).max(0.0);
    let inter = iw * ih;
    let area = |b: [f64; 4]| (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area(ba) + area(bb) - inter)
}

/// Keypoint box scale `sqrt(w h)`, at least one pixel.
pub fn pose_scale(p: &Pose) -> f64 {
    let b = padded_box(p);
    math::sqrt((b[2] - b[0]) * (b[3] - b[1])).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MetricMode {
    #[default]
    Combined,
    HeOnly,
    TieOnly,
    Oks,
    Iou,
}

impl MetricMode {
    pub const ALL: [MetricMode; 5] = [
        MetricMode::Combined,
        MetricMode::HeOnly,
        MetricMode::TieOnly,
        MetricMode::Oks,
        MetricMode::Iou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricMode::Combined => "combined",
            MetricMode::HeOnly => "he_only",
            MetricMode::TieOnly => "tie_only",
            MetricMode::Oks => "oks",
            MetricMode::Iou => "iou",
        }
    }

    fn similarity_based(self) -> bool {
        matches!(self, MetricMode::Oks | MetricMode::Iou)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrackerConfig {
    /// Largest cost a match may have. Similarity modes use `1 - similarity`
    /// as cost and additionally require positive similarity.
    pub gate: f64,
    /// A track stays matchable while it was last seen at most this many
    /// frames ago.
    pub max_age: usize,
    pub lambda_he: f64,
    pub lambda_tie: f64,
    pub metric: MetricMode,
    /// Per-joint constants for OKS; empty means the skeleton's.
    pub oks_kappa: Vec<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate: 2000.0,
            max_age: 1,
            lambda_he: DEFAULT_LAMBDA_HE,
            lambda_tie: DEFAULT_LAMBDA_TIE,
            metric: MetricMode::Combined,
            oks_kappa: Vec::new(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate > 0.0) {
            return Err(Error::invalid("gate must be positive"));
        }
        if self.max_age == 0 {
            return Err(Error::invalid("max age must be at least one frame"));
        }
        if !(self.lambda_he >= 0.0 && self.lambda_tie >= 0.0) {
            return Err(Error::invalid("cost weights must be non-negative"));
        }
        Ok(())
    }

    pub fn with_metric(mut self, metric: MetricMode) -> Self {
        self.metric = metric;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    /// `(frame, pose)` with strictly increasing frames.
    pub poses: Vec<(usize, Pose)>,
    pub last_seen: usize,
    pub last_he: Option<HumanEmbedding>,
}

impl Trajectory {
    pub fn last_pose(&self) -> &Pose {
        &self.poses.last().expect("trajectories are born with a pose").1
    }

    pub fn pose_at(&self, frame: usize) -> Option<&Pose> {
        self.poses
            .binary_search_by_key(&frame, |(t, _)| *t)
            .ok()
            .map(|i| &self.poses[i].1)
    }
}

/// A decoded pose with the appearance vector picked for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub pose: Pose,
    pub he: Option<HumanEmbedding>,
}

/// Pairwise association costs for one frame.
pub fn cost_matrix(
    frame: usize,
    detections: &[Detection],
    tracks: &[&Trajectory],
    fields: Option<&CenterFields<'_>>,
    cfg: &TrackerConfig,
    default_kappa: &[f64],
) -> Vec<f64> {
    let kappa = if cfg.oks_kappa.is_empty() {
        default_kappa
    } else {
        &cfg.oks_kappa
    };
    let mut out = Vec::with_capacity(detections.len() * tracks.len());
    for det in detections {
        for tr in tracks {
            let prev = tr.last_pose();
            let he = match (&det.he, &tr.last_he) {
                (Some(a), Some(b)) => psi_he(a, b).ok(),
                _ => None,
            };
            let tie = match fields {
                Some(f) if tr.last_seen + 1 == frame => psi_tie(&det.pose, prev, f),
                _ => None,
            };
            let c = match cfg.metric {
                MetricMode::Combined => match (he, tie) {
                    (Some(h), Some(t)) => Some(combined_cost(h, t, cfg.lambda_he, cfg.lambda_tie)),
                    (Some(h), None) => Some(cfg.lambda_he * h),
                    (None, Some(t)) => Some(cfg.lambda_tie * t),
                    (None, None) => None,
                },
                MetricMode::HeOnly => he.map(|h| combined_cost(h, 0.0, cfg.lambda_he, 0.0)),
                MetricMode::TieOnly => tie.map(|t| combined_cost(0.0, t, 0.0, cfg.lambda_tie)),
                MetricMode::Oks => {
                    let s = oks_similarity(&det.pose, prev, pose_scale(prev), kappa);
                    (s > 0.0).then_some(1.0 - s)
                }
                MetricMode::Iou => {
                    let s = iou_similarity(&det.pose, prev);
                    (s > 0.0).then_some(1.0 - s)
                }
            };
            out.push(c.filter(|c| c.is_finite()).unwrap_or(INCOMPARABLE_COST).min(INCOMPARABLE_COST));
        }
    }
    out
}

/// Online tracker state: every trajectory ever born plus the id counter.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub trajectories: Vec<Trajectory>,
    next_id: u32,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn matchable(&self, frame: usize, max_age: usize) -> Vec<usize> {
        (0..self.trajectories.len())
            .filter(|&i| {
                let t = &self.trajectories[i];
                t.last_seen < frame && frame - t.last_seen <= max_age
            })
            .collect()
    }

    /// Associates one frame's detections and returns the track id given to
    /// each detection.
    pub fn associate(
        &mut self,
        frame: usize,
        detections: Vec<Detection>,
        fields: Option<&CenterFields<'_>>,
        cfg: &TrackerConfig,
        default_kappa: &[f64],
    ) -> Result<Vec<u32>> {
        cfg.validate()?;
        if let Some(last) = self.trajectories.iter().map(|t| t.last_seen).max() {
            if frame <= last {
                return Err(Error::invalid("frames must be associated in time order"));
            }
        }
        let open = self.matchable(frame, cfg.max_age);
        let refs: Vec<&Trajectory> = open.iter().map(|&i| &self.trajectories[i]).collect();
        let cost = cost_matrix(frame, &detections, &refs, fields, cfg, default_kappa);
        let assignment = munkres_solve(&cost, detections.len(), open.len())?;
        let mut matched = vec![None; detections.len()];
        for &(r, c) in &assignment.pairs {
            let v = cost[r * open.len() + c];
            let ok = v < INCOMPARABLE_COST && v <= cfg.gate;
            let ok = ok && (!cfg.metric.similarity_based() || v < 1.0);
            if ok {
                matched[r] = Some(open[c]);
            }
        }
        let mut ids = Vec::with_capacity(detections.len());
        for (det, m) in detections.into_iter().zip(matched) {
            let pose = det.pose;
            match m {
                Some(i) => {
                    let t = &mut self.trajectories[i];
                    t.poses.push((frame, pose.with_id(Some(t.id))));
                    t.last_seen = frame;
                    if det.he.is_some() {
                        t.last_he = det.he;
                    }
                    ids.push(t.id);
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.trajectories.push(Trajectory {
                        id,
                        poses: vec![(frame, pose.with_id(Some(id)))],
                        last_seen: frame,
                        last_he: det.he,
                    });
                    ids.push(id);
                }
            }
        }
        Ok(ids)
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }
}

/// Poses of every trajectory at `frame`, id-tagged.
pub fn poses_at(trajectories: &[Trajectory], frame: usize) -> Vec<Pose> {
    trajectories.iter().filter_map(|t| t.pose_at(frame).cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Keypoint;

    fn brute(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for c in 0..n {
                if !used[c] {
                    used[c] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn munkres_examples() {
        let a = munkres_solve(&[1.0, 2.0, 3.0, 0.0], 2, 2).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 1.0);
        let b = munkres_solve(&[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0], 3, 3).unwrap();
        assert_eq!(b.pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(b.cost, 5.0);
        let d = munkres_solve(&[0.0, 9.0, 9.0, 0.0], 2, 2).unwrap();
        assert_eq!(d.pairs, vec![(0, 0), (1, 1)]);
        assert!(munkres_solve(&[], 0, 3).unwrap().pairs.is_empty());
        assert!(munkres_solve(&[f64::NAN], 1, 1).is_err());
    }

    #[test]
    fn munkres_rectangular() {
        // 3 rows, 2 cols: best leaves the row with the largest costs out
        let a = munkres_solve(&[5.0, 5.0, 1.0, 9.0, 9.0, 1.0], 3, 2).unwrap();
        assert_eq!(a.pairs, vec![(1, 0), (2, 1)]);
        let b = munkres_solve(&[5.0, 1.0, 9.0, 9.0, 9.0, 1.0], 2, 3).unwrap();
        assert_eq!(b.pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn munkres_matches_brute_force() {
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % 1000) as f64 / 10.0
        };
        for n in 2..=6 {
            for _ in 0..30 {
                let cost: Vec<f64> = (0..n * n).map(|_| next()).collect();
                let a = munkres_solve(&cost, n, n).unwrap();
                assert!((a.cost - brute(&cost, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oks_examples() {
        let a = Pose::from_positions(&[[0.0, 0.0], [10.0, 0.0]], None).unwrap();
        assert_eq!(oks_similarity(&a, &a, 5.0, &[0.1, 0.1]), 1.0);
        let s = 5.0;
        let k = 0.1;
        let off = core::f64::consts::SQRT_2 * s * k;
        let b = Pose::from_positions(&[[off, 0.0], [10.0, 0.0]], None).unwrap();
        let v = oks_similarity(&a, &b, s, &[k, k]);
        assert!((v - 0.683940).abs() < 1e-6);
        assert!((v - oks_similarity(&b, &a, s, &[k, k])).abs() < 1e-15);
        let lone = Pose::new(vec![None, Some(Keypoint::new(1, 0.0, 0.0, 1.0))], None).unwrap();
        let other = Pose::new(vec![Some(Keypoint::new(0, 0.0, 0.0, 1.0)), None], None).unwrap();
        assert_eq!(oks_similarity(&lone, &other, s, &[k, k]), 0.0);
    }

    #[test]
    fn iou_examples() {
        let a = Pose::from_positions(&[[0.0, 0.0], [10.0, 10.0]], None).unwrap();
        let b = Pose::from_positions(&[[5.0, 0.0], [15.0, 10.0]], None).unwrap();
        let c = Pose::from_positions(&[[50.0, 50.0], [60.0, 60.0]], None).unwrap();
        assert_eq!(iou_similarity(&a, &a), 1.0);
        assert!((iou_similarity(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou_similarity(&a, &c), 0.0);
        let dot = Pose::from_positions(&[[3.0, 3.0]], None).unwrap();
        assert_eq!(iou_similarity(&dot, &dot), 1.0);
    }

    fn det(x: f64, he: f64) -> Detection {
        Detection {
            pose: Pose::from_positions(&[[x, 0.0], [x, 10.0]], None).unwrap(),
            he: Some(HumanEmbedding::new(None, [x, 5.0], vec![he]).unwrap()),
        }
    }

    fn he_cfg() -> TrackerConfig {
        TrackerConfig {
            gate: 50.0,
            ..TrackerConfig::default()
        }
        .with_metric(MetricMode::HeOnly)
    }

    #[test]
    fn cold_start_and_preservation() {
        let mut t = Tracker::new();
        let ids = t.associate(0, vec![det(0.0, 0.0), det(50.0, 10.0)], None, &he_cfg(), &[]).unwrap();
        assert_eq!(ids, vec![0, 1]);
        // swapped order, true pairs cost ~0.1 and ~0.2 (x3), cross ~100
        let ids = t.associate(1, vec![det(51.0, 10.2), det(1.0, 0.1)], None, &he_cfg(), &[]).unwrap();
        assert_eq!(ids, vec![1, 0]);
    }

    #[test]
    fn gate_forces_birth() {
        let mut t = Tracker::new();
        t.associate(0, vec![det(0.0, 0.0)], None, &he_cfg(), &[]).unwrap();
        let ids = t.associate(1, vec![det(0.0, 100.0)], None, &he_cfg(), &[]).unwrap();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn tracks_die_after_max_age() {
        let mut t = Tracker::new();
        t.associate(0, vec![det(0.0, 0.0)], None, &he_cfg(), &[]).unwrap();
        t.associate(1, vec![], None, &he_cfg(), &[]).unwrap();
        assert_eq!(t.associate(2, vec![det(0.0, 0.0)], None, &he_cfg(), &[]).unwrap(), vec![1]);

        let cfg = TrackerConfig { max_age: 3, ..he_cfg() };
        let mut t = Tracker::new();
        t.associate(0, vec![det(0.0, 0.0)], None, &cfg, &[]).unwrap();
        assert_eq!(t.associate(3, vec![det(0.0, 0.0)], None, &cfg, &[]).unwrap(), vec![0]);
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = Tracker::new();
        t.associate(3, vec![det(0.0, 0.0)], None, &he_cfg(), &[]).unwrap();
        assert!(t.associate(3, vec![], None, &he_cfg(), &[]).is_err());
    }

    #[test]
    fn similarity_modes_need_overlap() {
        let cfg = TrackerConfig::default().with_metric(MetricMode::Iou);
        let mut t = Tracker::new();
        t.associate(0, vec![det(0.0, 0.0)], None, &cfg, &[]).unwrap();
        assert_eq!(t.associate(1, vec![det(0.5, 9.0)], None, &cfg, &[]).unwrap(), vec![0]);
        assert_eq!(t.associate(2, vec![det(40.0, 9.0)], None, &cfg, &[]).unwrap(), vec![1]);
    }
}

//! Head-relative keypoint matching, per-joint average precision and
//! per-joint tracking accuracy.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::pose_score;
use crate::grid::{Pose, Skeleton};
use crate::math;
use crate::{Error, Result};

pub const DEFAULT_PCKH_FACTOR: f64 = 0.5;

/// Counts for one joint type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointCounts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
}

impl JointCounts {
    pub fn add(&mut self, o: &JointCounts) {
        self.gt += o.gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
    }

    /// `1 - (FN + FP + IDSW) / GT`, undefined without ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| 1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.gt as f64)
    }
}

/// Matching of one frame's predictions against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub joints: Vec<JointCounts>,
    /// `(prediction, ground truth)` person pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Per prediction and joint: `Some(true)` for a hit, `Some(false)` for a
    /// miss, `None` when the joint was not predicted.
    pub hits: Vec<Vec<Option<bool>>>,
    /// Ground-truth people left out for lacking head joints.
    pub skipped_gt: usize,
}

/// Greedy person matching by descending pose score, then joint matching
/// within `factor` times the ground-truth head segment length (inclusive).
pub fn match_pckh(pred: &[Pose], gt: &[Pose], factor: f64, skeleton: &Skeleton) -> Result<MatchResult> {
    let j = skeleton.joint_count();
    if pred.iter().chain(gt).any(|p| p.joint_count() != j) {
        return Err(Error::invalid("pose joint count differs from the skeleton"));
    }
    let thresholds: Vec<Option<f64>> = gt
        .iter()
        .map(|g| g.head_size_sq(skeleton).map(|h| factor * math::sqrt(h)))
        .collect();
    let skipped_gt = thresholds.iter().filter(|t| t.is_none()).count();

    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pose_score(&pred[b]).total_cmp(&pose_score(&pred[a])));

    let within = |p: &Pose, g: &Pose, thr: f64, joint: usize| -> bool {
        match (p.keypoint(joint), g.keypoint(joint)) {
            (Some(a), Some(b)) => math::sqrt(a.distance_sq(b)) <= thr,
            _ => false,
        }
    };

    let mut gt_taken = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for &p in &order {
        let mut best: Option<(usize, usize)> = None;
        for (g, thr) in thresholds.iter().enumerate() {
            let Some(thr) = *thr else { continue };
            if gt_taken[g] {
                continue;
            }
            let hits = (0..j).filter(|&k| within(&pred[p], &gt[g], thr, k)).count();
            if hits > 0 && best.is_none_or(|(h, _)| hits > h) {
                best = Some((hits, g));
            }
        }
        if let Some((_, g)) = best {
            gt_taken[g] = true;
            pairs.push((p, g));
        }
    }
    pairs.sort_unstable();

    let mut joints = vec![JointCounts::default(); j];
    let mut hits: Vec<Vec<Option<bool>>> = pred
        .iter()
        .map(|p| p.keypoints().iter().map(|k| k.map(|_| false)).collect())
        .collect();
    let mut gt_hit = vec![vec![false; j]; gt.len()];
    for &(p, g) in &pairs {
        let thr = thresholds[g].expect("paired people have head joints");
        for k in 0..j {
            if within(&pred[p], &gt[g], thr, k) {
                hits[p][k] = Some(true);
                gt_hit[g][k] = true;
            }
        }
    }
    for (g, pose) in gt.iter().enumerate() {
        if thresholds[g].is_none() {
            continue;
        }
        for k in 0..j {
            if pose.keypoint(k).is_some() {
                joints[k].gt += 1;
                if gt_hit[g][k] {
                    joints[k].tp += 1;
                } else {
                    joints[k].fn_ += 1;
                }
            }
        }
    }
    for row in &hits {
        for (k, h) in row.iter().enumerate() {
            if *h == Some(false) {
                joints[k].fp += 1;
            }
        }
    }
    Ok(MatchResult {
        joints,
        pairs,
        hits,
        skipped_gt,
    })
}

/// Area under the interpolated precision-recall curve. Detections sharing
/// a score enter the curve together.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut det: Vec<(f64, bool)> = scored.to_vec();
    det.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < det.len() {
        let s = det[i].0;
        while i < det.len() && det[i].0 == s {
            seen += 1;
            tp += det[i].1 as usize;
            i += 1;
        }
        points.push((tp as f64 / gt_count as f64, tp as f64 / seen as f64));
    }
    // precision envelope from the right
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (idx, &(r, _)) in points.iter().enumerate() {
        let p_max = points[idx..].iter().map(|q| q.1).fold(0.0, f64::max);
        ap += (r - prev_recall) * p_max;
        prev_recall = r;
    }
    Some(ap)
}

/// Per-joint and grouped evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub joint_names: Vec<alloc::string::String>,
    pub ap: Vec<Option<f64>>,
    pub counts: Vec<JointCounts>,
    /// `(group name, member joints)`.
    pub groups: Vec<(alloc::string::String, Vec<usize>)>,
    pub skipped_gt: usize,
}

impl MetricsReport {
    pub fn mota(&self) -> Vec<Option<f64>> {
        self.counts.iter().map(JointCounts::mota).collect()
    }

    /// Mean AP over joints with ground truth.
    pub fn total_ap(&self) -> Option<f64> {
        mean(self.ap.iter().flatten().copied())
    }

    /// MOTA from counts summed over all joints.
    pub fn total_mota(&self) -> Option<f64> {
        let mut c = JointCounts::default();
        for j in &self.counts {
            c.add(j);
        }
        c.mota()
    }

    pub fn group_ap(&self) -> Vec<Option<f64>> {
        self.groups
            .iter()
            .map(|(_, js)| mean(js.iter().filter_map(|&j| self.ap[j])))
            .collect()
    }

    pub fn group_mota(&self) -> Vec<Option<f64>> {
        self.groups
            .iter()
            .map(|(_, js)| {
                let mut c = JointCounts::default();
                for &j in js {
                    c.add(&self.counts[j]);
                }
                c.mota()
            })
            .collect()
    }

    pub fn total_counts(&self) -> JointCounts {
        let mut c = JointCounts::default();
        for j in &self.counts {
            c.add(j);
        }
        c
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Accumulates matches over frames, tracking id switches per ground-truth
/// person and joint.
#[derive(Debug, Clone)]
pub struct Evaluator {
    skeleton: Skeleton,
    factor: f64,
    counts: Vec<JointCounts>,
    scored: Vec<Vec<(f64, bool)>>,
    last_id: BTreeMap<(u32, usize), u32>,
    skipped_gt: usize,
}

impl Evaluator {
    pub fn new(skeleton: Skeleton, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::invalid("matching factor must be positive"));
        }
        let j = skeleton.joint_count();
        Ok(Evaluator {
            skeleton,
            factor,
            counts: vec![JointCounts::default(); j],
            scored: vec![Vec::new(); j],
            last_id: BTreeMap::new(),
            skipped_gt: 0,
        })
    }

    /// Adds one frame. Id switches are counted only when both sides carry
    /// person ids.
    pub fn add_frame(&mut self, pred: &[Pose], gt: &[Pose]) -> Result<MatchResult> {
        let mut m = match_pckh(pred, gt, self.factor, &self.skeleton)?;
        for &(p, g) in &m.pairs {
            let (Some(pid), Some(gid)) = (pred[p].person_id, gt[g].person_id) else {
                continue;
            };
            for (k, hit) in m.hits[p].iter().enumerate() {
                if *hit != Some(true) {
                    continue;
                }
                if let Some(prev) = self.last_id.insert((gid, k), pid) {
                    if prev != pid {
                        m.joints[k].idsw += 1;
                    }
                }
            }
        }
        for (p, row) in m.hits.iter().enumerate() {
            let s = pose_score(&pred[p]);
            for (k, h) in row.iter().enumerate() {
                if let Some(h) = h {
                    self.scored[k].push((s, *h));
                }
            }
        }
        for (acc, c) in self.counts.iter_mut().zip(&m.joints) {
            acc.add(c);
        }
        self.skipped_gt += m.skipped_gt;
        Ok(m)
    }

    /// Starts a new sequence: id history is forgotten, counts are kept.
    pub fn next_sequence(&mut self) {
        self.last_id.clear();
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            joint_names: self.skeleton.joint_names().to_vec(),
            ap: self
                .scored
                .iter()
                .zip(&self.counts)
                .map(|(s, c)| average_precision(s, c.gt))
                .collect(),
            counts: self.counts.clone(),
            groups: self
                .skeleton
                .groups()
                .iter()
                .map(|g| (g.name.clone(), g.joints.clone()))
                .collect(),
            skipped_gt: self.skipped_gt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Keypoint;

    fn sk() -> Skeleton {
        Skeleton::new(vec!["head_top".into(), "neck".into(), "hip".into()], 0, 1).unwrap()
    }

    fn person(x: f64, id: Option<u32>) -> Pose {
        // head segment length 10
        Pose::from_positions(&[[x, 0.0], [x, 10.0], [x, 30.0]], id).unwrap()
    }

    #[test]
    fn perfect_match() {
        let gt = [person(0.0, Some(0)), person(50.0, Some(1))];
        let m = match_pckh(&gt, &gt, 0.5, &sk()).unwrap();
        for c in &m.joints {
            assert_eq!((c.gt, c.tp, c.fp, c.fn_), (2, 2, 0, 0));
        }
    }

    #[test]
    fn displaced_joint_and_boundary() {
        let gt = [person(0.0, None)];
        let mut kps: Vec<Option<Keypoint>> = gt[0].keypoints().to_vec();
        kps[2] = Some(Keypoint::new(2, 5.0001, 30.0, 1.0));
        let m = match_pckh(&[Pose::new(kps.clone(), None).unwrap()], &gt, 0.5, &sk()).unwrap();
        assert_eq!((m.joints[2].fp, m.joints[2].fn_, m.joints[2].tp), (1, 1, 0));
        kps[2] = Some(Keypoint::new(2, 5.0, 30.0, 1.0));
        let m = match_pckh(&[Pose::new(kps, None).unwrap()], &gt, 0.5, &sk()).unwrap();
        assert_eq!(m.joints[2].tp, 1);
    }

    #[test]
    fn missing_head_is_skipped() {
        let g = Pose::new(vec![None, Some(Keypoint::new(1, 0.0, 0.0, 1.0)), None], None).unwrap();
        let m = match_pckh(&[], &[g], 0.5, &sk()).unwrap();
        assert_eq!(m.skipped_gt, 1);
        assert_eq!(m.joints[1].gt, 0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(1.0, true), (0.5, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[], 4), Some(0.0));
        assert_eq!(average_precision(&[(0.7, true), (0.7, true)], 4), Some(0.5));
        assert_eq!(average_precision(&[], 0), None);
        // one false positive ranked first: P-R points (0, 0), (0.5, 0.5), (1, 2/3)
        let v = average_precision(&[(0.9, false), (0.8, true), (0.7, true)], 2).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_invariant_under_monotone_rescaling() {
        let d = [(0.9, false), (0.8, true), (0.3, true), (0.3, false), (0.1, true)];
        let e: Vec<(f64, bool)> = d.iter().map(|&(s, t)| (s * s * 7.0 + 1.0, t)).collect();
        assert_eq!(average_precision(&d, 5), average_precision(&e, 5));
    }

    #[test]
    fn mota_examples() {
        let c = JointCounts {
            gt: 10,
            tp: 9,
            fp: 0,
            fn_: 1,
            idsw: 0,
        };
        assert!((c.mota().unwrap() - 0.9).abs() < 1e-15);
        let c = JointCounts {
            gt: 20,
            tp: 20,
            fp: 0,
            fn_: 0,
            idsw: 1,
        };
        assert!((c.mota().unwrap() - 0.95).abs() < 1e-15);
        let c = JointCounts {
            gt: 2,
            tp: 2,
            fp: 9,
            fn_: 0,
            idsw: 0,
        };
        assert!(c.mota().unwrap() < 0.0);
        assert_eq!(JointCounts::default().mota(), None);
    }

    #[test]
    fn id_switch_counted_per_joint() {
        let mut e = Evaluator::new(sk(), 0.5).unwrap();
        let gt = [person(0.0, Some(0))];
        e.add_frame(&[person(0.0, Some(4))], &gt).unwrap();
        e.add_frame(&[person(0.0, Some(4))], &gt).unwrap();
        e.add_frame(&[person(0.0, Some(5))], &gt).unwrap();
        let r = e.report();
        assert_eq!(r.total_counts().idsw, 3);
        assert!((r.total_mota().unwrap() - (1.0 - 3.0 / 9.0)).abs() < 1e-12);
        assert_eq!(r.total_ap(), Some(1.0));
    }
}

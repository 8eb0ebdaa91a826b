//! Greedy grouping of detected peaks into people using keypoint embeddings
//! and predicted person centers.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{Keypoint, Pose, Sampling, ScalarField, VectorField2};
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DecodeConfig {
    /// Joint processing order. Empty means skeleton order, which for the
    /// default skeleton runs head first.
    pub joint_order: Vec<usize>,
    pub theta_ke: f64,
    pub theta_sie: f64,
    /// Weight of the embedding term; `1 - omega` goes to the center term.
    pub omega: f64,
    pub max_people: usize,
    pub sampling: Sampling,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            joint_order: Vec::new(),
            theta_ke: 1.0,
            theta_sie: 10.0,
            omega: 0.5,
            max_people: 30,
            sampling: Sampling::Nearest,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if !(self.theta_ke > 0.0 && self.theta_sie > 0.0) {
            return Err(Error::invalid("decode thresholds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::invalid("omega must lie in [0, 1]"));
        }
        if !self.joint_order.is_empty() {
            let mut seen = vec![false; joints];
            if self.joint_order.len() != joints {
                return Err(Error::invalid("joint order must list every joint once"));
            }
            for &j in &self.joint_order {
                if j >= joints || seen[j] {
                    return Err(Error::invalid("joint order must be a permutation"));
                }
                seen[j] = true;
            }
        }
        Ok(())
    }

    fn order(&self, joints: usize) -> Vec<usize> {
        if self.joint_order.is_empty() {
            (0..joints).collect()
        } else {
            self.joint_order.clone()
        }
    }
}

/// A partially assembled person during decoding.
#[derive(Debug, Clone)]
pub struct PersonHypothesis {
    pub keypoints: Vec<Option<Keypoint>>,
    pub ke_sum: f64,
    pub center_sum: [f64; 2],
    pub count: usize,
    pub confidence_sum: f64,
}

impl PersonHypothesis {
    fn new(joints: usize) -> Self {
        PersonHypothesis {
            keypoints: vec![None; joints],
            ke_sum: 0.0,
            center_sum: [0.0; 2],
            count: 0,
            confidence_sum: 0.0,
        }
    }

    pub fn ke_reference(&self) -> f64 {
        self.ke_sum / self.count as f64
    }

    pub fn center_reference(&self) -> [f64; 2] {
        let n = self.count as f64;
        [self.center_sum[0] / n, self.center_sum[1] / n]
    }

    fn absorb(&mut self, kp: Keypoint, ke: f64, center: [f64; 2]) {
        self.keypoints[kp.joint] = Some(kp);
        self.ke_sum += ke;
        self.center_sum[0] += center[0];
        self.center_sum[1] += center[1];
        self.count += 1;
        self.confidence_sum += kp.confidence;
    }
}

/// Assigns each peak, strongest first within each joint, to the cheapest
/// open hypothesis or starts a new one.
///
/// Cost is `omega * |ke - ref_ke| + (1 - omega) * |center - ref_center| /
/// theta_sie`; a peak joins only when the cost is at most one and, for
/// `omega > 0`, its embedding lies within `theta_ke` of the reference.
pub fn greedy_decode(
    peaks: &[Vec<Keypoint>],
    ke: &ScalarField,
    sie: &VectorField2,
    cfg: &DecodeConfig,
) -> Result<Vec<Pose>> {
    let joints = peaks.len();
    cfg.validate(joints)?;
    if ke.shape() != sie.shape() {
        return Err(Error::invalid("embedding fields differ in shape"));
    }
    let mut hyps: Vec<PersonHypothesis> = Vec::new();
    for j in cfg.order(joints) {
        for kp in &peaks[j] {
            if kp.joint != j {
                return Err(Error::invalid("peak filed under the wrong joint"));
            }
            let e = ke.sample(kp.x, kp.y, cfg.sampling);
            let c = sie.sample(kp.x, kp.y, cfg.sampling);
            let mut best: Option<(f64, usize)> = None;
            for (h, hyp) in hyps.iter().enumerate() {
                if hyp.keypoints[j].is_some() {
                    continue;
                }
                let de = (e - hyp.ke_reference()).abs();
                if cfg.omega > 0.0 && de > cfg.theta_ke {
                    continue;
                }
                let r = hyp.center_reference();
                let dc = math::sqrt((c[0] - r[0]) * (c[0] - r[0]) + (c[1] - r[1]) * (c[1] - r[1]));
                let cost = cfg.omega * de + (1.0 - cfg.omega) * dc / cfg.theta_sie;
                if cost <= 1.0 && best.is_none_or(|(b, _)| cost < b) {
                    best = Some((cost, h));
                }
            }
            match best {
                Some((_, h)) => hyps[h].absorb(*kp, e, c),
                None if hyps.len() < cfg.max_people => {
                    let mut hyp = PersonHypothesis::new(joints);
                    hyp.absorb(*kp, e, c);
                    hyps.push(hyp);
                }
                None => {}
            }
        }
    }
    Ok(hyps
        .into_iter()
        .map(|h| Pose::from_slots_unchecked(h.keypoints, None))
        .collect())
}

/// Mean keypoint confidence.
pub fn pose_score(pose: &Pose) -> f64 {
    let n = pose.present_count();
    if n == 0 {
        return 0.0;
    }
    pose.present().map(|k| k.confidence).sum::<f64>() / n as f64
}

/// Two people whose peaks interleave in strength, painted with one cue
/// deliberately ambiguous. Used to show which cue each decoding mode
/// depends on.
#[derive(Debug, Clone)]
pub struct CollisionFixture {
    pub peaks: Vec<Vec<Keypoint>>,
    pub ke: ScalarField,
    pub sie: VectorField2,
    pub truth: Vec<Pose>,
}

impl CollisionFixture {
    /// Both people carry the same keypoint embedding; their centers are far
    /// apart.
    pub fn identical_embedding() -> Self {
        Self::build([0.0, 0.0], None)
    }

    /// Both people report the same center; their embeddings differ.
    pub fn identical_center() -> Self {
        Self::build([0.0, 4.0], Some([24.0, 16.0]))
    }

    fn build(tags: [f64; 2], shared_center: Option<[f64; 2]>) -> Self {
        let shape = crate::grid::GridShape::new(48, 32).expect("nonzero grid");
        let bodies: [&[[f64; 2]]; 2] = [
            &[[10.0, 4.0], [10.0, 8.0], [7.0, 10.0], [13.0, 10.0], [6.0, 15.0], [14.0, 15.0]],
            &[[34.0, 5.0], [34.0, 9.0], [31.0, 11.0], [37.0, 11.0], [30.0, 16.0], [38.0, 16.0]],
        ];
        let joints = bodies[0].len();
        let mut peaks = vec![Vec::new(); joints];
        let mut ke = ScalarField::zeros(shape);
        let mut sie = VectorField2::zeros(shape);
        let mut truth = Vec::new();
        for (k, body) in bodies.iter().enumerate() {
            let mut slots = Vec::with_capacity(joints);
            let n = body.len() as f64;
            let own = [body.iter().map(|p| p[0]).sum::<f64>() / n, body.iter().map(|p| p[1]).sum::<f64>() / n];
            let center = shared_center.unwrap_or(own);
            for (j, p) in body.iter().enumerate() {
                // the stronger peak alternates between the two people
                let conf = if (j + k) % 2 == 0 { 0.9 } else { 0.8 };
                let kp = Keypoint::new(j, p[0], p[1], conf);
                peaks[j].push(kp);
                slots.push(Some(kp));
                ke.set(p[0] as usize, p[1] as usize, tags[k]);
                sie.set(p[0] as usize, p[1] as usize, center);
            }
            truth.push(Pose::from_slots_unchecked(slots, Some(k as u32)));
        }
        for list in &mut peaks {
            list.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        }
        CollisionFixture { peaks, ke, sie, truth }
    }

    pub fn decode(&self, cfg: &DecodeConfig) -> Result<Vec<Pose>> {
        greedy_decode(&self.peaks, &self.ke, &self.sie, cfg)
    }

    /// True when every decoded pose holds exactly one person's keypoints and
    /// every person is recovered.
    pub fn is_exact(&self, poses: &[Pose]) -> bool {
        let key = |p: &Pose| {
            let mut v: Vec<(usize, u64, u64)> = p.present().map(|k| (k.joint, k.x.to_bits(), k.y.to_bits())).collect();
            v.sort_unstable();
            v
        };
        let mut want: Vec<_> = self.truth.iter().map(key).collect();
        let mut got: Vec<_> = poses.iter().filter(|p| p.present_count() > 0).map(key).collect();
        want.sort();
        got.sort();
        want == got
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    const W: usize = 64;

    fn shape() -> GridShape {
        GridShape::new(W, W).unwrap()
    }

    /// Paints exact KE and SIE at the joints of the given people.
    fn scene(people: &[(&[[f64; 2]], f64)]) -> (Vec<Vec<Keypoint>>, ScalarField, VectorField2) {
        let joints = people[0].0.len();
        let mut peaks = vec![Vec::new(); joints];
        let mut ke = ScalarField::zeros(shape());
        let mut sie = VectorField2::zeros(shape());
        for (pts, tag) in people {
            let n = pts.len() as f64;
            let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
            for (j, p) in pts.iter().enumerate() {
                peaks[j].push(Keypoint::new(j, p[0], p[1], 1.0));
                ke.set(p[0] as usize, p[1] as usize, *tag);
                sie.set(p[0] as usize, p[1] as usize, c);
            }
        }
        (peaks, ke, sie)
    }

    fn memberships(poses: &[Pose]) -> Vec<Vec<[f64; 2]>> {
        let mut m: Vec<Vec<[f64; 2]>> = poses.iter().map(|p| p.present().map(|k| k.position()).collect()).collect();
        m.sort_by(|a, b| a[0][0].total_cmp(&b[0][0]));
        m
    }

    #[test]
    fn single_person_absorbs_all() {
        let a: &[[f64; 2]] = &[[10.0, 10.0], [10.0, 14.0], [12.0, 18.0]];
        let (peaks, ke, sie) = scene(&[(a, 0.0)]);
        let poses = greedy_decode(&peaks, &ke, &sie, &DecodeConfig::default()).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].present_count(), 3);
    }

    #[test]
    fn separated_by_embedding() {
        let a: &[[f64; 2]] = &[[10.0, 10.0], [10.0, 14.0], [12.0, 18.0]];
        let b: &[[f64; 2]] = &[[14.0, 10.0], [14.0, 14.0], [16.0, 18.0]];
        let (peaks, ke, sie) = scene(&[(a, 0.0), (b, 10.0)]);
        let poses = greedy_decode(&peaks, &ke, &sie, &DecodeConfig::default()).unwrap();
        assert_eq!(memberships(&poses), vec![a.to_vec(), b.to_vec()]);
    }

    #[test]
    fn separated_by_center() {
        let a: &[[f64; 2]] = &[[10.0, 10.0], [10.0, 14.0], [12.0, 18.0]];
        let b: &[[f64; 2]] = &[[50.0, 10.0], [50.0, 14.0], [52.0, 18.0]];
        let (peaks, ke, sie) = scene(&[(a, 3.0), (b, 3.0)]);
        let poses = greedy_decode(&peaks, &ke, &sie, &DecodeConfig::default()).unwrap();
        assert_eq!(memberships(&poses), vec![a.to_vec(), b.to_vec()]);
    }

    #[test]
    fn no_duplicate_joints_and_empty_input() {
        let a: &[[f64; 2]] = &[[10.0, 10.0], [10.0, 14.0]];
        let b: &[[f64; 2]] = &[[11.0, 10.0], [11.0, 14.0]];
        let (peaks, ke, sie) = scene(&[(a, 0.0), (b, 0.0)]);
        let poses = greedy_decode(&peaks, &ke, &sie, &DecodeConfig::default()).unwrap();
        assert_eq!(poses.len(), 2);
        let empty = vec![Vec::new(); 2];
        assert!(greedy_decode(&empty, &ke, &sie, &DecodeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn max_people_caps_output() {
        let a: &[[f64; 2]] = &[[10.0, 10.0]];
        let b: &[[f64; 2]] = &[[50.0, 50.0]];
        let (peaks, ke, sie) = scene(&[(a, 0.0), (b, 10.0)]);
        let cfg = DecodeConfig {
            max_people: 1,
            ..DecodeConfig::default()
        };
        assert_eq!(greedy_decode(&peaks, &ke, &sie, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DecodeConfig {
            joint_order: vec![0, 0],
            ..DecodeConfig::default()
        };
        assert!(cfg.validate(2).is_err());
        assert!(DecodeConfig { omega: 1.5, ..DecodeConfig::default() }.validate(2).is_err());
        assert!(DecodeConfig { theta_ke: 0.0, ..DecodeConfig::default() }.validate(2).is_err());
    }

    #[test]
    fn collision_fixtures() {
        let both = DecodeConfig::default();
        let ke_only = DecodeConfig { omega: 1.0, ..both.clone() };
        let center_only = DecodeConfig { omega: 0.0, ..both.clone() };
        let same_ke = CollisionFixture::identical_embedding();
        assert!(!same_ke.is_exact(&same_ke.decode(&ke_only).unwrap()));
        assert!(same_ke.is_exact(&same_ke.decode(&center_only).unwrap()));
        assert!(same_ke.is_exact(&same_ke.decode(&both).unwrap()));
        let same_c = CollisionFixture::identical_center();
        assert!(!same_c.is_exact(&same_c.decode(&center_only).unwrap()));
        assert!(same_c.is_exact(&same_c.decode(&ke_only).unwrap()));
        assert!(same_c.is_exact(&same_c.decode(&both).unwrap()));
    }

    #[test]
    fn scores() {
        let p = Pose::new(
            vec![Some(Keypoint::new(0, 0.0, 0.0, 1.0)), Some(Keypoint::new(1, 0.0, 0.0, 0.5))],
            None,
        )
        .unwrap();
        assert_eq!(pose_score(&p), 0.75);
        assert_eq!(pose_score(&Pose::from_positions(&[[0.0, 0.0], [1.0, 1.0]], None).unwrap()), 1.0);
    }
}

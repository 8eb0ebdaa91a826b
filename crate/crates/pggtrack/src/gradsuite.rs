//! Finite-difference checks of every loss on small random instances.

use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};

use pggtrack_core::autodiff::{finite_difference_check, Tape, Var, DEFAULT_FD_STEP};
use pggtrack_core::heatmap::{detection_loss, render_confidence, DEFAULT_SIGMA};
use pggtrack_core::pgg::{pgg_grouping_loss, KernelMode, DEFAULT_DELTA};
use pggtrack_core::spatial::{aux_ordinal_loss, ground_truth_order, pull_loss, push_loss, svf_loss, OrderRelation};
use pggtrack_core::temporal::{he_triplet_loss, tvf_loss, DEFAULT_MARGIN};
use pggtrack_core::{GridShape, Keypoint, Pose, Skeleton};

use crate::error::CliError;

/// Acceptance threshold on the worst relative error.
pub const TOLERANCE: f64 = 1e-4;
pub const GRID: usize = 8;
pub const MAX_PEOPLE: usize = 3;
/// Refinement steps inside the checked grouping loss.
pub const PGG_ITERATIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Det,
    Pull,
    Push,
    Aux,
    Svf,
    Tvf,
    Triplet,
    Pgg,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Det,
        LossKind::Pull,
        LossKind::Push,
        LossKind::Aux,
        LossKind::Svf,
        LossKind::Tvf,
        LossKind::Triplet,
        LossKind::Pgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Det => "det",
            LossKind::Pull => "pull",
            LossKind::Push => "push",
            LossKind::Aux => "aux",
            LossKind::Svf => "svf",
            LossKind::Tvf => "tvf",
            LossKind::Triplet => "triplet",
            LossKind::Pgg => "pgg",
        }
    }
}

impl FromStr for LossKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::invalid(format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub kind: LossKind,
    pub instances: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because their stencil crossed a kink.
    pub excluded: usize,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn shape() -> GridShape {
    GridShape::new(GRID, GRID).expect("nonzero grid")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    Uniform::new(lo, hi).expect("valid range").sample(rng)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).expect("valid sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// One to three people with random integer joint positions; each joint is
/// present with probability 0.8 and at least one always is.
fn random_people(rng: &mut ChaCha8Rng, joints: usize) -> Vec<Pose> {
    let k = Uniform::new_inclusive(1, MAX_PEOPLE).unwrap().sample(rng);
    (0..k).map(|id| random_pose(rng, joints, id as u32)).collect()
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, id: u32) -> Pose {
    let coord = Uniform::new(0, GRID).unwrap();
    let mut slots: Vec<Option<Keypoint>> = (0..joints)
        .map(|j| {
            (uniform(rng, 0.0, 1.0) < 0.8)
                .then(|| Keypoint::new(j, coord.sample(rng) as f64, coord.sample(rng) as f64, 1.0))
        })
        .collect();
    if slots.iter().all(Option::is_none) {
        slots[0] = Some(Keypoint::new(0, coord.sample(rng) as f64, coord.sample(rng) as f64, 1.0));
    }
    Pose::new(slots, Some(id)).expect("valid pose")
}

/// The same people moved by up to two pixels, sometimes with one missing.
fn moved(rng: &mut ChaCha8Rng, people: &[Pose]) -> Vec<Pose> {
    let step = Uniform::new_inclusive(-2i64, 2).unwrap();
    let mut out: Vec<Pose> = people
        .iter()
        .map(|p| {
            let slots = p
                .keypoints()
                .iter()
                .map(|k| {
                    k.map(|k| {
                        let x = (k.x as i64 + step.sample(rng)).clamp(0, GRID as i64 - 1);
                        let y = (k.y as i64 + step.sample(rng)).clamp(0, GRID as i64 - 1);
                        Keypoint::new(k.joint, x as f64, y as f64, 1.0)
                    })
                })
                .collect();
            Pose::new(slots, p.person_id).expect("valid pose")
        })
        .collect();
    if out.len() > 1 && uniform(rng, 0.0, 1.0) < 0.3 {
        out.remove(0);
    }
    out
}

type LossFn = Box<dyn Fn(&mut Tape, Var) -> pggtrack_core::Result<Var>>;

/// A random input point and the loss as a function of it.
fn instance(kind: LossKind, rng: &mut ChaCha8Rng) -> (Vec<f64>, LossFn) {
    let skeleton = Skeleton::default();
    let joints = skeleton.joint_count();
    let s = shape();
    let n = s.len();
    match kind {
        LossKind::Det => {
            let people = random_people(rng, joints);
            let gt = render_confidence(&people, DEFAULT_SIGMA, s, joints).expect("valid render");
            let x = (0..joints * n).map(|_| uniform(rng, 0.0, 1.0)).collect();
            (x, Box::new(move |t, v| detection_loss(t, v, &gt, None)))
        }
        LossKind::Pull => {
            let people = random_people(rng, joints);
            (normals(rng, n, 1.0), Box::new(move |t, v| pull_loss(t, v, s, &people)))
        }
        LossKind::Push => {
            let people = random_people(rng, joints);
            (normals(rng, n, 1.0), Box::new(move |t, v| push_loss(t, v, s, &people)))
        }
        LossKind::Aux => {
            // depth order is read from the head-top to neck segment
            let people: Vec<Pose> = random_people(rng, joints)
                .into_iter()
                .map(|p| {
                    let mut slots = p.keypoints().to_vec();
                    for j in [skeleton.head_top(), skeleton.neck()] {
                        if slots[j].is_none() {
                            let c = Uniform::new(0, GRID).unwrap();
                            slots[j] = Some(Keypoint::new(j, c.sample(rng) as f64, c.sample(rng) as f64, 1.0));
                        }
                    }
                    Pose::new(slots, p.person_id).expect("valid pose")
                })
                .collect();
            let rel = OrderRelation::ALL[Uniform::new(0, OrderRelation::ALL.len()).unwrap().sample(rng)];
            let ord = ground_truth_order(&people, rel, &skeleton).expect("valid order");
            (normals(rng, n, 1.0), Box::new(move |t, v| aux_ordinal_loss(t, v, s, &people, &ord)))
        }
        LossKind::Svf => {
            let people = random_people(rng, joints);
            (normals(rng, 2 * n, 3.0), Box::new(move |t, v| svf_loss(t, v, s, &people)))
        }
        LossKind::Tvf => {
            let prev = random_people(rng, joints);
            let cur = moved(rng, &prev);
            let half = 2 * n;
            (
                normals(rng, 2 * half, 3.0),
                Box::new(move |t, v| {
                    let f = t.gather(v, (0..half).collect(), half, 1)?;
                    let b = t.gather(v, (half..2 * half).collect(), half, 1)?;
                    tvf_loss(t, f, b, s, &cur, &prev)
                }),
            )
        }
        LossKind::Triplet => {
            let rows = Uniform::new_inclusive(1, MAX_PEOPLE).unwrap().sample(rng);
            let e = 8;
            (
                normals(rng, 3 * rows * e, 0.5),
                Box::new(move |t, v| {
                    let part = |t: &mut Tape, i: usize| t.gather(v, (i * rows * e..(i + 1) * rows * e).collect(), rows, e);
                    let (a, p, q) = (part(t, 0)?, part(t, 1)?, part(t, 2)?);
                    he_triplet_loss(t, a, p, q, DEFAULT_MARGIN)
                }),
            )
        }
        LossKind::Pgg => {
            let people = Uniform::new_inclusive(1, MAX_PEOPLE).unwrap().sample(rng) as u32;
            let cols = Uniform::new_inclusive(6, 20).unwrap().sample(rng);
            let labels: Vec<Option<u32>> = (0..cols)
                .map(|_| {
                    let l = Uniform::new_inclusive(0, people).unwrap().sample(rng);
                    (l < people).then_some(l)
                })
                .collect();
            // one KE row and two center rows, spread on the kernel's scale
            let x = (0..3 * cols).map(|_| uniform(rng, 0.0, 0.6)).collect();
            (
                x,
                Box::new(move |t, v| {
                    let m = t.reshape(v, 3, cols)?;
                    pgg_grouping_loss(t, m, &labels, DEFAULT_DELTA, PGG_ITERATIONS, KernelMode::Sharpness)
                }),
            )
        }
    }
}

/// Checks `instances` random instances of one loss.
pub fn check_loss(kind: LossKind, instances: usize, seed: u64) -> Result<LossCheck, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = LossCheck {
        kind,
        instances,
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for _ in 0..instances {
        let (x, f) = instance(kind, &mut rng);
        let r = finite_difference_check(&x, DEFAULT_FD_STEP, f)?;
        out.max_rel_error = out.max_rel_error.max(r.max_rel_error);
        out.checked += r.checked;
        out.excluded += r.excluded.len();
    }
    Ok(out)
}

//! Cross-frame embeddings: temporal vector field loss and decoding, the
//! human-embedding triplet loss, and the association potentials.

use alloc::vec::Vec;

use crate::autodiff::{evaluate, Evaluated, Tape, Var};
use crate::frame::HumanEmbedding;
use crate::grid::{GridShape, Pose, Sampling, VectorField2};
use crate::spatial::{offset_l1, subtract_from_coordinates, JointSamples};
use crate::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_LAMBDA_HE: f64 = 3.0;
pub const DEFAULT_LAMBDA_TIE: f64 = 1.0;
pub const DEFAULT_EMBEDDING_LEN: usize = 3072;

/// Forward field on frame `t` and backward field on frame `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFields {
    pub forward: VectorField2,
    pub backward: VectorField2,
}

impl TemporalFields {
    pub fn new(forward: VectorField2, backward: VectorField2) -> Result<Self> {
        if forward.shape() != backward.shape() {
            return Err(Error::invalid("temporal fields differ in shape"));
        }
        Ok(TemporalFields { forward, backward })
    }

    pub fn shape(&self) -> GridShape {
        self.forward.shape()
    }

    /// Decoded `(forward, backward)` temporal instance embeddings.
    pub fn decode(&self) -> (VectorField2, VectorField2) {
        (decode_tie(&self.forward), decode_tie(&self.backward))
    }
}

/// `T(p) = p - T^(p)`.
pub fn decode_tie(tvf: &VectorField2) -> VectorField2 {
    subtract_from_coordinates(tvf)
}

/// People of `a` and `b` sharing an id, in the order of `a`.
fn shared_people(a: &[Pose], b: &[Pose]) -> Result<(Vec<Pose>, Vec<Pose>)> {
    let mut out_a = Vec::new();
    let mut out_b = Vec::new();
    for p in a {
        let id = p.person_id.ok_or_else(|| Error::invalid("temporal loss needs person ids"))?;
        let mut found = None;
        for q in b {
            let qid = q.person_id.ok_or_else(|| Error::invalid("temporal loss needs person ids"))?;
            if qid == id {
                if found.is_some() {
                    return Err(Error::invalid("duplicate person id in one frame"));
                }
                found = Some(q);
            }
        }
        if let Some(q) = found {
            out_a.push(p.clone());
            out_b.push(q.clone());
        }
    }
    Ok((out_a, out_b))
}

/// Forward and backward terms of the temporal vector field loss.
///
/// The forward field is read at frame-`t` joints against `p - c_prev`; the
/// backward field is read at frame-`t-1` joints against `p - c_t`. People
/// present in only one frame are left out of both terms.
pub fn tvf_loss_terms(
    tape: &mut Tape,
    forward: Var,
    backward: Var,
    shape: GridShape,
    poses_t: &[Pose],
    poses_prev: &[Pose],
) -> Result<(Var, Var)> {
    for v in [forward, backward] {
        let (r, c) = tape.shape(v)?;
        if r * c != 2 * shape.len() {
            return Err(Error::ShapeMismatch {
                expected: (2 * shape.len(), 1),
                found: (r, c),
            });
        }
    }
    let (cur, prev) = shared_people(poses_t, poses_prev)?;
    if cur.is_empty() {
        let z = tape.scalar_constant(0.0);
        return Ok((z, z));
    }
    let k = cur.len();
    let c_cur: Vec<[f64; 2]> = cur.iter().map(Pose::center).collect();
    let c_prev: Vec<[f64; 2]> = prev.iter().map(Pose::center).collect();
    let s_cur = JointSamples::collect(shape, &cur)?;
    let s_prev = JointSamples::collect(shape, &prev)?;
    let fwd = offset_l1(tape, forward, &s_cur, &c_prev, 1.0 / (s_cur.joints * k) as f64)?;
    let bwd = offset_l1(tape, backward, &s_prev, &c_cur, 1.0 / (s_prev.joints * k) as f64)?;
    Ok((fwd, bwd))
}

pub fn tvf_loss(
    tape: &mut Tape,
    forward: Var,
    backward: Var,
    shape: GridShape,
    poses_t: &[Pose],
    poses_prev: &[Pose],
) -> Result<Var> {
    let (f, b) = tvf_loss_terms(tape, forward, backward, shape, poses_t, poses_prev)?;
    tape.add(f, b)
}

/// Value and gradient with respect to `[forward; backward]`, both
/// interleaved.
pub fn tvf_loss_value(fields: &TemporalFields, poses_t: &[Pose], poses_prev: &[Pose]) -> Result<Evaluated> {
    let shape = fields.shape();
    let mut input = fields.forward.to_interleaved();
    input.extend(fields.backward.to_interleaved());
    let half = 2 * shape.len();
    evaluate(&input, |t, v| {
        let f = t.gather(v, (0..half).collect(), half, 1)?;
        let b = t.gather(v, (half..2 * half).collect(), half, 1)?;
        tvf_loss(t, f, b, shape, poses_t, poses_prev)
    })
}

/// `sum_i max(0, |a_i - p_i|^2 - |a_i - n_i|^2 + alpha)` over rows of three
/// aligned `T x E` variables.
pub fn he_triplet_loss(tape: &mut Tape, anchors: Var, positives: Var, negatives: Var, alpha: f64) -> Result<Var> {
    let sa = tape.shape(anchors)?;
    if tape.shape(positives)? != sa || tape.shape(negatives)? != sa {
        return Err(Error::invalid("triplet lists are not aligned"));
    }
    if sa.0 == 0 {
        return Ok(tape.scalar_constant(0.0));
    }
    let dp = tape.sub(anchors, positives)?;
    let dp = tape.square(dp)?;
    let dp = tape.sum_cols(dp)?;
    let dn = tape.sub(anchors, negatives)?;
    let dn = tape.square(dn)?;
    let dn = tape.sum_cols(dn)?;
    let gap = tape.sub(dp, dn)?;
    let gap = tape.add_scalar(gap, alpha)?;
    let zero = tape.scalar_constant(0.0);
    let hinge = tape.max(gap, zero)?;
    tape.sum(hinge)
}

/// Value and gradient with respect to the stacked `[anchors; positives;
/// negatives]` vectors.
pub fn he_triplet_loss_value(
    anchors: &[HumanEmbedding],
    positives: &[HumanEmbedding],
    negatives: &[HumanEmbedding],
    alpha: f64,
) -> Result<Evaluated> {
    let t = anchors.len();
    if positives.len() != t || negatives.len() != t {
        return Err(Error::invalid("triplet lists are not aligned"));
    }
    let e = anchors.first().map_or(0, HumanEmbedding::len);
    let mut input = Vec::with_capacity(3 * t * e);
    for h in anchors.iter().chain(positives).chain(negatives) {
        if h.len() != e {
            return Err(Error::invalid("human embeddings differ in length"));
        }
        input.extend_from_slice(&h.vector);
    }
    let block = t * e;
    evaluate(&input, |tape, v| {
        let a = tape.gather(v, (0..block).collect(), t, e)?;
        let p = tape.gather(v, (block..2 * block).collect(), t, e)?;
        let n = tape.gather(v, (2 * block..3 * block).collect(), t, e)?;
        he_triplet_loss(tape, a, p, n, alpha)
    })
}

/// Squared Euclidean distance between two human embeddings.
pub fn psi_he(a: &HumanEmbedding, b: &HumanEmbedding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("human embeddings differ in length"));
    }
    Ok(a.vector.iter().zip(&b.vector).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Decoded center fields of two consecutive frames.
#[derive(Debug, Clone, Copy)]
pub struct CenterFields<'a> {
    pub sie_t: &'a VectorField2,
    pub sie_prev: &'a VectorField2,
    /// Forward embedding on frame `t`.
    pub tie_forward: &'a VectorField2,
    /// Backward embedding on frame `t - 1`.
    pub tie_backward: &'a VectorField2,
}

/// Temporal smoothness between a frame-`t` pose and a frame-`t-1` pose:
/// `1/(2J) sum_j |T'(p_prev) - S_t(p_t)|^2 + |T(p_t) - S_prev(p_prev)|^2`
/// over the joints present in both. `None` when no joint is shared.
pub fn psi_tie(pose_t: &Pose, pose_prev: &Pose, fields: &CenterFields<'_>) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (a, b) in pose_t.keypoints().iter().zip(pose_prev.keypoints()) {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let back = fields.tie_backward.sample(b.x, b.y, Sampling::Nearest);
        let s_t = fields.sie_t.sample(a.x, a.y, Sampling::Nearest);
        let fwd = fields.tie_forward.sample(a.x, a.y, Sampling::Nearest);
        let s_prev = fields.sie_prev.sample(b.x, b.y, Sampling::Nearest);
        sum += sq(back, s_t) + sq(fwd, s_prev);
        shared += 1;
    }
    (shared > 0).then(|| sum / (2 * shared) as f64)
}

fn sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
}

/// `lambda_he * d_he + lambda_tie * d_tie`; lower means more alike.
pub fn combined_cost(d_he: f64, d_tie: f64, lambda_he: f64, lambda_tie: f64) -> f64 {
    lambda_he * d_he + lambda_tie * d_tie
}

//! Keypoint-embedding grouping losses, ordinal auxiliary losses, the spatial
//! vector field loss and SVF to SIE decoding.
//!
//! Embedding fields enter the losses as tape variables holding the raw field
//! values (`W * H` for scalar maps, `2 * W * H` interleaved for vector
//! fields), so gradients come back in field layout.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{evaluate, Evaluated, Tape, Var};
use crate::grid::{coordinate_grid, GridShape, Pose, ScalarField, Skeleton, VectorField2};
use crate::{Error, Result};

/// Geometric ordering used by an auxiliary ordinal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OrderRelation {
    L2r,
    R2l,
    T2b,
    B2t,
    F2n,
    N2f,
}

impl OrderRelation {
    pub const ALL: [OrderRelation; 6] = [
        OrderRelation::L2r,
        OrderRelation::R2l,
        OrderRelation::T2b,
        OrderRelation::B2t,
        OrderRelation::F2n,
        OrderRelation::N2f,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OrderRelation::L2r => "l2r",
            OrderRelation::R2l => "r2l",
            OrderRelation::T2b => "t2b",
            OrderRelation::B2t => "b2t",
            OrderRelation::F2n => "f2n",
            OrderRelation::N2f => "n2f",
        }
    }

    /// Sort key and whether it ascends.
    fn key(self, pose: &Pose, skeleton: &Skeleton) -> Result<(f64, bool)> {
        let c = pose.center();
        Ok(match self {
            OrderRelation::L2r => (c[0], true),
            OrderRelation::R2l => (c[0], false),
            OrderRelation::T2b => (c[1], true),
            OrderRelation::B2t => (c[1], false),
            OrderRelation::F2n | OrderRelation::N2f => {
                let size = pose
                    .head_size_sq(skeleton)
                    .ok_or_else(|| Error::invalid("depth ordering needs head top and neck"))?;
                (size, self == OrderRelation::F2n)
            }
        })
    }
}

/// Pairwise ground-truth order: `+1` when person `k` precedes `k'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdMatrix {
    k: usize,
    entries: Vec<i8>,
}

impl OrdMatrix {
    pub fn new(k: usize, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::invalid("order matrix must be K x K"));
        }
        Ok(OrdMatrix { k, entries })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Entry for `(a, b)`; zero on the diagonal.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> i8 {
        self.entries[a * self.k + b]
    }
}

/// Orders people by centroid position (`l2r`, `r2l`, `t2b`, `b2t`) or by
/// squared head size (`f2n`, `n2f`). Ties go to the lower person index.
pub fn ground_truth_order(poses: &[Pose], relation: OrderRelation, skeleton: &Skeleton) -> Result<OrdMatrix> {
    let keys = poses
        .iter()
        .map(|p| relation.key(p, skeleton))
        .collect::<Result<Vec<_>>>()?;
    let k = poses.len();
    let mut entries = vec![0i8; k * k];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let (ka, asc) = keys[a];
            let kb = keys[b].0;
            let before = if ka == kb {
                a < b
            } else if asc {
                ka < kb
            } else {
                ka > kb
            };
            entries[a * k + b] = if before { 1 } else { -1 };
        }
    }
    OrdMatrix::new(k, entries)
}

/// Keypoint pixels of a set of people, flattened person by person.
#[derive(Debug, Clone)]
pub(crate) struct JointSamples {
    pub pixels: Vec<usize>,
    pub positions: Vec<[f64; 2]>,
    pub person: Vec<usize>,
    pub counts: Vec<usize>,
    pub joints: usize,
}

impl JointSamples {
    pub fn collect(shape: GridShape, poses: &[Pose]) -> Result<Self> {
        let joints = poses.first().map_or(0, Pose::joint_count);
        let mut s = JointSamples {
            pixels: Vec::new(),
            positions: Vec::new(),
            person: Vec::new(),
            counts: Vec::with_capacity(poses.len()),
            joints,
        };
        for (k, pose) in poses.iter().enumerate() {
            if pose.joint_count() != joints {
                return Err(Error::invalid("poses disagree on joint count"));
            }
            let mut n = 0;
            for kp in pose.present() {
                let px = shape
                    .nearest_pixel(kp.x, kp.y)
                    .ok_or_else(|| Error::invalid("keypoint lies outside the grid"))?;
                s.pixels.push(px);
                s.positions.push([kp.x, kp.y]);
                s.person.push(k);
                n += 1;
            }
            s.counts.push(n);
        }
        Ok(s)
    }

    pub fn people(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }
}

/// `n x K` matrix averaging columns per group.
fn averaging_matrix(membership: &[usize], counts: &[usize]) -> Vec<f64> {
    let k = counts.len();
    let mut a = vec![0.0; membership.len() * k];
    for (i, &m) in membership.iter().enumerate() {
        a[i * k + m] = 1.0 / counts[m] as f64;
    }
    a
}

/// Per-group mean of the columns of `samples` (`d x n`), as `d x K`.
pub(crate) fn group_means(tape: &mut Tape, samples: Var, membership: &[usize], counts: &[usize]) -> Result<Var> {
    let avg = averaging_matrix(membership, counts);
    let a = tape.constant(avg, membership.len(), counts.len())?;
    tape.matmul(samples, a)
}

/// Weighted squared deviation of every column from its group mean.
pub(crate) fn pull_term(
    tape: &mut Tape,
    samples: Var,
    membership: &[usize],
    counts: &[usize],
    weights: Vec<f64>,
) -> Result<Var> {
    let refs = group_means(tape, samples, membership, counts)?;
    let k = counts.len();
    let n = membership.len();
    let mut spread = vec![0.0; k * n];
    for (i, &m) in membership.iter().enumerate() {
        spread[m * n + i] = 1.0;
    }
    let e = tape.constant(spread, k, n)?;
    let expanded = tape.matmul(refs, e)?;
    let diff = tape.sub(samples, expanded)?;
    let sq = tape.square(diff)?;
    let w = tape.constant(weights, 1, n)?;
    let weighted = tape.mul(sq, w)?;
    tape.sum(weighted)
}

/// `1/K^2 * sum_k sum_k' exp(-|r_k - r_k'|^2 / 2)` over the columns of
/// `refs` (`d x K`), diagonal included.
pub(crate) fn push_term(tape: &mut Tape, refs: Var) -> Result<Var> {
    let (_, k) = tape.shape(refs)?;
    let d = tape.pairwise_sq_dist(refs)?;
    let h = tape.scale(d, -0.5)?;
    let e = tape.exp(h)?;
    let s = tape.sum(e)?;
    tape.scale(s, 1.0 / (k * k) as f64)
}

fn expect_len(tape: &Tape, v: Var, len: usize) -> Result<()> {
    let (r, c) = tape.shape(v)?;
    if r * c != len {
        return Err(Error::ShapeMismatch {
            expected: (len, 1),
            found: (r, c),
        });
    }
    Ok(())
}

fn zero(tape: &mut Tape) -> Var {
    tape.scalar_constant(0.0)
}

fn sample_row(tape: &mut Tape, field: Var, samples: &JointSamples) -> Result<Var> {
    tape.gather(field, samples.pixels.clone(), 1, samples.len())
}

/// `1/(J K) sum_k sum_j (m(p_jk) - mean_k)^2` on a scalar embedding map.
pub fn pull_loss(tape: &mut Tape, ke: Var, shape: GridShape, poses: &[Pose]) -> Result<Var> {
    expect_len(tape, ke, shape.len())?;
    let s = JointSamples::collect(shape, poses)?;
    if s.people() == 0 {
        return Ok(zero(tape));
    }
    let row = sample_row(tape, ke, &s)?;
    let w = 1.0 / (s.joints * s.people()) as f64;
    pull_term(tape, row, &s.person, &s.counts, vec![w; s.len()])
}

/// `1/K^2 sum_k sum_k' exp(-(mean_k - mean_k')^2 / 2)`, including `k = k'`.
pub fn push_loss(tape: &mut Tape, ke: Var, shape: GridShape, poses: &[Pose]) -> Result<Var> {
    expect_len(tape, ke, shape.len())?;
    let s = JointSamples::collect(shape, poses)?;
    if s.people() == 0 {
        return Ok(zero(tape));
    }
    let row = sample_row(tape, ke, &s)?;
    let refs = group_means(tape, row, &s.person, &s.counts)?;
    push_term(tape, refs)
}

/// Ordinal loss on one auxiliary map plus the pull term on the same map.
/// The `k = k'` pairs, where no order exists, are skipped.
pub fn aux_ordinal_loss(
    tape: &mut Tape,
    aux: Var,
    shape: GridShape,
    poses: &[Pose],
    ord: &OrdMatrix,
) -> Result<Var> {
    expect_len(tape, aux, shape.len())?;
    let s = JointSamples::collect(shape, poses)?;
    let k = s.people();
    if ord.len() != k {
        return Err(Error::invalid("order matrix does not match the number of people"));
    }
    if k == 0 {
        return Ok(zero(tape));
    }
    let row = sample_row(tape, aux, &s)?;
    let w = 1.0 / (s.joints * k) as f64;
    let pull = pull_term(tape, row, &s.person, &s.counts, vec![w; s.len()])?;
    if k < 2 {
        return Ok(pull);
    }
    let refs = group_means(tape, row, &s.person, &s.counts)?;
    let col = tape.transpose(refs)?;
    let diff = tape.sub(col, refs)?; // (a, b) -> mean_a - mean_b
    let signs: Vec<f64> = ord.entries.iter().map(|&o| o as f64).collect();
    let sc = tape.constant(signs, k, k)?;
    let z = tape.mul(diff, sc)?;
    let sp = tape.softplus(z)?;
    let mut off = vec![1.0; k * k];
    for a in 0..k {
        off[a * k + a] = 0.0;
    }
    let offc = tape.constant(off, k, k)?;
    let masked = tape.mul(sp, offc)?;
    let total = tape.sum(masked)?;
    let ordinal = tape.scale(total, 1.0 / (k * k) as f64)?;
    tape.add(ordinal, pull)
}

/// Sum of the six ordinal losses, one per relation, each on its own map.
pub fn aux_total_loss(
    tape: &mut Tape,
    maps: &[Var],
    shape: GridShape,
    poses: &[Pose],
    skeleton: &Skeleton,
) -> Result<Var> {
    if maps.len() != OrderRelation::ALL.len() {
        return Err(Error::invalid("expected six auxiliary maps"));
    }
    let mut total = zero(tape);
    for (rel, &map) in OrderRelation::ALL.iter().zip(maps) {
        let ord = ground_truth_order(poses, *rel, skeleton)?;
        let l = aux_ordinal_loss(tape, map, shape, poses, &ord)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}

/// `1/(J K) sum |S^(p_jk) - (p_jk - c_k)|_1` with `c_k` the mean of the
/// person's present joints. `svf` holds interleaved `(dx, dy)` values.
pub fn svf_loss(tape: &mut Tape, svf: Var, shape: GridShape, poses: &[Pose]) -> Result<Var> {
    expect_len(tape, svf, 2 * shape.len())?;
    let s = JointSamples::collect(shape, poses)?;
    if s.people() == 0 {
        return Ok(zero(tape));
    }
    let centers: Vec<[f64; 2]> = poses.iter().map(Pose::center).collect();
    offset_l1(tape, svf, &s, &centers, 1.0 / (s.joints * s.people()) as f64)
}

/// Shared body of the SVF and TVF losses: weighted L1 distance between the
/// field at each sample and `position - target_center[person]`.
pub(crate) fn offset_l1(
    tape: &mut Tape,
    field: Var,
    samples: &JointSamples,
    target_centers: &[[f64; 2]],
    weight: f64,
) -> Result<Var> {
    let n = samples.len();
    let mut idx = Vec::with_capacity(2 * n);
    let mut target = Vec::with_capacity(2 * n);
    for i in 0..n {
        let c = target_centers[samples.person[i]];
        let p = samples.positions[i];
        idx.push(2 * samples.pixels[i]);
        idx.push(2 * samples.pixels[i] + 1);
        target.push(p[0] - c[0]);
        target.push(p[1] - c[1]);
    }
    let g = tape.gather(field, idx, 2 * n, 1)?;
    let t = tape.constant(target, 2 * n, 1)?;
    let d = tape.sub(g, t)?;
    let a = tape.abs(d)?;
    let s = tape.sum(a)?;
    tape.scale(s, weight)
}

/// Predicted person centers `S(p) = p - S^(p)`.
pub fn decode_sie(svf: &VectorField2) -> VectorField2 {
    subtract_from_coordinates(svf)
}

pub(crate) fn subtract_from_coordinates(field: &VectorField2) -> VectorField2 {
    let coords = coordinate_grid(field.shape());
    let values = coords
        .values()
        .iter()
        .zip(field.values())
        .map(|(p, v)| [p[0] - v[0], p[1] - v[1]])
        .collect();
    VectorField2::new(field.shape(), values).expect("finite inputs give finite outputs")
}

/// Reference embedding per person: mean of the map at the person's joints.
pub fn reference_embeddings(map: &ScalarField, poses: &[Pose]) -> Result<Vec<f64>> {
    let s = JointSamples::collect(map.shape(), poses)?;
    let mut sums = vec![0.0; s.people()];
    for (i, &px) in s.pixels.iter().enumerate() {
        sums[s.person[i]] += map.at(px);
    }
    Ok(sums
        .iter()
        .zip(&s.counts)
        .map(|(sum, &n)| sum / n as f64)
        .collect())
}

pub fn pull_loss_value(ke: &ScalarField, poses: &[Pose]) -> Result<Evaluated> {
    evaluate(ke.values(), |t, v| pull_loss(t, v, ke.shape(), poses))
}

pub fn push_loss_value(ke: &ScalarField, poses: &[Pose]) -> Result<Evaluated> {
    evaluate(ke.values(), |t, v| push_loss(t, v, ke.shape(), poses))
}

pub fn aux_ordinal_loss_value(aux: &ScalarField, poses: &[Pose], ord: &OrdMatrix) -> Result<Evaluated> {
    evaluate(aux.values(), |t, v| aux_ordinal_loss(t, v, aux.shape(), poses, ord))
}

pub fn svf_loss_value(svf: &VectorField2, poses: &[Pose]) -> Result<Evaluated> {
    evaluate(&svf.to_interleaved(), |t, v| svf_loss(t, v, svf.shape(), poses))
}

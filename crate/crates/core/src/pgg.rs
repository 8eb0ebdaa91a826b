//! Mask-restricted embedding refinement by Gaussian blurring mean shift,
//! with grouping losses over every iterate.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{matmul_raw, pairwise_sq_dist_raw};
use crate::autodiff::{evaluate, Evaluated, Tape, Var};
use crate::grid::{GridShape, Pose, ScalarField, VectorField2};
use crate::heatmap::BinaryMask;
use crate::math;
use crate::spatial::{pull_term, push_term};
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 5.0;
pub const DEFAULT_ITERATIONS: usize = 1;

/// Affinity kernel between two columns at squared distance `d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelMode {
    /// `exp(-delta^2 / 2 * d2)`: larger `delta` means a sharper kernel.
    #[default]
    Sharpness,
    /// `exp(-d2 / (2 delta^2))`: the usual bandwidth convention.
    Inverse,
}

impl KernelMode {
    /// Factor `c` such that the affinity is `exp(-c * d2)`.
    pub fn coefficient(self, delta: f64) -> f64 {
        match self {
            KernelMode::Sharpness => 0.5 * delta * delta,
            KernelMode::Inverse => 0.5 / (delta * delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PggConfig {
    pub delta: f64,
    pub iterations: usize,
    pub kernel: KernelMode,
    /// Multiplier per embedding row before grouping (KE, then SIE x, y).
    /// Empty means all ones.
    pub channel_scales: Vec<f64>,
}

impl Default for PggConfig {
    fn default() -> Self {
        PggConfig {
            delta: DEFAULT_DELTA,
            iterations: DEFAULT_ITERATIONS,
            kernel: KernelMode::Sharpness,
            channel_scales: Vec::new(),
        }
    }
}

impl PggConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("pgg delta must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("pgg needs at least one iteration"));
        }
        if self.channel_scales.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
            return Err(Error::invalid("channel scales must be finite and nonzero"));
        }
        Ok(())
    }

    fn scale(&self, row: usize) -> f64 {
        self.channel_scales.get(row).copied().unwrap_or(1.0)
    }
}

/// `D x N` matrix, row-major; column `i` is the embedding of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dims: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dims: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims * cols {
            return Err(Error::ShapeMismatch {
                expected: (dims, cols),
                found: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding matrix has non-finite entries"));
        }
        Ok(EmbeddingMatrix { dims, cols, values })
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dims = columns.first().map_or(0, Vec::len);
        let n = columns.len();
        let mut values = vec![0.0; dims * n];
        for (c, col) in columns.iter().enumerate() {
            if col.len() != dims {
                return Err(Error::invalid("columns differ in length"));
            }
            for (r, v) in col.iter().enumerate() {
                values[r * n + c] = *v;
            }
        }
        Self::new(dims, n, values)
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.dims).map(|r| self.get(r, col)).collect()
    }

    /// Multiplies each row by its scale (missing scales count as one).
    pub fn scale_rows(&self, scales: &[f64]) -> EmbeddingMatrix {
        let mut out = self.clone();
        for r in 0..self.dims {
            let s = scales.get(r).copied().unwrap_or(1.0);
            for v in &mut out.values[r * self.cols..(r + 1) * self.cols] {
                *v *= s;
            }
        }
        out
    }
}

/// Row-major pixel indices of the gathered columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskIndex {
    pixels: Vec<usize>,
}

impl MaskIndex {
    pub fn new(pixels: Vec<usize>) -> Result<Self> {
        if pixels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mask index must be strictly increasing"));
        }
        Ok(MaskIndex { pixels })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// A field contributing rows to the embedding matrix.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Scalar(&'a ScalarField),
    Vector(&'a VectorField2),
}

impl EmbeddingSource<'_> {
    fn shape(&self) -> GridShape {
        match self {
            EmbeddingSource::Scalar(f) => f.shape(),
            EmbeddingSource::Vector(f) => f.shape(),
        }
    }

    fn rows(&self) -> usize {
        match self {
            EmbeddingSource::Scalar(_) => 1,
            EmbeddingSource::Vector(_) => 2,
        }
    }
}

/// Stacks the masked pixels of each field into columns.
pub fn gather_masked(fields: &[EmbeddingSource<'_>], mask: &BinaryMask) -> Result<(EmbeddingMatrix, MaskIndex)> {
    for f in fields {
        if f.shape() != mask.shape() {
            return Err(Error::invalid("field and mask shapes differ"));
        }
    }
    let pixels = mask.indices();
    let n = pixels.len();
    let dims: usize = fields.iter().map(EmbeddingSource::rows).sum();
    let mut values = Vec::with_capacity(dims * n);
    for f in fields {
        match f {
            EmbeddingSource::Scalar(s) => values.extend(pixels.iter().map(|&p| s.at(p))),
            EmbeddingSource::Vector(v) => {
                for c in 0..2 {
                    values.extend(pixels.iter().map(|&p| v.at(p)[c]));
                }
            }
        }
    }
    Ok((EmbeddingMatrix { dims, cols: n, values }, MaskIndex { pixels }))
}

/// Materialized `N x N` affinity matrix.
pub fn affinity_matrix(x: &EmbeddingMatrix, delta: f64, kernel: KernelMode) -> Vec<f64> {
    let c = kernel.coefficient(delta);
    let mut w = pairwise_sq_dist_raw(&x.values, x.dims, x.cols);
    for v in &mut w {
        *v = math::exp(-c * *v);
    }
    w
}

/// One blurring mean-shift update with the default kernel.
pub fn gbms_iterate(x: &EmbeddingMatrix, delta: f64) -> Result<EmbeddingMatrix> {
    gbms_iterate_with(x, delta, KernelMode::Sharpness)
}

/// `X' = X W D^-1` with `D = diag(W 1)`: column `j` becomes the
/// affinity-weighted mean of all columns.
pub fn gbms_iterate_with(x: &EmbeddingMatrix, delta: f64, kernel: KernelMode) -> Result<EmbeddingMatrix> {
    if x.cols == 0 {
        return Err(Error::invalid("mean shift needs at least one column"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta must be positive"));
    }
    let n = x.cols;
    let w = affinity_matrix(x, delta, kernel);
    let mut colsum = vec![0.0; n];
    for row in w.chunks_exact(n) {
        for (s, v) in colsum.iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut out = matmul_raw(&x.values, &w, x.dims, n, n);
    drop(w);
    for row in out.chunks_exact_mut(n) {
        for (v, s) in row.iter_mut().zip(&colsum) {
            *v /= s;
        }
    }
    EmbeddingMatrix::new(x.dims, n, out)
}

/// All iterates of one forward pass, the input first.
#[derive(Debug, Clone, PartialEq)]
pub struct PggTrace {
    pub iterates: Vec<EmbeddingMatrix>,
    pub delta: f64,
    pub iterations: usize,
    pub kernel: KernelMode,
}

impl PggTrace {
    pub fn last(&self) -> &EmbeddingMatrix {
        self.iterates.last().expect("trace holds at least the input")
    }
}

pub fn pgg_forward(x0: &EmbeddingMatrix, delta: f64, iterations: usize) -> Result<PggTrace> {
    pgg_forward_with(x0, delta, iterations, KernelMode::Sharpness)
}

pub fn pgg_forward_with(x0: &EmbeddingMatrix, delta: f64, iterations: usize, kernel: KernelMode) -> Result<PggTrace> {
    if iterations == 0 {
        return Err(Error::invalid("pgg needs at least one iteration"));
    }
    let mut iterates = Vec::with_capacity(iterations + 1);
    iterates.push(x0.clone());
    for _ in 0..iterations {
        let next = gbms_iterate_with(iterates.last().unwrap(), delta, kernel)?;
        iterates.push(next);
    }
    Ok(PggTrace {
        iterates,
        delta,
        iterations,
        kernel,
    })
}

/// Records one mean-shift update of a `D x N` variable.
pub fn gbms_iterate_tape(tape: &mut Tape, x: Var, delta: f64, kernel: KernelMode) -> Result<Var> {
    let d = tape.pairwise_sq_dist(x)?;
    let h = tape.scale(d, -kernel.coefficient(delta))?;
    let w = tape.exp(h)?;
    let colsum = tape.sum_rows(w)?;
    let inv = tape.reciprocal(colsum)?;
    let xw = tape.matmul(x, w)?;
    tape.mul(xw, inv)
}

/// Dense person labels for the labeled columns.
struct Labels {
    columns: Vec<usize>,
    person: Vec<usize>,
    counts: Vec<usize>,
}

impl Labels {
    fn new(labels: &[Option<u32>]) -> Self {
        let mut dense = BTreeMap::new();
        for id in labels.iter().flatten() {
            let next = dense.len();
            dense.entry(*id).or_insert(next);
        }
        let mut l = Labels {
            columns: Vec::new(),
            person: Vec::new(),
            counts: vec![0; dense.len()],
        };
        for (c, id) in labels.iter().enumerate() {
            if let Some(id) = id {
                let k = dense[id];
                l.columns.push(c);
                l.person.push(k);
                l.counts[k] += 1;
            }
        }
        l
    }

    fn weights(&self) -> Vec<f64> {
        let k = self.counts.len() as f64;
        self.person.iter().map(|&p| 1.0 / (k * self.counts[p] as f64)).collect()
    }
}

/// Pull plus push on the labeled columns of one `D x N` iterate.
///
/// The pull term is `1/K sum_k 1/n_k sum_i |x_i - ref_k|^2`, where `n_k` is
/// the number of columns labeled `k`; the push term matches the keypoint
/// embedding push loss with references as column means.
fn iterate_loss(tape: &mut Tape, x: Var, labels: &Labels) -> Result<Var> {
    let (dims, n) = tape.shape(x)?;
    let m = labels.columns.len();
    let mut idx = Vec::with_capacity(dims * m);
    for r in 0..dims {
        idx.extend(labels.columns.iter().map(|&c| r * n + c));
    }
    let sel = tape.gather(x, idx, dims, m)?;
    let pull = pull_term(tape, sel, &labels.person, &labels.counts, labels.weights())?;
    let refs = crate::spatial::group_means(tape, sel, &labels.person, &labels.counts)?;
    let push = push_term(tape, refs)?;
    tape.add(pull, push)
}

/// Runs `iterations` updates from `x0` on the tape and sums the grouping
/// loss over every iterate, the input included. Columns labeled `None` are
/// carried through the updates but left out of the loss.
pub fn pgg_grouping_loss(
    tape: &mut Tape,
    x0: Var,
    labels: &[Option<u32>],
    delta: f64,
    iterations: usize,
    kernel: KernelMode,
) -> Result<Var> {
    let (_, n) = tape.shape(x0)?;
    if labels.len() != n {
        return Err(Error::invalid("one label per column required"));
    }
    if iterations == 0 {
        return Err(Error::invalid("empty trace"));
    }
    let l = Labels::new(labels);
    let mut x = x0;
    let mut total = tape.scalar_constant(0.0);
    for step in 0..=iterations {
        if step > 0 {
            x = gbms_iterate_tape(tape, x, delta, kernel)?;
        }
        if !l.counts.is_empty() {
            let term = iterate_loss(tape, x, &l)?;
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Grouping loss of a finished trace, without gradients.
pub fn trace_grouping_loss(trace: &PggTrace, labels: &[Option<u32>]) -> Result<f64> {
    if trace.iterates.is_empty() {
        return Err(Error::invalid("empty trace"));
    }
    let l = Labels::new(labels);
    let mut tape = Tape::new();
    let mut total = 0.0;
    for x in &trace.iterates {
        if labels.len() != x.cols {
            return Err(Error::invalid("one label per column required"));
        }
        if l.counts.is_empty() {
            continue;
        }
        tape.clear();
        let v = tape.constant(x.values.clone(), x.dims, x.cols)?;
        let term = iterate_loss(&mut tape, v, &l)?;
        total += tape.scalar(term)?;
    }
    Ok(total)
}

/// Value and gradient with respect to `x0` (row-major `D x N`).
pub fn pgg_grouping_loss_value(
    x0: &EmbeddingMatrix,
    labels: &[Option<u32>],
    delta: f64,
    iterations: usize,
    kernel: KernelMode,
) -> Result<Evaluated> {
    let (d, n) = (x0.dims, x0.cols);
    evaluate(&x0.values, |t, v| {
        let x = t.reshape(v, d, n)?;
        pgg_grouping_loss(t, x, labels, delta, iterations, kernel)
    })
}

/// Person id of every masked pixel: the owner of the nearest ground-truth
/// keypoint within `radius`, else `None`.
pub fn label_columns(index: &MaskIndex, shape: GridShape, poses: &[Pose], radius: f64) -> Vec<Option<u32>> {
    let r2 = radius * radius;
    index
        .pixels
        .iter()
        .map(|&p| {
            let (x, y) = shape.pixel(p);
            let (x, y) = (x as f64, y as f64);
            let mut best: Option<(f64, u32)> = None;
            for (k, pose) in poses.iter().enumerate() {
                let id = pose.person_id.unwrap_or(k as u32);
                for kp in pose.present() {
                    let d = (kp.x - x) * (kp.x - x) + (kp.y - y) * (kp.y - y);
                    if d <= r2 && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, id));
                    }
                }
            }
            best.map(|(_, id)| id)
        })
        .collect()
}

/// Refined embeddings written back onto the grid; pixels outside the mask
/// are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedField {
    shape: GridShape,
    dims: usize,
    present: Vec<bool>,
    values: Vec<f64>,
}

impl RefinedField {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Embedding at a row-major pixel index, or `None` when absent.
    pub fn at(&self, index: usize) -> Option<&[f64]> {
        self.present[index].then(|| &self.values[index * self.dims..(index + 1) * self.dims])
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&[f64]> {
        self.at(self.shape.index(x, y))
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }
}

pub fn scatter_back(x: &EmbeddingMatrix, index: &MaskIndex, shape: GridShape) -> Result<RefinedField> {
    if index.len() != x.cols {
        return Err(Error::invalid("index length differs from column count"));
    }
    if index.pixels.iter().any(|&p| p >= shape.len()) {
        return Err(Error::invalid("mask index out of bounds"));
    }
    let mut out = RefinedField {
        shape,
        dims: x.dims,
        present: vec![false; shape.len()],
        values: vec![0.0; shape.len() * x.dims],
    };
    for (c, &p) in index.pixels.iter().enumerate() {
        out.present[p] = true;
        for r in 0..x.dims {
            out.values[p * x.dims + r] = x.get(r, c);
        }
    }
    Ok(out)
}

/// Element count of the masked affinity matrix relative to the full-image
/// one: `(N / (W H))^2`.
pub fn affinity_memory_ratio(mask: &BinaryMask) -> f64 {
    let rho = mask.occupancy() as f64 / mask.shape().len() as f64;
    rho * rho
}

/// Gathers the masked embeddings, applies the configured scales, runs the
/// configured number of updates and scatters the result back with the
/// scales removed.
pub fn refine(fields: &[EmbeddingSource<'_>], mask: &BinaryMask, cfg: &PggConfig) -> Result<RefinedField> {
    cfg.validate()?;
    let (x, index) = gather_masked(fields, mask)?;
    if x.cols == 0 {
        return scatter_back(&x, &index, mask.shape());
    }
    let scales: Vec<f64> = (0..x.dims).map(|r| cfg.scale(r)).collect();
    let trace = pgg_forward_with(&x.scale_rows(&scales), cfg.delta, cfg.iterations, cfg.kernel)?;
    let inv: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
    scatter_back(&trace.last().scale_rows(&inv), &index, mask.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;

    fn row(v: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn two_cluster_step() {
        let out = gbms_iterate(&row(&[0.0, 0.1, 10.0, 10.1]), 5.0).unwrap();
        // within-cluster affinity a = e^{-0.125}; cross terms vanish
        let a = (-0.125f64).exp();
        let lo = 0.1 * a / (1.0 + a);
        let hi = 0.1 / (1.0 + a);
        let expect = [lo, hi, 10.0 + lo, 10.0 + hi];
        for (o, e) in out.values().iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
        let quoted = [0.046880, 0.053121, 10.046880, 10.053121];
        for (o, e) in out.values().iter().zip(quoted) {
            assert!((o - e).abs() < 1e-6);
        }
        assert!((out.get(0, 1) - out.get(0, 0) - 0.006241).abs() < 1e-6);
    }

    #[test]
    fn fixed_point() {
        let x = EmbeddingMatrix::from_columns(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let t = pgg_forward(&x, 5.0, 3).unwrap();
        assert_eq!(t.iterates.len(), 4);
        for it in &t.iterates {
            assert_eq!(it, &x);
        }
    }

    #[test]
    fn variance_shrinks_per_step() {
        let t = pgg_forward(&row(&[0.0, 0.1, 10.0, 10.1]), 5.0, 2).unwrap();
        let mut last = f64::INFINITY;
        for it in &t.iterates {
            let v = variance(&it.values()[..2]);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn inverse_kernel_is_wider() {
        let x = row(&[0.0, 1.0]);
        let sharp = gbms_iterate_with(&x, 5.0, KernelMode::Sharpness).unwrap();
        let wide = gbms_iterate_with(&x, 5.0, KernelMode::Inverse).unwrap();
        assert!(sharp.get(0, 0) < 1e-5);
        assert!(wide.get(0, 0) > 0.4);
    }

    #[test]
    fn gather_shapes() {
        let shape = GridShape::new(2, 2).unwrap();
        let ke = ScalarField::new(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (x, idx) = gather_masked(&[EmbeddingSource::Scalar(&ke)], &BinaryMask::full(shape)).unwrap();
        assert_eq!((x.dims(), x.cols()), (1, 4));
        assert_eq!(x.values(), ke.values());
        assert_eq!(idx.pixels(), &[0, 1, 2, 3]);

        let svf = VectorField2::new(shape, vec![[5.0, 6.0], [7.0, 8.0], [9.0, 10.0], [11.0, 12.0]]).unwrap();
        let mask = BinaryMask::new(shape, vec![true, false, true, true]).unwrap();
        let src = [EmbeddingSource::Scalar(&ke), EmbeddingSource::Vector(&svf)];
        let (x, idx) = gather_masked(&src, &mask).unwrap();
        assert_eq!((x.dims(), x.cols()), (3, 3));
        assert_eq!(x.column(1), vec![3.0, 9.0, 10.0]);

        let back = scatter_back(&x, &idx, shape).unwrap();
        assert_eq!(back.get(0, 0), Some(&[1.0, 5.0, 6.0][..]));
        assert_eq!(back.get(1, 0), None);
        assert_eq!(back.get(1, 1), Some(&[4.0, 11.0, 12.0][..]));

        let empty = BinaryMask::new(shape, vec![false; 4]).unwrap();
        let (x, idx) = gather_masked(&src, &empty).unwrap();
        assert_eq!(x.cols(), 0);
        assert_eq!(scatter_back(&x, &idx, shape).unwrap().present_count(), 0);
    }

    #[test]
    fn scatter_rejects_bad_index() {
        let x = row(&[1.0]);
        let idx = MaskIndex::new(vec![9]).unwrap();
        assert!(scatter_back(&x, &idx, GridShape::new(2, 2).unwrap()).is_err());
    }

    #[test]
    fn memory_ratio() {
        let shape = GridShape::new(10, 10).unwrap();
        let bits: Vec<bool> = (0..100).map(|i| i < 10).collect();
        assert!((affinity_memory_ratio(&BinaryMask::new(shape, bits).unwrap()) - 0.01).abs() < 1e-15);
        assert_eq!(affinity_memory_ratio(&BinaryMask::full(shape)), 1.0);
        assert_eq!(affinity_memory_ratio(&BinaryMask::new(shape, vec![false; 100]).unwrap()), 0.0);
    }

    #[test]
    fn grouping_loss_examples() {
        let x = row(&[0.3, 0.3, 0.3]);
        let labels = [Some(1), Some(1), Some(1)];
        let e = pgg_grouping_loss_value(&x, &labels, 5.0, 1, KernelMode::Sharpness).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12);

        let x = row(&[0.0, 0.0, 100.0, 100.0]);
        let labels = [Some(0), Some(0), Some(1), Some(1)];
        let e = pgg_grouping_loss_value(&x, &labels, 5.0, 1, KernelMode::Sharpness).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        let t = pgg_forward(&x, 5.0, 1).unwrap();
        assert!((trace_grouping_loss(&t, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_columns_do_not_enter_loss() {
        let x = row(&[0.0, 0.0, 50.0]);
        let a = pgg_grouping_loss_value(&x, &[Some(0), Some(0), None], 5.0, 1, KernelMode::Sharpness).unwrap();
        assert!((a.value - 2.0).abs() < 1e-12);
        assert_eq!(a.gradient[2], 0.0);
    }

    #[test]
    fn grouping_loss_gradient() {
        let x = EmbeddingMatrix::from_columns(&[
            vec![0.1, 0.2],
            vec![0.3, -0.1],
            vec![0.25, 0.05],
            vec![0.9, 1.0],
            vec![1.1, 0.8],
            vec![1.0, 1.2],
        ])
        .unwrap();
        let labels = [Some(0), Some(0), Some(0), Some(1), Some(1), None];
        let r = finite_difference_check(x.values(), 1e-4, |t, v| {
            let m = t.reshape(v, 2, 6)?;
            pgg_grouping_loss(t, m, &labels, 1.5, 2, KernelMode::Sharpness)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn labels_from_poses() {
        let shape = GridShape::new(10, 1).unwrap();
        let idx = MaskIndex::new(vec![0, 2, 5, 9]).unwrap();
        let poses = [
            Pose::from_positions(&[[1.0, 0.0]], Some(7)).unwrap(),
            Pose::from_positions(&[[6.0, 0.0]], Some(3)).unwrap(),
        ];
        assert_eq!(label_columns(&idx, shape, &poses, 2.0), vec![Some(7), Some(7), Some(3), None]);
    }
}

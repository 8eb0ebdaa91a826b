use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::math;
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

fn fresh_id() -> u32 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to an array recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

/// A scalar result whose gradient can be pulled back through the tape.
pub type DualValue = Var;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Max(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Abs(usize),
    Scale(usize, f64),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Gather(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    PairwiseSqDist(usize),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Operation record for reverse accumulation.
///
/// Values are dense row-major `rows x cols` arrays. Element-wise binary
/// operations broadcast a dimension of size one against the other operand.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
struct Broadcast {
    rows: usize,
    cols: usize,
    a: (usize, usize),
    b: (usize, usize),
}

impl Broadcast {
    fn new(a: (usize, usize), b: (usize, usize)) -> Result<Self> {
        let dim = |x: usize, y: usize| -> Option<usize> {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        };
        match (dim(a.0, b.0), dim(a.1, b.1)) {
            (Some(rows), Some(cols)) => Ok(Broadcast { rows, cols, a, b }),
            _ => Err(Error::ShapeMismatch { expected: a, found: b }),
        }
    }

    #[inline]
    fn index(shape: (usize, usize), i: usize, j: usize) -> usize {
        let r = if shape.0 == 1 { 0 } else { i };
        let c = if shape.1 == 1 { 0 } else { j };
        r * shape.1 + c
    }

    #[inline]
    fn ia(&self, i: usize, j: usize) -> usize {
        Self::index(self.a, i, j)
    }

    #[inline]
    fn ib(&self, i: usize, j: usize) -> usize {
        Self::index(self.b, i, j)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
        }
    }

    /// Drops every record. Handles created before the call become foreign.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_id();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignTape);
        }
        Ok(v.index)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check_len(rows: usize, cols: usize, len: usize) -> Result<()> {
        if rows * cols != len {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (len, 1),
            });
        }
        Ok(())
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        Self::check_len(rows, cols, value.len())?;
        Ok(self.push(rows, cols, value, Op::Leaf))
    }

    /// Input that never receives a gradient of interest.
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        Self::check_len(rows, cols, value.len())?;
        Ok(self.push(rows, cols, value, Op::Constant))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Constant)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<(usize, usize)> {
        let i = self.idx(v)?;
        Ok((self.nodes[i].rows, self.nodes[i].cols))
    }

    /// Value of a `1 x 1` variable.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let i = self.idx(v)?;
        let n = &self.nodes[i];
        if n.rows != 1 || n.cols != 1 {
            return Err(Error::ShapeMismatch {
                expected: (1, 1),
                found: (n.rows, n.cols),
            });
        }
        Ok(n.value[0])
    }

    fn binary(&mut self, a: Var, b: Var, make: fn(usize, usize) -> Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        let bc = Broadcast::new((na.rows, na.cols), (nb.rows, nb.cols))?;
        let mut out = Vec::with_capacity(bc.rows * bc.cols);
        for i in 0..bc.rows {
            for j in 0..bc.cols {
                out.push(f(na.value[bc.ia(i, j)], nb.value[bc.ib(i, j)]));
            }
        }
        Ok(self.push(bc.rows, bc.cols, out, make(ia, ib)))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let n = &self.nodes[ia];
        let out = n.value.iter().map(|&x| f(x)).collect();
        let (r, c) = (n.rows, n.cols);
        Ok(self.push(r, c, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    /// Element-wise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Max, |x, y| if x >= y { x } else { y })
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Neg(i), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Exp(i), math::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Log(i), math::ln)
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Recip(i), |x| 1.0 / x)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Abs(i), f64::abs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let i = self.idx(a)?;
        self.unary(a, Op::Scale(i, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.scalar_constant(c);
        self.add(a, k)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `log(1 + exp(x))`, composed as `max(x, 0) + log(1 + exp(-|x|))` so
    /// large arguments do not overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let zero = self.scalar_constant(0.0);
        let pos = self.max(a, zero)?;
        let mag = self.abs(a)?;
        let neg = self.neg(mag)?;
        let e = self.exp(neg)?;
        let one_plus = self.add_scalar(e, 1.0)?;
        let tail = self.log(one_plus)?;
        self.add(pos, tail)
    }

    /// Sum of all elements, as a `1 x 1` variable.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let s = self.nodes[i].value.iter().sum();
        Ok(self.push(1, 1, vec![s], Op::Sum(i)))
    }

    /// Sums over rows: `m x n -> 1 x n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let n = &self.nodes[i];
        let mut out = vec![0.0; n.cols];
        for r in 0..n.rows {
            for (c, acc) in out.iter_mut().enumerate() {
                *acc += n.value[r * n.cols + c];
            }
        }
        let cols = n.cols;
        Ok(self.push(1, cols, out, Op::SumRows(i)))
    }

    /// Sums over columns: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let n = &self.nodes[i];
        let out: Vec<f64> = n.value.chunks_exact(n.cols).map(|row| row.iter().sum()).collect();
        let rows = n.rows;
        Ok(self.push(rows, 1, out, Op::SumCols(i)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        if na.cols != nb.rows {
            return Err(Error::ShapeMismatch {
                expected: (na.cols, nb.cols),
                found: (nb.rows, nb.cols),
            });
        }
        let (m, k, n) = (na.rows, na.cols, nb.cols);
        let out = matmul_raw(&na.value, &nb.value, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(ia, ib)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let n = &self.nodes[i];
        let (r, c) = (n.rows, n.cols);
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            for col in 0..c {
                out[col * r + row] = n.value[row * c + col];
            }
        }
        Ok(self.push(c, r, out, Op::Transpose(i)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let i = self.idx(a)?;
        Self::check_len(rows, cols, self.nodes[i].value.len())?;
        let out = self.nodes[i].value.clone();
        Ok(self.push(rows, cols, out, Op::Reshape(i)))
    }

    /// Picks flat (row-major) elements of `a` into a `rows x cols` array.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        let i = self.idx(a)?;
        Self::check_len(rows, cols, indices.len())?;
        let src = &self.nodes[i].value;
        if indices.iter().any(|&k| k >= src.len()) {
            return Err(Error::invalid("gather index out of bounds"));
        }
        let out = indices.iter().map(|&k| src[k]).collect();
        Ok(self.push(rows, cols, out, Op::Gather(i, indices)))
    }

    /// Stacks arrays with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::invalid("concat of zero arrays"));
        };
        let cols = self.nodes[first].cols;
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &idx {
            let n = &self.nodes[i];
            if n.cols != cols {
                return Err(Error::ShapeMismatch {
                    expected: (n.rows, cols),
                    found: (n.rows, n.cols),
                });
            }
            rows += n.rows;
            out.extend_from_slice(&n.value);
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(idx)))
    }

    /// Squared Euclidean distances between the columns of a `d x n` array,
    /// as an `n x n` array.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let n = &self.nodes[i];
        let out = pairwise_sq_dist_raw(&n.value, n.rows, n.cols);
        let cols = n.cols;
        Ok(self.push(cols, cols, out, Op::PairwiseSqDist(i)))
    }

    /// Branch taken by every non-smooth element (`abs` sign, `max` winner).
    ///
    /// Two recordings of the same computation whose signatures differ have
    /// crossed a kink between them.
    pub fn branch_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Abs(a) => sig.extend(self.nodes[a].value.iter().map(|&x| {
                    if x > 0.0 {
                        1
                    } else if x < 0.0 {
                        -1
                    } else {
                        0
                    }
                })),
                Op::Max(a, b) => {
                    let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                    let bc = Broadcast {
                        rows: node.rows,
                        cols: node.cols,
                        a: (na.rows, na.cols),
                        b: (nb.rows, nb.cols),
                    };
                    for i in 0..node.rows {
                        for j in 0..node.cols {
                            let (x, y) = (na.value[bc.ia(i, j)], nb.value[bc.ib(i, j)]);
                            sig.push(if x > y {
                                1
                            } else if x < y {
                                -1
                            } else {
                                0
                            });
                        }
                    }
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse accumulation from a scalar root. The tape is left untouched,
    /// so repeated calls return identical gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.idx(root)?;
        if self.nodes[r].value.len() != 1 {
            return Err(Error::invalid("backward requires a scalar root"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        grads[r] = Some(vec![1.0]);

        for k in (0..=r).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let bc = self.broadcast_of(node, *a, *b);
                    {
                        let ga = slot(&mut grads, *a, self.nodes[*a].value.len());
                        for i in 0..bc.rows {
                            for j in 0..bc.cols {
                                ga[bc.ia(i, j)] += g[i * bc.cols + j];
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, self.nodes[*b].value.len());
                    for i in 0..bc.rows {
                        for j in 0..bc.cols {
                            gb[bc.ib(i, j)] += sign * g[i * bc.cols + j];
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let bc = self.broadcast_of(node, *a, *b);
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    {
                        let ga = slot(&mut grads, *a, va.len());
                        for i in 0..bc.rows {
                            for j in 0..bc.cols {
                                ga[bc.ia(i, j)] += g[i * bc.cols + j] * vb[bc.ib(i, j)];
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, vb.len());
                    for i in 0..bc.rows {
                        for j in 0..bc.cols {
                            gb[bc.ib(i, j)] += g[i * bc.cols + j] * va[bc.ia(i, j)];
                        }
                    }
                }
                Op::Max(a, b) => {
                    let bc = self.broadcast_of(node, *a, *b);
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut to_a = Vec::with_capacity(g.len());
                    for i in 0..bc.rows {
                        for j in 0..bc.cols {
                            to_a.push(va[bc.ia(i, j)] >= vb[bc.ib(i, j)]);
                        }
                    }
                    {
                        let ga = slot(&mut grads, *a, va.len());
                        for i in 0..bc.rows {
                            for j in 0..bc.cols {
                                let t = i * bc.cols + j;
                                if to_a[t] {
                                    ga[bc.ia(i, j)] += g[t];
                                }
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, vb.len());
                    for i in 0..bc.rows {
                        for j in 0..bc.cols {
                            let t = i * bc.cols + j;
                            if !to_a[t] {
                                gb[bc.ib(i, j)] += g[t];
                            }
                        }
                    }
                }
                Op::Neg(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (acc, gi) in ga.iter_mut().zip(&g) {
                        *acc -= gi;
                    }
                }
                Op::Exp(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *acc += gi * y;
                    }
                }
                Op::Log(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                        *acc += gi / xi;
                    }
                }
                Op::Recip(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *acc -= gi * y * y;
                    }
                }
                Op::Abs(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = slot(&mut grads, *a, g.len());
                    for ((acc, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                        if *xi > 0.0 {
                            *acc += gi;
                        } else if *xi < 0.0 {
                            *acc -= gi;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (acc, gi) in ga.iter_mut().zip(&g) {
                        *acc += gi * c;
                    }
                }
                Op::Sum(a) => {
                    let ga = slot(&mut grads, *a, self.nodes[*a].value.len());
                    for acc in ga.iter_mut() {
                        *acc += g[0];
                    }
                }
                Op::SumRows(a) => {
                    let cols = self.nodes[*a].cols;
                    let ga = slot(&mut grads, *a, self.nodes[*a].value.len());
                    for (t, acc) in ga.iter_mut().enumerate() {
                        *acc += g[t % cols];
                    }
                }
                Op::SumCols(a) => {
                    let cols = self.nodes[*a].cols;
                    let ga = slot(&mut grads, *a, self.nodes[*a].value.len());
                    for (t, acc) in ga.iter_mut().enumerate() {
                        *acc += g[t / cols];
                    }
                }
                Op::MatMul(a, b) => {
                    let (na, nb) = (&self.nodes[*a], &self.nodes[*b]);
                    let (m, kk, n) = (na.rows, na.cols, nb.cols);
                    {
                        // dA = G * B^T
                        let ga = slot(&mut grads, *a, m * kk);
                        for i in 0..m {
                            for p in 0..kk {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * nb.value[p * n + j];
                                }
                                ga[i * kk + p] += s;
                            }
                        }
                    }
                    // dB = A^T * G
                    let gb = slot(&mut grads, *b, kk * n);
                    for p in 0..kk {
                        for i in 0..m {
                            let av = na.value[i * kk + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[*a].rows, self.nodes[*a].cols);
                    let ga = slot(&mut grads, *a, r * c);
                    for row in 0..r {
                        for col in 0..c {
                            ga[row * c + col] += g[col * r + row];
                        }
                    }
                }
                Op::Reshape(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (acc, gi) in ga.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Gather(a, indices) => {
                    let ga = slot(&mut grads, *a, self.nodes[*a].value.len());
                    for (gi, &src) in g.iter().zip(indices) {
                        ga[src] += gi;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        let gp = slot(&mut grads, p, len);
                        for (acc, gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *acc += gi;
                        }
                        offset += len;
                    }
                }
                Op::PairwiseSqDist(a) => {
                    let na = &self.nodes[*a];
                    let (d, n) = (na.rows, na.cols);
                    let x = &na.value;
                    let ga = slot(&mut grads, *a, d * n);
                    for i in 0..n {
                        for j in 0..n {
                            let w = g[i * n + j] + g[j * n + i];
                            if w == 0.0 || i == j {
                                continue;
                            }
                            for r in 0..d {
                                ga[r * n + i] += 2.0 * w * (x[r * n + i] - x[r * n + j]);
                            }
                        }
                    }
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[k] = Some(g);
            }
        }

        Ok(Gradients {
            tape: self.id,
            lens: self.nodes[..=r].iter().map(|n| n.value.len()).collect(),
            grads,
        })
    }

    fn broadcast_of(&self, node: &Node, a: usize, b: usize) -> Broadcast {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        Broadcast {
            rows: node.rows,
            cols: node.cols,
            a: (na.rows, na.cols),
            b: (nb.rows, nb.cols),
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn pairwise_sq_dist_raw(x: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for r in 0..d {
                let diff = x[r * n + i] - x[r * n + j];
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    lens: Vec<usize>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Result<Vec<f64>> {
        if v.tape != self.tape {
            return Err(Error::ForeignTape);
        }
        match self.grads.get(v.index) {
            Some(Some(g)) => Ok(g.clone()),
            Some(None) => Ok(vec![0.0; self.lens[v.index]]),
            // recorded after the root: cannot influence it
            None => Err(Error::invalid("variable was recorded after the root")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn exp_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0], 1, 1).unwrap();
        let y = t.exp(x).unwrap();
        assert_eq!(t.scalar(y).unwrap(), 1.0);
        assert_eq!(t.backward(y).unwrap().wrt(x).unwrap(), vec![1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0, 3.0], 3, 1).unwrap();
        let s = t.sum(x).unwrap();
        assert_eq!(t.scalar(s).unwrap(), 6.0);
        assert_eq!(t.backward(s).unwrap().wrt(x).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn root_equal_to_leaf() {
        let mut t = Tape::new();
        let x = t.leaf(vec![4.2], 1, 1).unwrap();
        assert_eq!(t.backward(x).unwrap().wrt(x).unwrap(), vec![1.0]);
    }

    #[test]
    fn gaussian_bump_derivative() {
        // f(x) = exp(-x^2 / 2), f'(1) = -exp(-0.5)
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0], 1, 1).unwrap();
        let sq = t.square(x).unwrap();
        let h = t.scale(sq, -0.5).unwrap();
        let y = t.exp(h).unwrap();
        let g = t.backward(y).unwrap().wrt(x).unwrap()[0];
        assert!(close(g, -0.606531, 1e-6), "{g}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, 1.1, -0.4, 0.9, 0.2];
        let report = finite_difference_check(&x, 1e-4, |t, v| {
            let a = t.gather(v, vec![0, 1, 2, 3], 2, 2)?;
            let b = t.gather(v, vec![4, 5, 6, 7], 2, 2)?;
            let c = t.matmul(a, b)?;
            let c2 = t.square(c)?;
            t.sum(c2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], 2, 1).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn mixing_tapes_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(vec![1.0], 1, 1).unwrap();
        let b = t2.leaf(vec![1.0], 1, 1).unwrap();
        assert_eq!(t1.add(a, b), Err(Error::ForeignTape));
        t1.clear();
        assert_eq!(t1.exp(a), Err(Error::ForeignTape));
    }

    #[test]
    fn broadcasting_rules() {
        let mut t = Tape::new();
        let m = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        let row = t.leaf(vec![10.0, 20.0, 30.0], 1, 3).unwrap();
        let col = t.leaf(vec![100.0, 200.0], 2, 1).unwrap();
        let a = t.add(m, row).unwrap();
        assert_eq!(t.value(a).unwrap(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let b = t.mul(a, col).unwrap();
        let s = t.sum(b).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(row).unwrap(), vec![300.0, 300.0, 300.0]);
        assert_eq!(g.wrt(col).unwrap(), vec![66.0, 75.0]);
        let bad = t.leaf(vec![1.0, 2.0], 1, 2).unwrap();
        assert!(t.add(m, bad).is_err());
    }

    #[test]
    fn max_tie_goes_to_first_operand() {
        let mut t = Tape::new();
        let a = t.leaf(vec![2.0], 1, 1).unwrap();
        let b = t.leaf(vec![2.0], 1, 1).unwrap();
        let m = t.max(a, b).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(a).unwrap(), vec![1.0]);
        assert_eq!(g.wrt(b).unwrap(), vec![0.0]);
    }

    #[test]
    fn softplus_is_stable() {
        let mut t = Tape::new();
        let x = t.leaf(vec![-800.0, 0.0, 800.0], 3, 1).unwrap();
        let y = t.softplus(x).unwrap();
        let v = t.value(y).unwrap().to_vec();
        assert!(v[0] >= 0.0 && v[0] < 1e-300);
        assert!(close(v[1], core::f64::consts::LN_2, 1e-15));
        assert_eq!(v[2], 800.0);
    }

    #[test]
    fn pairwise_distances() {
        let mut t = Tape::new();
        // columns (0,0), (3,4), (1,0)
        let x = t.leaf(vec![0.0, 3.0, 1.0, 0.0, 4.0, 0.0], 2, 3).unwrap();
        let d = t.pairwise_sq_dist(x).unwrap();
        assert_eq!(t.value(d).unwrap(), &[0.0, 25.0, 1.0, 25.0, 0.0, 20.0, 1.0, 20.0, 0.0]);
    }

    #[test]
    fn all_primitives_match_finite_differences() {
        let x = [0.5, -0.3, 1.2, 0.8, -1.1, 0.25];
        let report = finite_difference_check(&x, 1e-4, |t, v| {
            let m = t.reshape(v, 2, 3)?;
            let tr = t.transpose(m)?;
            let d = t.pairwise_sq_dist(m)?;
            let e = t.scale(d, -0.5)?;
            let w = t.exp(e)?;
            let rs = t.sum_cols(w)?;
            let inv = t.reciprocal(rs)?;
            let sm = t.sum_rows(tr)?;
            let lg = t.add_scalar(inv, 1.0)?;
            let l = t.log(lg)?;
            let mm = t.matmul(m, tr)?;
            let ng = t.neg(mm)?;
            let sp = t.softplus(ng)?;
            let cat = t.concat_rows(&[sm, sm])?;
            let parts = [t.sum(l)?, t.sum(sp)?, t.sum(cat)?];
            let a = t.add(parts[0], parts[1])?;
            let b = t.sub(a, parts[2])?;
            t.mul(b, b)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn backward_twice_is_deterministic() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.1, 0.2, 0.3], 1, 3).unwrap();
        let d = t.pairwise_sq_dist(x).unwrap();
        let e = t.exp(d).unwrap();
        let s = t.sum(e).unwrap();
        let g1 = t.backward(s).unwrap().wrt(x).unwrap();
        let g2 = t.backward(s).unwrap().wrt(x).unwrap();
        assert_eq!(g1, g2);
    }
}

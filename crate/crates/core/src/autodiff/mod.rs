//! Minimal reverse-mode differentiation over dense row-major arrays.
//!
//! Every loss in the crate is recorded on a [`Tape`]; a single call to
//! [`Tape::backward`] from a scalar root yields gradients for all leaves.
//! [`finite_difference_check`] compares those gradients with central
//! differences and is used as the oracle for every loss kernel.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_difference_check, GradCheckReport, DEFAULT_FD_STEP, REL_ERROR_FLOOR};
pub use tape::{DualValue, Gradients, Tape, Var};
pub(crate) use tape::{matmul_raw, pairwise_sq_dist_raw};

/// Value and gradient of a scalar loss with respect to a single input array.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub value: f64,
    pub gradient: alloc::vec::Vec<f64>,
}

/// Records `f` on a fresh tape with `input` as the only leaf (a column
/// vector) and returns the loss value with its gradient.
pub fn evaluate<F>(input: &[f64], f: F) -> crate::Result<Evaluated>
where
    F: FnOnce(&mut Tape, Var) -> crate::Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(input.to_vec(), input.len(), 1)?;
    let root = f(&mut tape, leaf)?;
    let value = tape.scalar(root)?;
    let grads = tape.backward(root)?;
    Ok(Evaluated {
        value,
        gradient: grads.wrt(leaf)?,
    })
}

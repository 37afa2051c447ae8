//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor).
//!
//! A [`Tape`] records every op applied to tracked [`Var`]s. Calling
//! [`Var::backward`] on a scalar sweeps the tape in reverse and accumulates
//! gradients; broadcast inputs receive their gradient summed back to their
//! own shape.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_many};
pub(crate) use ops::{matmul_nt, matmul_tn};
pub use tape::{BackwardFn, NodeId, Tape, Var};

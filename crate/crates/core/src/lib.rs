//! Regularization of linear inverse problems: Tikhonov and truncated
//! Tikhonov reconstructions with worst-case error bounds, subspace dimension
//! estimation, and generalized LASSO with a primal-dual solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod dimscan;
pub mod error;
pub mod harness;
pub mod lasso;
pub mod linop;
pub mod rng;
pub mod tikhonov;
pub mod truncated;

pub use error::{Error, Result};
pub use linop::{DenseOperator, SvdSystem};

//! Rigorous (theory-driven penalty) Lasso and the inference built on it:
//! debiased effects with simultaneous confidence intervals, high-dimensional
//! instrumental variables and orthogonal treatment-effect estimators.

// `!(a > b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod effects;
pub mod iv;
pub mod treatment;
pub mod error;
pub mod linalg;
pub mod logit;
pub mod par;
pub mod prob;
pub mod report;
pub mod rlasso;
pub mod sim;
pub mod solver;

pub use error::{HdmError, Result};

//! Offset-point discretisation of the Caputo derivative on nonuniform meshes:
//! kernels, audits, consistency analysis and a 1D finite element solver.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// tabulated quadrature and Lanczos constants keep their published digits
#![allow(clippy::excessive_precision)]

pub mod audit;
pub mod complementary;
pub mod consistency;
pub mod error;
pub mod fem;
pub mod harness;
pub mod kernels;
pub mod mesh;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};

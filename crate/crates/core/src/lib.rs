//! Boundary-data toolkit for Laplace problems on surfaces with holes.

// negated float comparisons are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod boundary;
pub mod detector;
pub mod dn;
pub mod doubled;
pub mod error;
pub mod harmonic;
pub mod linalg;
pub mod pipeline;
pub mod reconstruct;
pub mod surface;
pub mod synthetic;

pub use error::{Error, Result};

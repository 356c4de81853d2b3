//! ASN-minimax double sampling plans by variables for a normally distributed
//! quality characteristic with two-sided specification limits and unknown
//! standard deviation.
//!
//! The crate evaluates operating characteristics (OC) and average sample
//! numbers (ASN) of single and double plans built on the plug-in estimator
//! `p* = Φ((L − x̄)/s) + Φ((x̄ − U)/s)`, and designs plans meeting a
//! two-point OC condition with minimal maximum ASN.

// Coefficient tables are quoted in full from their sources, and `!(x > 0)`
// style guards are how NaN gets rejected.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod chebyshev;
pub mod designer;
pub mod double_plan;
pub mod error;
pub mod isoline;
pub mod one_sided;
pub mod quadrature;
pub mod roots;
pub mod simulate;
pub mod single_plan;
pub mod special;

pub use error::{Error, Result};

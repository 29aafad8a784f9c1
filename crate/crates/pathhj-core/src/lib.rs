//! Numerical core for path-dependent Hamilton-Jacobi equations with coinvariant derivatives.
//!
//! The crate is `no_std` (with `alloc`) when the default features are disabled. The `parallel`
//! feature fans independent evaluations out over rayon; every reduction is done in index order,
//! so results are bitwise identical for any worker count.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is how argument checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bp_lab;
pub mod ci_calculus;
pub mod delay_control;
pub mod error;
pub mod gauge;
pub mod hj_model;
pub mod path_core;
pub mod solution_checkers;

mod math;
mod par;

pub use error::Error;
pub use path_core::{GridSpec, PathPoint, SampledPath};

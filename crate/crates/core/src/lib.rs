//! Variational integrators for forced and constrained mechanical systems,
//! their discrete adjoints, and boundary control of a geometrically exact
//! beam on unit dual quaternions.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod beam;
pub mod beam_ocp;
pub mod constrained;
pub mod dualquat;
pub mod error;
pub mod harness;
pub mod mechanics;
pub mod models;
pub mod numerics;
pub mod optimizer;

pub use error::{Error, Result};

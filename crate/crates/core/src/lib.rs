//! Conjugation machinery and solver for linear third-order evolution equations
//! D_t u + a₃(t,D)u + a₂(t,x,D)u + a₁(t,x,D)u + a₀(t,x,D)u = f in Gevrey-type spaces.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conjugate;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod numerics;
pub mod positivity;
pub mod quantize;
pub mod symbols;
pub mod weights;

pub use error::{Category, Error, Result};

//! Multimodal continuous attention.
//!
//! Attention densities are Gaussian mixtures fitted to weighted grid
//! observations with weighted EM; the number of components is picked with a
//! penalized log-likelihood; context vectors are expectations of an RBF
//! feature function and have closed forms, as do their gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod basis;
pub mod em;
pub mod error;
pub mod eval;
pub mod gauss2d;
pub mod io;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};

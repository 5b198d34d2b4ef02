//! Schmidt's game on self-similar fractals.
//!
//! The crate plays the (α, β) game on the attractor of an iterated function
//! system, runs a constructive winning strategy that keeps the outcome away
//! from rational affine subspaces, certifies the decay and doubling
//! properties of the natural measure that the strategy relies on, and turns
//! ball packings into lower bounds on the Hausdorff dimension of the set of
//! winning points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dimension;
pub mod diophantine;
pub mod error;
pub mod game;
pub mod geometry;
pub mod ifs;
pub mod measure;
pub mod pipeline;
pub mod session;
pub mod strategy;

pub use error::{Error, Result};

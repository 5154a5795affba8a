//! Latent-position dynamics for random dot product graphs.
//!
//! A configuration `X` (rows are nodes, `n x d`) determines the edge
//! probability matrix `P = X X^T`. Everything observable about the graph
//! lives in `P`, so `X` is only defined up to right multiplication by an
//! orthogonal matrix. The modules here cover the forward model, vector
//! fields and their integration, sampling and spectral embedding, the
//! geometry of the quotient by that orthogonal action, embedding alignment,
//! and parameter recovery from observed `P` trajectories.

pub mod alignment;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod observation;
pub mod random;

pub use error::{Error, Result};

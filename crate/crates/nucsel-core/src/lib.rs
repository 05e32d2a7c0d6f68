//! Greedy nuclear-norm column selection.
//!
//! The crate implements nuclear maximization, the greedy choice of columns
//! `I` of an SPSD matrix `K` that maximizes `Tr[(K²)_{I,I} (K_{I,I})⁻¹]`,
//! together with the usual baselines (diagonal maximization, diagonal
//! sampling, uniform sampling), matrix-free variants driven by randomized
//! diagonal estimation, CUR decomposition built on top of it, reduction of
//! inverse rescaled graph Laplacians, and executable forms of the greedy
//! error bounds.

pub mod bounds;
pub mod cur;
pub mod error;
pub mod gen;
pub mod io;
pub mod laplacian;
pub mod linops;
pub mod rng;
pub mod select;
pub mod sketch;
pub mod sympoly;
pub mod verify;

pub use error::{Error, Result};

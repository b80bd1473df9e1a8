//! Value functions of two-player zero-sum differential games in mixed
//! strategies.
//!
//! The crate computes partition-indexed lower and upper values by backward
//! dynamic programming with a matrix game at every grid node ([`dpp`]),
//! solves the limiting Hamilton-Jacobi-Isaacs equation with a monotone
//! finite-difference scheme ([`pde`]), and plays randomized nonanticipative
//! strategies against each other by Monte Carlo ([`strategy`]).

pub mod error;
pub mod expr;
pub mod game;
pub mod matrix_game;
pub mod hamiltonian;
pub mod grid;
pub mod dpp;
pub mod pde;
pub mod strategy;

pub use error::{Error, ErrorKind, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

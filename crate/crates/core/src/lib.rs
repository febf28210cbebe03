//! Stable cheapest nonconforming finite element pairs for the stationary Stokes
//! problem on uniform square meshes of the unit square.
//!
//! The two stable pairs are
//!
//! * P1 nonconforming velocity × piecewise constants with the mean and the
//!   global checkerboard removed (`Pair::P1ncReduced`), and
//! * P1 nonconforming velocity enriched by one global DSSY macro bubble ×
//!   mean-zero piecewise constants (`Pair::P1ncBubble`).
//!
//! Both produce the same velocity; the pressures differ by a multiple of the
//! checkerboard. The crate also carries the conforming Q1 and the DSSY pairs
//! for comparison, an inf-sup estimator, spurious-mode detection and a
//! manufactured-solution convergence harness.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod elements;
pub mod error;
pub mod mesh;
pub mod solver;
pub mod spaces;
pub mod sparse;

pub use error::{Error, Result};

//! Two-scale finite elements for linear elasticity on periodically cracked
//! domains with Signorini contact and Coulomb friction on the cracks.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] builds the reference cracked cell and its periodic tiling,
//!   duplicating nodes along the cracks.
//! * [`fe`] holds the quadratic Lagrange element kernels.
//! * [`assembly`] produces the elasticity, regularization, mass and load
//!   operators, crack jump maps and the normal stress trace.
//! * [`spaces`] provides norms: rigid projections, fractional Slobodetsky
//!   norms on cracks, discrete dual norms and Korn-type constants.
//! * [`unfolding`] implements the periodic unfolding, averaging, interpolation
//!   and shift operators.
//! * [`contact`] solves the given-friction problem, by a projected Newton
//!   method on the crack forces or by primal-dual active sets, and runs the
//!   Coulomb fixed point.
//! * [`twoscale`] assembles and solves the unfolded limit problem.
//! * [`config`], [`io`] and [`cli`] drive runs from TOML files.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod contact;
pub mod error;
pub mod fe;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod spaces;
pub mod twoscale;
pub mod unfolding;

pub use error::{Error, Result};

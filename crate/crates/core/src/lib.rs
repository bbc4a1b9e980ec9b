//! Steady subsonic flow in a rectangular nozzle.
//!
//! The crate contains two solvers built on a common structured grid:
//!
//! * [`potential`]: irrotational flow with prescribed normal mass flux,
//!   including the truncated-density continuation used to locate the
//!   critical flux multiplier.
//! * [`euler`]: rotational flow, computed as the fixed point of a map that
//!   transports the Bernoulli function and vorticity along streamlines and
//!   rebuilds the velocity from a weighted div-curl system.

pub mod battery;
pub mod boundary;
pub mod config;
pub mod divcurl;
pub mod elliptic;
pub mod euler;
pub mod gas;
pub mod grid;
pub mod potential;
pub mod report;
pub mod roots;
pub mod streamline;
pub mod transport;

pub use boundary::{BoundaryData, BoundaryFamily};
pub use gas::{GasModel, PressureLaw, Truncation};
pub use grid::{Grid, Parity, ScalarField, Symmetry, VectorField};

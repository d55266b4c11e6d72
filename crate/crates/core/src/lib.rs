//! Nonlocal Cahn-Hilliard and porous-medium dynamics on finite random walk spaces.
//!
//! A [`RandomWalk`] couples a node set with a row-stochastic kernel and a positive
//! measure. On top of it live the nonlocal operators ([`operators`]), maximal monotone
//! graphs ([`potentials`]), the porous-medium resolvent and mild solutions ([`pme`]),
//! two Cahn-Hilliard integrators ([`cahn_hilliard`]) and trajectory diagnostics
//! ([`analysis`]).

pub mod analysis;
pub mod cahn_hilliard;
pub mod error;
pub mod field;
pub mod io;
mod linalg;
pub mod operators;
pub mod pme;
pub mod potentials;
pub mod sparse;
pub mod trajectory;
pub mod walk;

pub use error::{Error, Result};
pub use field::{Field, Measure};
pub use potentials::{MonotoneGraph, PotentialSpec};
pub use sparse::CsrMatrix;
pub use trajectory::{Snapshot, StepDiagnostics, Trajectory};
pub use walk::{NodeSet, NodeSpace, RandomWalk};

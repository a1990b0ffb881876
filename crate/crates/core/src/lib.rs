//! Ground states of spin-1/2 lattice models with multilayer tensor-tree
//! wavefunctions, plus an exact-diagonalization reference solver.

pub mod error;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod relax;
pub mod krylov;
pub mod linalg;
pub mod state;
pub mod tree;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

//! Desk-scale toolkit for learning density functionals from recycled
//! ground-state wavefunctions.
//!
//! The crate simulates the quantum side of the pipeline on a dense
//! statevector (adiabatic preparation, phase estimation, state-preserving
//! amplitude estimation, phase-kickback gradients) and carries the classical
//! side in full: Kohn-Sham solves and inversion, the exact lattice functional
//! by Legendre transform, and from-scratch neural functionals trained by
//! mini-batch SGD. Every quantum routine is checked against the
//! exact-diagonalization oracle in [`fermion`].

pub mod dft;
pub mod error;
pub mod fermion;
pub mod ml;
pub mod pauli;
pub mod qae;
pub mod qga;
pub mod qpe;
pub mod rwmp;
pub mod sim;

pub use error::{Error, Result};

//! Complete-graph tensor network states (CGTNS).
//!
//! Electronic wave functions whose determinant amplitudes are products of
//! small correlator tensors over all pairs (and optionally triples) of spin
//! orbitals. The crate covers the whole chain needed to study them on small
//! active spaces:
//!
//! * [`fock`] enumerates determinant spaces and builds spin-adapted CSF bases.
//! * [`hamiltonian`] reads FCIDUMP integrals, evaluates Slater–Condon matrix
//!   elements and provides the exact CAS-CI diagonalization used as an oracle.
//! * [`correlators`] holds the 2-site, 3-site, hybrid and selected ansätze.
//! * [`energy`] evaluates the spin-adapted variational energy, per-CSF
//!   estimators and analytic gradients.
//! * [`optimizer`] drives parallel-tempering Metropolis sampling and the
//!   gradient-based refinements.
//! * [`analysis`] computes accuracy measures, parameter-space reductions and
//!   spin-state splittings, and exports optimizer traces.
//! * [`workflow`] chains the stages into the end-to-end procedure used by the
//!   command-line front end.

pub mod analysis;
pub mod correlators;
pub mod energy;
mod error;
pub mod fock;
pub mod hamiltonian;
mod linalg;
pub mod optimizer;
pub mod workflow;

pub use error::{Error, Result};

//! Interior-boundary-condition Hamiltonians for a fixed point source emitting and
//! absorbing scalar bosons, discretized on a radial s-wave Fock space.
//!
//! Layers, bottom up: [`fock`] (truncated Fock space and its inner product),
//! [`hamiltonian`] (sparse assembly of IBC and cutoff variants), [`spectral`]
//! (eigensolvers and grid extrapolation), [`evolution`] (Crank–Nicolson
//! dynamics and flux bookkeeping), [`oracles`] (closed-form references) and
//! [`experiments`] (configured runs with pass/fail reports).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evolution;
pub mod experiments;
pub mod fock;
pub mod hamiltonian;
pub mod oracles;
pub mod spectral;

pub use error::{Error, Result};

//! Rydberg facilitation driven by rapid adiabatic passage.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece:
//! lattice geometry and position disorder ([`lattice`]), the Allen–Eberly and
//! square π-pulse drives ([`drive`]), exact many-body evolution under the
//! Lindblad master equation ([`fullme`]), Gutzwiller mean-field dynamics with
//! and without quantum jumps ([`mfqmc`]) and derived quantities such as the
//! avalanche gain ([`analysis`]).
//!
//! Configuration and output frequencies are cyclic (MHz), times are in μs and
//! distances in μm. Everything that enters an equation of motion is converted
//! to angular frequency with [`units::angular`] first.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod drive;
pub mod error;
pub mod fullme;
pub mod lattice;
pub mod mfqmc;
pub mod result;
pub mod rng;
pub mod units;

mod stats;

pub use error::{Error, Result};
pub use result::{Residuals, RunResult};

pub use num_complex::Complex64 as C64;

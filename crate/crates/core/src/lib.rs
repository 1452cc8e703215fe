//! Exact simulation of a harmonic oscillator coupled to thermal baths and to
//! blackbody radiation, through discrete-mode Gaussian dynamics projected onto
//! the oscillator's energy basis.

pub mod baths;
pub mod cli;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod fock;
pub mod model;
pub mod par;
pub mod scenarios;
pub mod units;

pub use error::{Error, Result};

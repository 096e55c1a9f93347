//! Simulation toolkit for weakly damped, driven few-level quantum systems.
//!
//! Four evolution modes are provided for the same driven system:
//!
//! * pure Hamiltonian evolution (no bath),
//! * the Markovian master equation with dissipators fixed in the bare
//!   eigenbasis ([`master::Mme`]),
//! * the adiabatic master equation whose dissipators follow the instantaneous
//!   eigenbasis of the driven Hamiltonian ([`master::Ame`]),
//! * an exact system + oscillator bath model, where the bath is mapped onto a
//!   nearest-neighbour chain ([`chain`]) and evolved as a matrix product state
//!   ([`mps`]).
//!
//! [`metrics`] turns the resulting excited-state populations into the
//! integrated bath effect and the relative error of a master equation, and
//! [`harness`] drives parameter sweeps from declarative JSON configs.

pub mod chain;
pub mod control;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod master;
pub mod metrics;
pub mod mps;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{CMat, C64};

//! Pseudo-spectral solvers and a verification harness for the stochastic
//! Euler-Boussinesq system with Lagrangian-averaged transport noise on the
//! periodic square.
//!
//! The pipeline is: a deterministic expectation solve, linear stochastic
//! transport of the fluctuations driven by it, closed moment equations,
//! Monte Carlo ensembles that check those closures, and a method of
//! characteristics that checks the stochastic solver pathwise.

pub mod characteristics;
pub mod config;
pub mod error;
pub mod expectation;
pub mod fields;
pub mod grid;
pub mod lsf1;
pub mod moments;
pub mod montecarlo;
pub mod noise;
pub mod run;
pub mod spde;
pub mod verify;

pub use error::{Error, Result};

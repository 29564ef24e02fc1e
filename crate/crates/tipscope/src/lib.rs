//! Detection of rate-induced tipping in nonautonomous ODE systems.
//!
//! A drifting parameter λ(t) drags a family of quasi-static equilibria
//! through state space; a trajectory either tracks a stable branch or, past
//! a critical drift rate, departs from it without any bifurcation being
//! crossed. This crate integrates such systems together with the orthogonal
//! factor of their linearization (the continuous QR method), derives
//! windowed growth-rate averages and spectral estimates from it, and runs
//! three detectors over the results: a tracking-radius test, a sustained
//! growth-rate derivative test, and a leading-direction angle test.
//!
//! The `systems` module ships seven benchmark systems; `detect` adds a
//! bisection search for the critical rate on top of any detector.

pub mod cli;
pub mod config;
pub mod detect;
pub mod drift;
pub mod error;
pub mod integrate;
mod mat;
pub mod spectra;
pub mod systems;

pub use error::{Error, Result};

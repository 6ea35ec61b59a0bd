//! Simulation and maximum-likelihood analysis of quantum lock-in force
//! sensing with a single trapped ion.
//!
//! * [`oscillator`]: force ↔ motion ↔ Doppler-phase conversions.
//! * [`lockin`]: echo-train modulation, lock-in phase, ξ-averaged contrast.
//! * [`measure`]: shot-level Monte-Carlo of Ramsey fringes and scans.
//! * [`estimate`]: fringe, phase-map and contrast-curve likelihood fits.
//! * [`experiments`]: end-to-end synchronous and asynchronous reproductions.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod experiments;
pub mod io;
pub mod lockin;
pub mod measure;
pub mod optim;
pub mod oracle;
pub mod oscillator;
pub mod quad;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
pub use lockin::{LockInSequence, PhaseTrace, XiMode};
pub use oscillator::{ForceDrive, TrapConfig};

//! In-situ processing for a proxy spectral-element solver.
//!
//! The simulation ([`proxysim`]) advances velocity and pressure on a box of
//! GLL elements. The [`engine`] couples it to an in-situ task in one of three
//! modes (synchronous, asynchronous, hybrid) under a fixed worker budget.
//! [`tasks`] holds the concrete tasks: spectral compression ([`compress`]),
//! slice images and autocorrelation-based uncertainty of time averages.
//! [`bench`] drives sweeps over modes, splits and frequencies.

pub mod bench;
pub mod compress;
pub mod engine;
pub mod error;
pub mod proxysim;
pub mod spectral;
pub mod tasks;
pub mod workers;

pub use error::{Error, FormatError, Result};

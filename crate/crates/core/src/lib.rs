//! Simulation and analysis toolkit for a cavity-enhanced SPDC photon-pair
//! source with an intracavity half-wave plate ("flip trick").
//!
//! The crate is organised along the measurement chain:
//!
//! * [`cavity`] derives free spectral range, finesse, linewidth and escape
//!   efficiency from a cavity description.
//! * [`correlation`] evaluates the signal/idler cross-correlation comb and
//!   the half-wave-plate detuning overlay.
//! * [`timetag`] generates two-channel detector time-tag streams and reads
//!   and writes them.
//! * [`analysis`] histograms coincidences and fits the source bandwidth.

pub mod analysis;
pub mod cavity;
pub mod correlation;
mod error;
mod par;
pub mod timetag;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

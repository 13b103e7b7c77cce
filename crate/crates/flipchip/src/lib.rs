//! Design and analysis toolkit for flip-chip superconducting readout circuits.
//!
//! The library is organized bottom-up:
//!
//! - [`numerics`]: elliptic integrals, small complex eigenproblems, Brent
//!   root finding, line/plane least squares;
//! - [`cpw`]: per-unit-length capacitance and inductance of flip-chip CPW
//!   cross-sections and quarter-wave resonator frequency vs. chip spacing;
//! - [`design`]: spacing-insensitive etching ratio, length calibration and
//!   frequency allocation;
//! - [`purcell`]: qubit relaxation limits through readout resonators and
//!   Purcell filters;
//! - [`chipmodel`]: height-scan ingestion, spacing maps and synthetic chip
//!   frequency tables;
//! - [`analysis`]: reflection-trace fitting, per-column linearity and
//!   cross-design comparison.

pub mod analysis;
pub mod chipmodel;
pub mod cpw;
pub mod design;
pub mod numerics;
pub mod purcell;

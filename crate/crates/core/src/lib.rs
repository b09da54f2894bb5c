//! Imaging-based three-axis force sensing with a single trapped ion.
//!
//! The crate covers the whole chain from a physical description of the trap,
//! laser and imaging system to a force estimate with an error budget:
//!
//! - [`trap`]: constants, secular frequencies, spring constants, Hooke's law and
//!   the two-ion Coulomb separation used for magnification calibration.
//! - [`light`]: two-level scattering rate, light-pressure force, photon budget
//!   and saturation-curve fitting.
//! - [`optics`]: Gaussian-beam spot geometry, defocus response and the
//!   width-to-z conversion.
//! - [`sim`]: synthetic fluorescence frames, drift trajectories and chopped
//!   force-on/force-off acquisition series, plus the IONF frame container.
//! - [`fit`]: pixel-integrated 2D Gaussian localization.
//! - [`force`]: drift-chopped differential displacement, error budget, force
//!   conversion, sensitivity and linear-response fits.
//! - [`limits`]: photon shot-noise limits and a Monte-Carlo oracle.
//! - [`config`] and [`reproduce`]: run configuration and reference tables.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fit;
pub mod force;
pub mod light;
pub mod limits;
pub mod lsq;
pub mod optics;
pub mod reproduce;
pub mod sim;
pub mod stats;
pub mod trap;
pub mod units;

pub use error::{Error, Result};
pub use units::{Axis, Frequency};

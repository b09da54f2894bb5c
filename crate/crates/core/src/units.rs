use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

/// Ordinary frequency in Hz. Angular rates are only obtained through
/// [`Frequency::angular`], so a 2π factor is never applied twice.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(f64);

impl Frequency {
    pub const fn from_hz(hz: f64) -> Self {
        Self(hz)
    }

    pub fn from_khz(khz: f64) -> Self {
        Self(khz * 1e3)
    }

    pub fn from_mhz(mhz: f64) -> Self {
        Self(mhz * 1e6)
    }

    pub fn from_angular(rad_per_s: f64) -> Self {
        Self(rad_per_s / (2.0 * PI))
    }

    pub fn hz(self) -> f64 {
        self.0
    }

    pub fn khz(self) -> f64 {
        self.0 * 1e-3
    }

    /// ω = 2πν in rad/s.
    pub fn angular(self) -> f64 {
        2.0 * PI * self.0
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} kHz", self.khz())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// 1 N/m expressed in zN/nm.
pub const ZN_PER_NM_PER_N_PER_M: f64 = 1e12;
/// 1 N expressed in zN.
pub const ZN_PER_N: f64 = 1e21;

//! Trap mechanics: physical constants, spring constants from secular
//! frequencies, Hooke's law and the two-ion Coulomb separation.
//!
//! Internal arithmetic is SI. Stiffness is reported in zN/nm, forces in zN,
//! displacements in nm and the two-ion separation in µm.

use crate::error::{invalid, Error, Result};
use crate::units::{Axis, Frequency, ZN_PER_NM_PER_N_PER_M};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// J·s
    pub hbar: f64,
    /// C
    pub elementary_charge: f64,
    /// F/m
    pub epsilon0: f64,
    /// kg
    pub atomic_mass_unit: f64,
}

/// CODATA 2018 values.
pub const CODATA: Constants = Constants {
    hbar: 1.054_571_817e-34,
    elementary_charge: 1.602_176_634e-19,
    epsilon0: 8.854_187_812_8e-12,
    atomic_mass_unit: 1.660_539_066_60e-27,
};

/// Mass of ¹⁷⁴Yb⁺ in unified atomic mass units.
pub const YB174_MASS_AMU: f64 = 173.938_867;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSpecies {
    pub mass_amu: f64,
}

impl IonSpecies {
    pub fn new(mass_amu: f64) -> Result<Self> {
        let s = Self { mass_amu };
        s.validate()?;
        Ok(s)
    }

    pub fn yb174() -> Self {
        Self {
            mass_amu: YB174_MASS_AMU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_amu.is_finite() && self.mass_amu > 0.0) {
            return Err(invalid(format!("mass_amu must be > 0, got {}", self.mass_amu)));
        }
        Ok(())
    }

    pub fn mass_kg(&self) -> f64 {
        self.mass_amu * CODATA.atomic_mass_unit
    }
}

impl Default for IonSpecies {
    fn default() -> Self {
        Self::yb174()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    /// Secular frequencies ν for the (x, y, z) axes.
    pub secular_freqs_hz: [Frequency; 3],
    /// The orientation of the two weak principal axes is unknown, so their
    /// stiffness is only known as a bracket.
    #[serde(default)]
    pub axis_ambiguous: bool,
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        for (axis, f) in Axis::ALL.iter().zip(self.secular_freqs_hz) {
            if !(f.hz().is_finite() && f.hz() > 0.0) {
                return Err(invalid(format!(
                    "secular frequency for axis {axis} must be > 0, got {} Hz",
                    f.hz()
                )));
            }
        }
        if self.axis_ambiguous {
            let strong = strongest_axis(&self.secular_freqs_hz.map(|f| f.hz()));
            let max = self.secular_freqs_hz[strong.index()].hz();
            let ties = self.secular_freqs_hz.iter().filter(|f| f.hz() == max).count();
            if ties != 1 {
                return Err(invalid(
                    "ambiguous weak axes require exactly one strong axis (unique largest frequency)",
                ));
            }
        }
        Ok(())
    }
}

fn strongest_axis(values: &[f64; 3]) -> Axis {
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Axis::ALL[best]
}

/// Per-axis stiffness in zN/nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringConstants {
    pub k: [f64; 3],
    /// (min, max) over the two weak axes.
    pub k_weak_bracket: (f64, f64),
    pub strong_axis: Axis,
    pub axis_ambiguous: bool,
}

impl SpringConstants {
    /// Builds the record from stiffness values directly (e.g. quoted values).
    pub fn from_values(k: [f64; 3], axis_ambiguous: bool) -> Result<Self> {
        if k.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("spring constants must be positive"));
        }
        let strong_axis = strongest_axis(&k);
        let weak: Vec<f64> = Axis::ALL
            .iter()
            .filter(|a| **a != strong_axis)
            .map(|a| k[a.index()])
            .collect();
        let bracket = (weak[0].min(weak[1]), weak[0].max(weak[1]));
        Ok(Self {
            k,
            k_weak_bracket: bracket,
            strong_axis,
            axis_ambiguous,
        })
    }

    pub fn get(&self, axis: Axis) -> f64 {
        self.k[axis.index()]
    }

    /// Stiffness bracket for an axis whose orientation is ambiguous; `None`
    /// for the strong axis or when the trap axes are known.
    pub fn bracket(&self, axis: Axis) -> Option<(f64, f64)> {
        (self.axis_ambiguous && axis != self.strong_axis).then_some(self.k_weak_bracket)
    }
}

pub fn spring_constants(species: &IonSpecies, trap: &TrapConfig) -> Result<SpringConstants> {
    species.validate()?;
    trap.validate()?;
    let m = species.mass_kg();
    let k = trap
        .secular_freqs_hz
        .map(|nu| m * nu.angular().powi(2) * ZN_PER_NM_PER_N_PER_M);
    SpringConstants::from_values(k, trap.axis_ambiguous)
}

/// F = k·Δx, zN from zN/nm and nm.
pub fn hooke_force(k_zn_per_nm: f64, displacement_nm: f64) -> f64 {
    k_zn_per_nm * displacement_nm
}

/// Inverts Hooke's law and the spring-constant relation: k = F/Δx and
/// ν = √(k/m)/2π.
pub fn infer_spring_constant(force_zn: f64, displacement_nm: f64, species: &IonSpecies) -> Result<(f64, Frequency)> {
    species.validate()?;
    if displacement_nm == 0.0 {
        return Err(Error::ZeroDisplacement);
    }
    let k = force_zn / displacement_nm;
    if !(k.is_finite() && k > 0.0) {
        return Err(invalid(format!(
            "force and displacement must share sign and be finite (k = {k} zN/nm)"
        )));
    }
    let omega = (k / ZN_PER_NM_PER_N_PER_M / species.mass_kg()).sqrt();
    Ok((k, Frequency::from_angular(omega)))
}

/// Equilibrium separation of two identical ions along an axis with secular
/// frequency ν: l = (e²/(8π³ε₀mν²))^{1/3}, returned in µm.
pub fn two_ion_separation(species: &IonSpecies, nu: Frequency) -> Result<f64> {
    species.validate()?;
    if !(nu.hz().is_finite() && nu.hz() > 0.0) {
        return Err(invalid(format!("frequency must be > 0, got {} Hz", nu.hz())));
    }
    let c = CODATA;
    let l3 = c.elementary_charge.powi(2) / (8.0 * PI.powi(3) * c.epsilon0 * species.mass_kg() * nu.hz().powi(2));
    Ok(l3.cbrt() * 1e6)
}

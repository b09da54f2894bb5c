//! Gaussian-beam spot geometry and the defocus width ↔ z mapping.
//!
//! Widths are 1/e² intensity radii in object space (nm). Positive z moves the
//! ion away from the lens; moving the camera away from the lens by d is
//! equivalent to an object-space defocus of d/M².

use crate::error::{invalid, Error, Result};
use crate::lsq::{self, LmOptions, Problem};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// FWHM / w0 for a Gaussian intensity profile exp(−2r²/w0²).
pub fn fwhm_per_waist() -> f64 {
    (2.0 * 2f64.ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub wavelength_nm: f64,
    pub numerical_aperture: f64,
    pub magnification: f64,
    /// Deliberate defocus z₀ of the operating point.
    #[serde(default)]
    pub defocus_offset_nm: f64,
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return Err(invalid("optics wavelength_nm must be > 0"));
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(invalid(format!(
                "optics numerical_aperture must lie in (0, 1), got {}",
                self.numerical_aperture
            )));
        }
        if !(self.magnification.is_finite() && self.magnification > 0.0) {
            return Err(invalid("optics magnification must be > 0"));
        }
        if !self.defocus_offset_nm.is_finite() {
            return Err(invalid("optics defocus_offset_nm must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub waist_radius_w0: f64,
    pub fwhm: f64,
    pub rayleigh_range: f64,
}

impl BeamGeometry {
    /// Ideal Gaussian beam: z_R = πw0²/λ.
    pub fn from_waist(w0_nm: f64, wavelength_nm: f64) -> Self {
        Self::with_rayleigh_range(w0_nm, PI * w0_nm * w0_nm / wavelength_nm)
    }

    /// Calibrated geometry where the Rayleigh range is measured, not derived.
    pub fn with_rayleigh_range(w0_nm: f64, z_r_nm: f64) -> Self {
        Self {
            waist_radius_w0: w0_nm,
            fwhm: w0_nm * fwhm_per_waist(),
            rayleigh_range: z_r_nm,
        }
    }
}

/// Diffraction-limited geometry, w0 = λ/(π·NA).
pub fn beam_geometry(optics: &OpticsConfig) -> BeamGeometry {
    let w0 = optics.wavelength_nm / (PI * optics.numerical_aperture);
    BeamGeometry::from_waist(w0, optics.wavelength_nm)
}

/// w(z) = w0·√(1 + z²/z_R²)
pub fn spot_width_at(z_nm: f64, geom: &BeamGeometry) -> f64 {
    geom.waist_radius_w0 * (1.0 + (z_nm / geom.rayleigh_range).powi(2)).sqrt()
}

/// dw/dz = w0·z/(z_R²·√(1 + z²/z_R²))
pub fn width_slope_at(z_nm: f64, geom: &BeamGeometry) -> f64 {
    let u = z_nm / geom.rayleigh_range;
    geom.waist_radius_w0 * u / (geom.rayleigh_range * (1.0 + u * u).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefocusCalibration {
    pub w0_effective: f64,
    pub z_r_effective: f64,
    /// Defocus of the operating point; its sign selects the inversion branch.
    pub operating_offset: f64,
    /// RMS width residual of the calibration scan.
    #[serde(default)]
    pub width_uncertainty_floor: f64,
}

impl DefocusCalibration {
    pub fn geometry(&self) -> BeamGeometry {
        BeamGeometry::with_rayleigh_range(self.w0_effective, self.z_r_effective)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0_effective > 0.0 && self.z_r_effective > 0.0) {
            return Err(invalid("calibration w0 and z_R must be > 0"));
        }
        if self.operating_offset == 0.0 || !self.operating_offset.is_finite() {
            return Err(invalid("calibration operating_offset must be non-zero for z sensing"));
        }
        if self.width_uncertainty_floor < 0.0 {
            return Err(invalid("calibration width_uncertainty_floor must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEstimate {
    /// Defocus of the ion, on the branch of the operating point.
    pub z: f64,
    pub z_error: f64,
    /// Operating point too close to focus for a linear error estimate.
    pub ill_conditioned: bool,
}

/// Operating points closer to focus than this fraction of z_R are flagged.
const NEAR_FOCUS_FRACTION: f64 = 0.1;

/// Inverts w(z) on the branch holding the operating offset.
pub fn width_to_z(measured_width: f64, width_error: f64, calib: &DefocusCalibration) -> Result<ZEstimate> {
    let geom = calib.geometry();
    let w0 = geom.waist_radius_w0;
    let z_r = geom.rayleigh_range;
    if !(measured_width.is_finite() && width_error.is_finite() && width_error >= 0.0) {
        return Err(invalid("width and width error must be finite, error ≥ 0"));
    }
    let minimum = w0 - 3.0 * width_error;
    if measured_width < minimum {
        return Err(Error::OutOfModel {
            width_nm: measured_width,
            minimum_nm: minimum,
        });
    }
    let branch = if calib.operating_offset < 0.0 { -1.0 } else { 1.0 };
    let ratio2 = (measured_width / w0).powi(2);
    let z = branch * z_r * (ratio2 - 1.0).max(0.0).sqrt();
    let slope = width_slope_at(z, &geom).abs();
    let linear = width_error / slope;
    let ill_conditioned = calib.operating_offset.abs() < NEAR_FOCUS_FRACTION * z_r;
    let z_error = if ill_conditioned || !linear.is_finite() {
        // Near focus w ≈ w0(1 + z²/2z_R²), so a width error δw maps to z_R·√(2δw/w0).
        let quadratic = z_r * (2.0 * width_error / w0).sqrt();
        if linear.is_finite() {
            linear.max(quadratic)
        } else {
            quadratic
        }
    } else {
        linear
    };
    Ok(ZEstimate {
        z,
        z_error,
        ill_conditioned,
    })
}

struct DefocusProblem<'a> {
    /// (object-space camera-equivalent shift, width)
    points: &'a [(f64, f64)],
}

impl Problem for DefocusProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        self.points.len()
    }

    fn evaluate(&self, p: &[f64], r: &mut DVector<f64>, j: Option<&mut DMatrix<f64>>) {
        let (w0, z_r, z_op) = (p[0], p[1], p[2]);
        let mut jac = j;
        for (k, &(u, w)) in self.points.iter().enumerate() {
            let z = z_op + u;
            let q = (1.0 + (z / z_r).powi(2)).sqrt();
            let model = w0 * q;
            r[k] = w - model;
            if let Some(j) = jac.as_deref_mut() {
                j[(k, 0)] = q;
                j[(k, 1)] = -w0 * z * z / (z_r.powi(3) * q);
                j[(k, 2)] = w0 * z / (z_r * z_r * q);
            }
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0
    }
}

/// Fits w0, z_R and the operating defocus from a camera-translation scan.
///
/// `scan` holds (camera translation in nm, fitted 1/e² width in object-space
/// nm); translations are mapped to object space through the longitudinal
/// magnification M².
pub fn calibrate_defocus(scan: &[(f64, f64)], magnification: f64) -> Result<DefocusCalibration> {
    if scan.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "defocus calibration needs ≥4 scan points, got {}",
            scan.len()
        )));
    }
    if !(magnification > 0.0) || scan.iter().any(|(d, w)| !d.is_finite() || !(*w > 0.0)) {
        return Err(invalid(
            "calibration scan needs finite translations, positive widths and M > 0",
        ));
    }
    let m2 = magnification * magnification;
    let points: Vec<(f64, f64)> = scan.iter().map(|&(d, w)| (d / m2, w)).collect();

    // w² = a + b·u + c·u² is linear in (a, b, c); its vertex gives the start.
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &(u, w) in &points {
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        atb += row * (w * w);
    }
    let coeffs = ata
        .try_inverse()
        .map(|inv| inv * atb)
        .ok_or_else(|| Error::IllConditioned("scan translations are degenerate".into()))?;
    let (a, b, c) = (coeffs[0], coeffs[1], coeffs[2]);
    let w0_sq = a - b * b / (4.0 * c);
    if !(c > 0.0 && w0_sq > 0.0) {
        return Err(Error::IllConditioned("scan shows no focal curvature".into()));
    }
    let w0 = w0_sq.sqrt();
    let start = [w0, w0 / c.sqrt(), b / (2.0 * c)];

    let mut problem = DefocusProblem { points: &points };
    let out = lsq::minimize(&mut problem, &start, &LmOptions::default())?;
    let (w0, z_r, z_op) = (out.params[0], out.params[1], out.params[2]);

    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < z_r {
        return Err(Error::IllConditioned(format!(
            "scan spans {:.1} nm in object space, less than z_R = {z_r:.1} nm",
            hi - lo
        )));
    }
    Ok(DefocusCalibration {
        w0_effective: w0,
        z_r_effective: z_r,
        operating_offset: z_op,
        width_uncertainty_floor: (out.cost / points.len() as f64).sqrt(),
    })
}

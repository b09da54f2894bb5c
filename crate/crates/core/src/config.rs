//! Run configuration: one TOML file describing the apparatus, the camera,
//! drift, the chop schedule, analysis options and published reference values.

use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::force::AnalysisOptions;
use crate::light::{detected_photon_number, scattering_rate, DetectionChain, LaserConfig};
use crate::optics::{beam_geometry, DefocusCalibration, OpticsConfig};
use crate::sim::{CameraConfig, ChopSchedule, DriftModel, Scene, SpotModel};
use crate::trap::{spring_constants, IonSpecies, SpringConstants, TrapConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The complete profile shipped with the toolkit.
pub const PAPER_DEFAULTS: &str = include_str!("../../../configs/paper_defaults.toml");

/// Effective spot at focus; omitted means the diffraction-limited spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotConfig {
    pub fwhm_x_nm: f64,
    pub fwhm_y_nm: f64,
    pub rayleigh_range_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub fit: FitOptions,
    pub force: AnalysisOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_output() -> String {
    "out".to_string()
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output: default_output(),
        }
    }
}

/// Published numbers the reproduction cases compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValues {
    /// Quoted stiffness per axis (x, y, z), zN/nm.
    pub spring_constants_zn_per_nm: [f64; 3],
    pub spring_constant_errors_zn_per_nm: [f64; 3],
    pub two_ion_frequency_hz: f64,
    pub two_ion_frequency_error_hz: f64,
    pub two_ion_separation_um: f64,
    pub two_ion_image_separation_px: f64,
    pub two_ion_image_separation_error_px: f64,
    pub two_ion_image_separation_um: f64,
    pub magnification: f64,
    pub magnification_error: f64,
    pub waist_nm: f64,
    pub fwhm_nm: f64,
    pub rayleigh_range_nm: f64,
    pub focus_fwhm_nm: [f64; 2],
    pub detected_photons: f64,
    pub centroid_limit_nm: f64,
    pub attack_rate_nm_per_rthz: f64,
    pub quoted_focus_limit_nm: f64,
    pub width_limit_inverse_1s: f64,
    pub limit_sensitivity_strong_zn_per_rthz: f64,
    pub limit_sensitivity_weak_zn_per_rthz: [f64; 2],
    pub ratio_strong: f64,
    pub ratio_weak: f64,
    /// Error table, per axis x, y, z, nm.
    pub sigma_fit_nm: [f64; 3],
    pub sigma_drift_fit_nm: [f64; 3],
    pub sigma_drift_interpolation_nm: [f64; 3],
    pub sigma_ion_nm: [f64; 3],
    pub sensitivity_x_zn_per_rthz: f64,
    pub sensitivity_x_error_zn_per_rthz: f64,
    pub sensitivity_y_zn_per_rthz: [f64; 2],
    pub sensitivity_z_zn_per_rthz: [f64; 2],
    pub sensitivity_z_error_zn_per_rthz: f64,
    pub max_light_force_zn: f64,
    pub drifted_frequency_hz: f64,
    pub drifted_frequency_error_hz: f64,
    pub weak_axis_displacement_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub species: IonSpecies,
    pub trap: TrapConfig,
    pub laser: LaserConfig,
    pub detection: DetectionChain,
    pub optics: OpticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spot: Option<SpotConfig>,
    pub camera: CameraConfig,
    pub drift: DriftModel,
    pub schedule: ChopSchedule,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub run: RunSection,
    /// Measured defocus calibration; derived from the spot model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<DefocusCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceValues>,
}

impl RunConfig {
    pub fn paper_defaults() -> Self {
        Self::from_toml(PAPER_DEFAULTS).expect("bundled profile parses")
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let tag = |section: &str, e: Error| match e {
            Error::InvalidInput(m) => Error::Config(format!("[{section}] {m}")),
            other => other,
        };
        self.species.validate().map_err(|e| tag("species", e))?;
        self.trap.validate().map_err(|e| tag("trap", e))?;
        self.laser.validate().map_err(|e| tag("laser", e))?;
        self.detection.validate().map_err(|e| tag("detection", e))?;
        self.optics.validate().map_err(|e| tag("optics", e))?;
        self.spot_model().validate().map_err(|e| tag("spot", e))?;
        self.camera.validate().map_err(|e| tag("camera", e))?;
        self.drift.validate().map_err(|e| tag("drift", e))?;
        self.schedule.validate().map_err(|e| tag("schedule", e))?;
        if let Some(c) = &self.calibration {
            c.validate().map_err(|e| tag("calibration", e))?;
        }
        let c = self.analysis.force.confidence;
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Config(format!(
                "[analysis] confidence must lie in (0, 1), got {c}"
            )));
        }
        Ok(())
    }

    pub fn spot_model(&self) -> SpotModel {
        match self.spot {
            Some(s) => SpotModel::from_fwhm(s.fwhm_x_nm, s.fwhm_y_nm, s.rayleigh_range_nm),
            None => SpotModel::ideal(&beam_geometry(&self.optics)),
        }
    }

    pub fn springs(&self) -> Result<SpringConstants> {
        spring_constants(&self.species, &self.trap)
    }

    /// Detected photons per camera exposure.
    pub fn photons_per_frame(&self) -> f64 {
        detected_photon_number(scattering_rate(&self.laser), &self.detection, self.camera.exposure_s)
    }

    /// Ion at the trap center with the configured photon budget.
    pub fn scene(&self) -> Scene {
        Scene {
            ion_position_nm: [0.0; 3],
            expected_photons: self.photons_per_frame(),
            optics: self.optics,
            spot: self.spot_model(),
        }
    }

    /// The configured calibration, or the one implied by the spot model and
    /// the optics defocus offset.
    pub fn defocus_calibration(&self) -> DefocusCalibration {
        self.calibration.unwrap_or_else(|| {
            let spot = self.spot_model();
            DefocusCalibration {
                w0_effective: spot.mean_waist(),
                z_r_effective: spot.rayleigh_range_nm,
                operating_offset: self.optics.defocus_offset_nm,
                width_uncertainty_floor: 0.0,
            }
        })
    }

    pub fn reference(&self) -> Result<&ReferenceValues> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::Config("this operation needs a [reference] section".into()))
    }
}

//! Synthetic fluorescence frames of a single ion.
//!
//! Pixel `(col, row)` covers `[col, col+1) × [row, row+1)` in pixel
//! coordinates; the ROI center sits at `(width/2, height/2)` and maps to the
//! object-space origin. Spot profiles are Gaussian with standard deviation
//! half the 1/e² radius and are integrated exactly over each pixel.

mod drift;
pub mod ionf;
mod series;

pub use drift::{simulate_drift, DriftModel};
pub use series::{simulate_chopped_series, ChopSchedule, FrameSeries, ManifestEntry, SeriesManifest};

use crate::error::{invalid, Result};
use crate::optics::{BeamGeometry, OpticsConfig};
use libm::erfc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

/// Flux fraction inside the ROI below which a frame is flagged truncated.
pub const MIN_CONTAINED_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmGainModel {
    None,
    /// High-gain EMCCD register: variance doubled relative to Poisson.
    MultiplicativeExcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    /// Physical pixel pitch on the sensor.
    pub pixel_pitch_um: f64,
    /// (width, height) in pixels.
    pub roi: [usize; 2],
    pub em_gain: EmGainModel,
    /// Gaussian read noise, counts rms.
    #[serde(default)]
    pub read_noise: f64,
    /// photons/pixel/s
    #[serde(default)]
    pub background_rate: f64,
    pub exposure_s: f64,
    /// When false, frames hold the rounded expected image.
    #[serde(default = "yes")]
    pub shot_noise: bool,
}

fn yes() -> bool {
    true
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch_um.is_finite() && self.pixel_pitch_um > 0.0) {
            return Err(invalid("camera pixel_pitch_um must be > 0"));
        }
        if self.roi[0] < 8 || self.roi[1] < 8 {
            return Err(invalid(format!("camera roi must be at least 8×8, got {:?}", self.roi)));
        }
        if !(self.exposure_s.is_finite() && self.exposure_s > 0.0) {
            return Err(invalid("camera exposure_s must be > 0"));
        }
        if !(self.read_noise >= 0.0 && self.background_rate >= 0.0) {
            return Err(invalid("camera read_noise and background_rate must be ≥ 0"));
        }
        Ok(())
    }

    /// Object-plane size of one pixel in nm.
    pub fn object_pixel_nm(&self, magnification: f64) -> f64 {
        self.pixel_pitch_um * 1e3 / magnification
    }

    pub fn background_per_pixel(&self) -> f64 {
        self.background_rate * self.exposure_s
    }
}

/// Effective spot: 1/e² radii at focus per image axis plus a Rayleigh range.
/// Real-lens aberrations enter through larger-than-ideal waists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotModel {
    pub w0_x_nm: f64,
    pub w0_y_nm: f64,
    pub rayleigh_range_nm: f64,
}

impl SpotModel {
    pub fn ideal(geom: &BeamGeometry) -> Self {
        Self {
            w0_x_nm: geom.waist_radius_w0,
            w0_y_nm: geom.waist_radius_w0,
            rayleigh_range_nm: geom.rayleigh_range,
        }
    }

    pub fn from_fwhm(fwhm_x_nm: f64, fwhm_y_nm: f64, rayleigh_range_nm: f64) -> Self {
        let k = crate::optics::fwhm_per_waist();
        Self {
            w0_x_nm: fwhm_x_nm / k,
            w0_y_nm: fwhm_y_nm / k,
            rayleigh_range_nm,
        }
    }

    /// Mean waist, the quantity a width-to-z calibration tracks.
    pub fn mean_waist(&self) -> f64 {
        0.5 * (self.w0_x_nm + self.w0_y_nm)
    }

    /// 1/e² radii at defocus z.
    pub fn widths_at(&self, z_nm: f64) -> [f64; 2] {
        let q = (1.0 + (z_nm / self.rayleigh_range_nm).powi(2)).sqrt();
        [self.w0_x_nm * q, self.w0_y_nm * q]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0_x_nm > 0.0 && self.w0_y_nm > 0.0 && self.rayleigh_range_nm > 0.0) {
            return Err(invalid("spot waists and Rayleigh range must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Ion position relative to the trap center; z adds to the optics defocus.
    pub ion_position_nm: [f64; 3],
    /// Camera-detected photon budget per frame.
    pub expected_photons: f64,
    pub optics: OpticsConfig,
    pub spot: SpotModel,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.spot.validate()?;
        if !(self.expected_photons.is_finite() && self.expected_photons >= 0.0) {
            return Err(invalid("expected_photons must be ≥ 0"));
        }
        if self.ion_position_nm.iter().any(|v| !v.is_finite()) {
            return Err(invalid("ion position must be finite"));
        }
        Ok(())
    }

    pub fn defocus_nm(&self) -> f64 {
        self.optics.defocus_offset_nm + self.ion_position_nm[2]
    }

    pub fn at_position(&self, position_nm: [f64; 3]) -> Self {
        Self {
            ion_position_nm: position_nm,
            ..*self
        }
    }
}

/// Row-major f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn center(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    pub fn total(&self) -> f64 {
        crate::stats::sum(self.data.iter().copied())
    }
}

/// Probability mass of a standard normal between `a` and `b` (a ≤ b), using
/// the complementary error function on the far tail to keep precision.
pub(crate) fn normal_interval(a: f64, b: f64) -> f64 {
    let upper = |u: f64| 0.5 * erfc(u / SQRT_2);
    if a >= 0.0 {
        upper(a) - upper(b)
    } else if b <= 0.0 {
        upper(-b) - upper(-a)
    } else {
        1.0 - upper(-a) - upper(b)
    }
}

/// Per-pixel flux fractions of a 1D Gaussian of center `mu` and width
/// `sigma` over pixels `[i, i+1)`, i = 0..n.
pub(crate) fn pixel_fractions(n: usize, mu: f64, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|i| normal_interval((i as f64 - mu) / sigma, (i as f64 + 1.0 - mu) / sigma))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedImage {
    pub image: Image,
    /// Fraction of the spot flux inside the ROI.
    pub contained_fraction: f64,
    pub truncated: bool,
    /// Spot center in pixel coordinates.
    pub centroid_px: [f64; 2],
    /// Spot standard deviations in pixels.
    pub sigma_px: [f64; 2],
}

pub fn expected_image(scene: &Scene, camera: &CameraConfig) -> Result<ExpectedImage> {
    scene.validate()?;
    camera.validate()?;
    let [w, h] = camera.roi;
    let scale = camera.object_pixel_nm(scene.optics.magnification);
    let centroid_px = [
        w as f64 / 2.0 + scene.ion_position_nm[0] / scale,
        h as f64 / 2.0 + scene.ion_position_nm[1] / scale,
    ];
    let widths = scene.spot.widths_at(scene.defocus_nm());
    let sigma_px = [widths[0] / (2.0 * scale), widths[1] / (2.0 * scale)];
    let fx = pixel_fractions(w, centroid_px[0], sigma_px[0]);
    let fy = pixel_fractions(h, centroid_px[1], sigma_px[1]);
    let contained_fraction = normal_interval(-centroid_px[0] / sigma_px[0], (w as f64 - centroid_px[0]) / sigma_px[0])
        * normal_interval(-centroid_px[1] / sigma_px[1], (h as f64 - centroid_px[1]) / sigma_px[1]);
    let bg = camera.background_per_pixel();
    let mut image = Image::zeros(w, h);
    for (row, py) in fy.iter().enumerate() {
        for (col, px) in fx.iter().enumerate() {
            image.data[row * w + col] = scene.expected_photons * px * py + bg;
        }
    }
    Ok(ExpectedImage {
        image,
        contained_fraction,
        truncated: contained_fraction < MIN_CONTAINED_FRACTION,
        centroid_px,
        sigma_px,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChopState {
    ForceOff,
    ForceOn,
}

/// How a frame was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ion_position_nm: [f64; 3],
    pub defocus_nm: f64,
    pub expected_photons: f64,
    pub magnification: f64,
    pub em_gain: EmGainModel,
    pub read_noise: f64,
    pub background_rate: f64,
    pub shot_noise: bool,
    pub contained_fraction: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetadata {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_um: f64,
    pub object_pixel_nm: f64,
    pub exposure_s: f64,
    pub timestamp_s: f64,
    pub chop_state: ChopState,
    pub seed: u64,
    pub frame_index: u64,
    /// Some pixel hit the top of the u32 range.
    pub saturated: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Vec<u32>,
    pub meta: FrameMetadata,
}

impl Frame {
    pub fn to_image(&self) -> Image {
        Image {
            width: self.meta.width,
            height: self.meta.height,
            data: self.pixels.iter().map(|&p| p as f64).collect(),
        }
    }
}

/// RNG for frame `index` of a run seeded with `seed`: one ChaCha stream per
/// frame, so frames can be produced in any order.
pub(crate) fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_pixel(mean: f64, camera: &CameraConfig, rng: &mut impl Rng) -> f64 {
    let mut value = if !camera.shot_noise {
        mean
    } else if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng)
    } else {
        0.0
    };
    if camera.shot_noise && camera.em_gain == EmGainModel::MultiplicativeExcess && value > 0.0 {
        // Output of a long gain register divided by its gain: Γ(n, 1).
        value = Gamma::new(value, 1.0).expect("positive shape").sample(rng);
    }
    if camera.read_noise > 0.0 {
        value += Normal::new(0.0, camera.read_noise).expect("finite sigma").sample(rng);
    }
    value
}

/// Renders frame `frame_index` with shot noise, optional EM excess noise and
/// read noise. Pixels are rounded, clamped at zero and saturate at `u32::MAX`.
pub fn render_frame(scene: &Scene, camera: &CameraConfig, seed: u64, frame_index: u64) -> Result<Frame> {
    render_tagged(scene, camera, seed, frame_index, 0.0, ChopState::ForceOff)
}

pub(crate) fn render_tagged(
    scene: &Scene,
    camera: &CameraConfig,
    seed: u64,
    frame_index: u64,
    timestamp_s: f64,
    chop_state: ChopState,
) -> Result<Frame> {
    let expected = expected_image(scene, camera)?;
    let mut rng = frame_rng(seed, frame_index);
    let mut saturated = false;
    let pixels = expected
        .image
        .data
        .iter()
        .map(|&mean| {
            let v = sample_pixel(mean, camera, &mut rng).round().max(0.0);
            if v >= u32::MAX as f64 {
                saturated = true;
                u32::MAX
            } else {
                v as u32
            }
        })
        .collect();
    Ok(Frame {
        pixels,
        meta: FrameMetadata {
            width: camera.roi[0],
            height: camera.roi[1],
            pixel_pitch_um: camera.pixel_pitch_um,
            object_pixel_nm: camera.object_pixel_nm(scene.optics.magnification),
            exposure_s: camera.exposure_s,
            timestamp_s,
            chop_state,
            seed,
            frame_index,
            saturated,
            provenance: Provenance {
                ion_position_nm: scene.ion_position_nm,
                defocus_nm: scene.defocus_nm(),
                expected_photons: scene.expected_photons,
                magnification: scene.optics.magnification,
                em_gain: camera.em_gain,
                read_noise: camera.read_noise,
                background_rate: camera.background_rate,
                shot_noise: camera.shot_noise,
                contained_fraction: expected.contained_fraction,
                truncated: expected.truncated,
            },
        },
    })
}

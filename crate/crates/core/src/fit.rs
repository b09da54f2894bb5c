//! Super-resolution localization: pixel-integrated 2D Gaussian fits and the
//! two-ion magnification calibration.
//!
//! The model for pixel `(col, row)` is
//! `amplitude·Ex(col)·Ey(row) + offset`, where `Ex`, `Ey` are the exact flux
//! fractions of an axis-aligned Gaussian over the pixel and `amplitude` is the
//! integrated spot flux in counts. Parameter order in covariances is
//! `[amplitude, x, y, σx, σy, offset]`, in counts and pixels.

use crate::error::{Error, Result};
use crate::lsq::{self, LmOptions, Problem};
use crate::sim::{ionf, pixel_fractions, ChopState, EmGainModel, Frame, FrameSeries, Image, SeriesManifest};
use crate::trap::{two_ion_separation, IonSpecies};
use crate::units::Frequency;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

const N_PARAMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInit {
    pub amplitude: f64,
    pub centroid: [f64; 2],
    pub widths: [f64; 2],
    pub offset: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Moment-based starting point: border-median offset, intensity-weighted
/// centroid and second moments of the background-subtracted frame.
pub fn moments_init(image: &Image) -> Result<FitInit> {
    let (w, h) = (image.width, image.height);
    let mut border = Vec::with_capacity(2 * (w + h));
    for row in 0..h {
        for col in 0..w {
            if row == 0 || col == 0 || row == h - 1 || col == w - 1 {
                border.push(image.get(col, row));
            }
        }
    }
    let offset = median(border);
    let (mut total, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for row in 0..h {
        for col in 0..w {
            let s = (image.get(col, row) - offset).max(0.0);
            total += s;
            sx += s * (col as f64 + 0.5);
            sy += s * (row as f64 + 0.5);
        }
    }
    if !(total > 0.0) {
        return Err(Error::NoSignal);
    }
    let (cx, cy) = (sx / total, sy / total);
    let (mut vx, mut vy) = (0.0, 0.0);
    for row in 0..h {
        for col in 0..w {
            let s = (image.get(col, row) - offset).max(0.0);
            vx += s * (col as f64 + 0.5 - cx).powi(2);
            vy += s * (row as f64 + 0.5 - cy).powi(2);
        }
    }
    // Remove the 1/12 px² pixel-box variance; keep widths positive.
    let width = |v: f64| (v / total - 1.0 / 12.0).max(0.09).sqrt();
    Ok(FitInit {
        amplitude: total,
        centroid: [cx, cy],
        widths: [width(vx), width(vy)],
        offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Unweighted,
    /// Weights 1/var from the current model (excess·μ + read²), refreshed
    /// every iteration; the fixed point solves the Poisson likelihood score.
    /// The covariance is then the unscaled inverse normal matrix.
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    /// Central differences, for gradient cross-checks.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub jacobian: JacobianMode,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// Read noise (counts rms) entering the variance model. Unset means the
    /// frame's recorded camera setting, or 0 for bare images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_noise: Option<f64>,
    /// Variance per expected count: 1 for a plain camera, 2 behind a
    /// high-gain EM register. Unset means taken from the frame metadata.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_noise_factor: Option<f64>,
    /// Lower bound on the per-pixel variance used for weights.
    pub variance_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::InverseVariance,
            jacobian: JacobianMode::Analytic,
            max_iterations: 200,
            rel_tolerance: 1e-8,
            read_noise: None,
            excess_noise_factor: None,
            variance_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussFit2D {
    /// Integrated spot flux above the offset.
    pub amplitude_counts: f64,
    pub centroid_px: [f64; 2],
    /// Relative to the ROI center, object space.
    pub centroid_nm: [f64; 2],
    pub sigma_px: [f64; 2],
    pub sigma_nm: [f64; 2],
    pub offset_counts: f64,
    /// `[amplitude, x, y, σx, σy, offset]` in counts and px.
    pub covariance: [[f64; N_PARAMS]; N_PARAMS],
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Object-plane pixel size used for the nm conversions.
    pub object_pixel_nm: f64,
    /// Weighted cost at the starting point and at the solution, both with
    /// the final weights.
    pub initial_cost: f64,
    pub final_cost: f64,
}

impl GaussFit2D {
    fn var(&self, i: usize) -> f64 {
        self.covariance[i][i].max(0.0)
    }

    pub fn centroid_error_nm(&self) -> [f64; 2] {
        [
            self.var(1).sqrt() * self.object_pixel_nm,
            self.var(2).sqrt() * self.object_pixel_nm,
        ]
    }

    pub fn sigma_error_nm(&self) -> [f64; 2] {
        [
            self.var(3).sqrt() * self.object_pixel_nm,
            self.var(4).sqrt() * self.object_pixel_nm,
        ]
    }

    /// Full width at half maximum, nm.
    pub fn fwhm_nm(&self) -> [f64; 2] {
        let k = 2.0 * (2.0 * 2f64.ln()).sqrt();
        [k * self.sigma_nm[0], k * self.sigma_nm[1]]
    }

    pub fn fwhm_error_nm(&self) -> [f64; 2] {
        let k = 2.0 * (2.0 * 2f64.ln()).sqrt();
        let e = self.sigma_error_nm();
        [k * e[0], k * e[1]]
    }

    /// Mean 1/e² radius over both axes, (2σx + 2σy)/2, nm.
    pub fn mean_waist_nm(&self) -> f64 {
        self.sigma_nm[0] + self.sigma_nm[1]
    }

    pub fn mean_waist_error_nm(&self) -> f64 {
        let v = self.covariance[3][3] + self.covariance[4][4] + 2.0 * self.covariance[3][4];
        v.max(0.0).sqrt() * self.object_pixel_nm
    }
}

struct GaussProblem<'a> {
    image: &'a Image,
    weights: Vec<f64>,
    options: FitOptions,
}

struct AxisTerms {
    frac: Vec<f64>,
    d_mu: Vec<f64>,
    d_sigma: Vec<f64>,
}

fn axis_terms(n: usize, mu: f64, sigma: f64, with_derivs: bool) -> AxisTerms {
    let frac = pixel_fractions(n, mu, sigma);
    let (mut d_mu, mut d_sigma) = (Vec::new(), Vec::new());
    if with_derivs {
        let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
        for i in 0..n {
            let a = (i as f64 - mu) / sigma;
            let b = (i as f64 + 1.0 - mu) / sigma;
            d_mu.push(-(pdf(b) - pdf(a)) / sigma);
            d_sigma.push(-(pdf(b) * b - pdf(a) * a) / sigma);
        }
    }
    AxisTerms { frac, d_mu, d_sigma }
}

impl GaussProblem<'_> {
    fn model(&self, p: &[f64]) -> Vec<f64> {
        let (w, h) = (self.image.width, self.image.height);
        let ex = pixel_fractions(w, p[1], p[3]);
        let ey = pixel_fractions(h, p[2], p[4]);
        let mut out = Vec::with_capacity(w * h);
        for fy in &ey {
            for fx in &ex {
                out.push(p[0] * fx * fy + p[5]);
            }
        }
        out
    }
}

impl Problem for GaussProblem<'_> {
    fn n_params(&self) -> usize {
        N_PARAMS
    }

    fn n_residuals(&self) -> usize {
        self.image.data.len()
    }

    fn evaluate(&self, p: &[f64], r: &mut DVector<f64>, jacobian: Option<&mut DMatrix<f64>>) {
        let (w, h) = (self.image.width, self.image.height);
        let analytic = jacobian.is_some() && self.options.jacobian == JacobianMode::Analytic;
        let x = axis_terms(w, p[1], p[3], analytic);
        let y = axis_terms(h, p[2], p[4], analytic);
        let amp = p[0];
        for row in 0..h {
            for col in 0..w {
                let k = row * w + col;
                let sw = self.weights[k].sqrt();
                r[k] = sw * (self.image.data[k] - (amp * x.frac[col] * y.frac[row] + p[5]));
            }
        }
        let Some(j) = jacobian else { return };
        if !analytic {
            *j = lsq::numeric_jacobian(self, p);
            return;
        }
        for row in 0..h {
            for col in 0..w {
                let k = row * w + col;
                let sw = self.weights[k].sqrt();
                let (fx, fy) = (x.frac[col], y.frac[row]);
                j[(k, 0)] = sw * fx * fy;
                j[(k, 1)] = sw * amp * x.d_mu[col] * fy;
                j[(k, 2)] = sw * amp * fx * y.d_mu[row];
                j[(k, 3)] = sw * amp * x.d_sigma[col] * fy;
                j[(k, 4)] = sw * amp * fx * y.d_sigma[row];
                j[(k, 5)] = sw;
            }
        }
    }

    fn refresh_weights(&mut self, p: &[f64]) {
        if self.options.weighting == Weighting::Unweighted {
            return;
        }
        let read2 = self.options.read_noise.unwrap_or(0.0).powi(2);
        let excess = self.options.excess_noise_factor.unwrap_or(1.0);
        let floor = self.options.variance_floor;
        self.weights = self
            .model(p)
            .into_iter()
            .map(|mu| 1.0 / (excess * mu + read2).max(floor))
            .collect();
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite()) && p[0] > 0.0 && p[3] > 0.0 && p[4] > 0.0
    }
}

/// Fits the pixel-integrated Gaussian to `image`. `object_pixel_nm` converts
/// pixel quantities to object space; the ROI center is the object origin.
pub fn fit_gaussian_2d(
    image: &Image,
    init: &FitInit,
    object_pixel_nm: f64,
    options: &FitOptions,
) -> Result<GaussFit2D> {
    if !(init.widths[0] > 0.0 && init.widths[1] > 0.0 && init.amplitude > 0.0) {
        return Err(Error::InvalidInput(
            "fit init needs positive widths and amplitude".into(),
        ));
    }
    let [cx, cy] = init.centroid;
    if !(cx >= 0.0 && cx <= image.width as f64 && cy >= 0.0 && cy <= image.height as f64) {
        return Err(Error::InvalidInput("fit init centroid lies outside the ROI".into()));
    }
    let start = [init.amplitude, cx, cy, init.widths[0], init.widths[1], init.offset];
    let mut problem = GaussProblem {
        image,
        weights: vec![1.0; image.data.len()],
        options: *options,
    };
    let lm = LmOptions {
        max_iterations: options.max_iterations,
        rel_tolerance: options.rel_tolerance,
        ..LmOptions::default()
    };
    let out = lsq::minimize(&mut problem, &start, &lm)?;
    // Inverse-variance weights carry the noise scale, so the normal matrix
    // inverts to the Fisher covariance directly. Rescaling by χ²/dof would be
    // biased low here: pixels sitting on the variance floor add almost no χ².
    let cov = match options.weighting {
        Weighting::InverseVariance => out.inverse_normal()?,
        Weighting::Unweighted => out.covariance()?,
    };

    let mut r = DVector::zeros(image.data.len());
    problem.evaluate(&start, &mut r, None);
    let initial_cost = r.norm_squared();

    let p = &out.params;
    let mut covariance = [[0.0; N_PARAMS]; N_PARAMS];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Symmetrize against round-off.
            *v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    let center = image.center();
    Ok(GaussFit2D {
        amplitude_counts: p[0],
        centroid_px: [p[1], p[2]],
        centroid_nm: [
            (p[1] - center[0]) * object_pixel_nm,
            (p[2] - center[1]) * object_pixel_nm,
        ],
        sigma_px: [p[3], p[4]],
        sigma_nm: [p[3] * object_pixel_nm, p[4] * object_pixel_nm],
        offset_counts: p[5],
        covariance,
        reduced_chi2: out.reduced_chi2(),
        converged: out.converged,
        iterations: out.iterations,
        object_pixel_nm,
        initial_cost,
        final_cost: out.cost,
    })
}

/// Moments initialization followed by the Gaussian fit, using the frame's
/// own pixel scale.
pub fn fit_frame(frame: &Frame, options: &FitOptions) -> Result<GaussFit2D> {
    let image = frame.to_image();
    let init = moments_init(&image)?;
    let prov = &frame.meta.provenance;
    let opts = FitOptions {
        read_noise: options.read_noise.or(Some(prov.read_noise)),
        excess_noise_factor: options.excess_noise_factor.or(Some(match prov.em_gain {
            EmGainModel::None => 1.0,
            EmGainModel::MultiplicativeExcess => 2.0,
        })),
        ..*options
    };
    fit_gaussian_2d(&image, &init, frame.meta.object_pixel_nm, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub chop_state: ChopState,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<GaussFit2D>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

fn entry(index: u64, t: f64, state: ChopState, result: Result<GaussFit2D>) -> FitEntry {
    let (fit, error) = match result {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    FitEntry {
        frame_index: index,
        timestamp_s: t,
        chop_state: state,
        fit,
        error,
    }
}

/// Fits every frame of an in-memory series; order is preserved and failures
/// become error entries.
pub fn fit_series(series: &FrameSeries, options: &FitOptions) -> Vec<FitEntry> {
    series
        .frames
        .par_iter()
        .map(|f| {
            entry(
                f.meta.frame_index,
                f.meta.timestamp_s,
                f.meta.chop_state,
                fit_frame(f, options),
            )
        })
        .collect()
}

/// Fits a series stored on disk. A manifest that cannot be read is fatal; an
/// unreadable frame becomes an error entry.
pub fn fit_series_dir(dir: &Path, options: &FitOptions) -> Result<(SeriesManifest, Vec<FitEntry>)> {
    let manifest = ionf::load_manifest(dir)?;
    let entries = manifest
        .frames
        .par_iter()
        .map(|e| {
            let result = ionf::load_frame(&dir.join(&e.file)).and_then(|f| fit_frame(&f, options));
            entry(e.frame_index, e.timestamp_s, e.chop_state, result)
        })
        .collect();
    Ok((manifest, entries))
}

/// M = (separation on the sensor) / (true two-ion separation).
pub fn magnification_from_two_ions(
    separation_px: f64,
    pixel_pitch_um: f64,
    nu: Frequency,
    species: &IonSpecies,
) -> Result<f64> {
    if !(separation_px > 0.0 && pixel_pitch_um > 0.0) {
        return Err(Error::InvalidInput("separation and pixel pitch must be > 0".into()));
    }
    Ok(separation_px * pixel_pitch_um / two_ion_separation(species, nu)?)
}

/// First-order uncertainty of the two-ion magnification; l ∝ ν^(−2/3).
pub fn magnification_uncertainty(
    magnification: f64,
    separation_px: f64,
    separation_err_px: f64,
    nu: Frequency,
    nu_err: Frequency,
) -> f64 {
    let rel_sep = separation_err_px / separation_px;
    let rel_nu = 2.0 / 3.0 * nu_err.hz() / nu.hz();
    magnification * (rel_sep * rel_sep + rel_nu * rel_nu).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::test_support::*;
    use crate::sim::{expected_image, render_frame, CameraConfig, EmGainModel, Scene};
    use crate::stats;
    use approx::assert_relative_eq;

    fn noiseless(scene: &Scene, cam: &CameraConfig) -> (Image, [f64; 2], [f64; 2]) {
        let e = expected_image(scene, cam).unwrap();
        (e.image, e.centroid_px, e.sigma_px)
    }

    #[test]
    fn moments_of_centered_spot() {
        let (img, _, _) = noiseless(&fig2_scene(1e5), &camera());
        let init = moments_init(&img).unwrap();
        assert!((init.centroid[0] - 16.0).abs() < 1e-3);
        assert!((init.centroid[1] - 16.0).abs() < 1e-3);
    }

    #[test]
    fn moments_of_offset_spot() {
        let scene = fig2_scene(1e5).at_position([60.0, -45.0, 0.0]);
        let (img, c, s) = noiseless(&scene, &camera());
        let init = moments_init(&img).unwrap();
        for a in 0..2 {
            assert!((init.centroid[a] - c[a]).abs() < 0.5);
            assert!((init.widths[a] - s[a]).abs() < 0.5);
        }
    }

    #[test]
    fn uniform_frame_has_no_signal() {
        let img = Image {
            width: 16,
            height: 16,
            data: vec![7.0; 256],
        };
        assert!(matches!(moments_init(&img), Err(Error::NoSignal)));
        assert!(matches!(moments_init(&Image::zeros(16, 16)), Err(Error::NoSignal)));
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let mut cam = camera();
        cam.background_rate = 0.25;
        let scene = fig2_scene(2e5).at_position([13.0, -21.0, 0.0]);
        let (img, c, s) = noiseless(&scene, &cam);
        for weighting in [Weighting::Unweighted, Weighting::InverseVariance] {
            let opts = FitOptions {
                weighting,
                ..Default::default()
            };
            let init = moments_init(&img).unwrap();
            let fit = fit_gaussian_2d(&img, &init, cam.object_pixel_nm(395.9), &opts).unwrap();
            assert!(fit.converged);
            assert_relative_eq!(fit.amplitude_counts, 2e5, max_relative = 1e-6);
            for a in 0..2 {
                assert_relative_eq!(fit.centroid_px[a], c[a], max_relative = 1e-6);
                assert_relative_eq!(fit.sigma_px[a], s[a], max_relative = 1e-6);
            }
            assert_relative_eq!(fit.offset_counts, 5.0, max_relative = 1e-6);
            assert!((fit.centroid_nm[0] - 13.0).abs() < 1e-5);
            assert!((fit.centroid_nm[1] + 21.0).abs() < 1e-5);
            assert!(fit.final_cost <= fit.initial_cost);
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let (img, _, _) = noiseless(&fig2_scene(1e4).at_position([7.0, 3.0, 0.0]), &camera());
        let problem = GaussProblem {
            image: &img,
            weights: vec![1.0; img.data.len()],
            options: FitOptions::default(),
        };
        let p = [9.0e3, 15.7, 16.2, 3.5, 4.4, 0.3];
        let mut r = DVector::zeros(img.data.len());
        let mut ja = DMatrix::zeros(img.data.len(), N_PARAMS);
        problem.evaluate(&p, &mut r, Some(&mut ja));
        let jn = lsq::numeric_jacobian(&problem, &p);
        let scale = ja.abs().max();
        assert!((ja - &jn).abs().max() < 1e-6 * scale);

        let fd = FitOptions {
            jacobian: JacobianMode::FiniteDifference,
            ..Default::default()
        };
        let init = moments_init(&img).unwrap();
        let a = fit_gaussian_2d(&img, &init, 40.4, &FitOptions::default()).unwrap();
        let b = fit_gaussian_2d(&img, &init, 40.4, &fd).unwrap();
        for i in 0..2 {
            assert!((a.centroid_px[i] - b.centroid_px[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let mut cam = camera();
        let plain = fit_frame(
            &render_frame(&fig2_scene(1e5), &cam, 2, 0).unwrap(),
            &FitOptions::default(),
        )
        .unwrap();
        cam.em_gain = EmGainModel::MultiplicativeExcess;
        let f = render_frame(&fig2_scene(1e5), &cam, 2, 0).unwrap();
        let fit = fit_frame(&f, &FitOptions::default()).unwrap();
        let m = DMatrix::from_fn(6, 6, |i, j| fit.covariance[i][j]);
        assert_eq!(m, m.transpose());
        let eig = m.symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-12 * eig.amax()));
        // EM excess noise doubles the per-pixel variance; weights that ignore
        // it leave twice the χ², weights that know it leave the plain value.
        let blind = FitOptions {
            excess_noise_factor: Some(1.0),
            ..Default::default()
        };
        let blind = fit_frame(&f, &blind).unwrap();
        let ratio = blind.reduced_chi2 / plain.reduced_chi2;
        assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
        let ratio = fit.reduced_chi2 / plain.reduced_chi2;
        assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn centroid_scatter_matches_shot_noise() {
        let scene = ideal_scene(1e4);
        let cam = camera();
        let sigma_nm = scene.spot.w0_x_nm / 2.0;
        let xs: Vec<f64> = (0..1000)
            .into_par_iter()
            .map(|i| {
                fit_frame(&render_frame(&scene, &cam, 21, i).unwrap(), &FitOptions::default())
                    .unwrap()
                    .centroid_nm[0]
            })
            .collect();
        let ratio = stats::std_dev(&xs) / (sigma_nm / 1e2);
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn reported_errors_match_ensemble_scatter() {
        for em in [EmGainModel::None, EmGainModel::MultiplicativeExcess] {
            let mut cam = camera();
            cam.em_gain = em;
            let fits: Vec<GaussFit2D> = (0..600)
                .into_par_iter()
                .map(|i| {
                    fit_frame(
                        &render_frame(&ideal_scene(1e4), &cam, 23, i).unwrap(),
                        &FitOptions::default(),
                    )
                    .unwrap()
                })
                .collect();
            let scatter = |f: &dyn Fn(&GaussFit2D) -> f64| stats::std_dev(&fits.iter().map(f).collect::<Vec<_>>());
            let reported = |f: &dyn Fn(&GaussFit2D) -> f64| stats::mean(&fits.iter().map(f).collect::<Vec<_>>());
            let pairs = [
                (scatter(&|f| f.centroid_nm[0]), reported(&|f| f.centroid_error_nm()[0])),
                (scatter(&|f| f.sigma_nm[1]), reported(&|f| f.sigma_error_nm()[1])),
                (scatter(&|f| f.mean_waist_nm()), reported(&|f| f.mean_waist_error_nm())),
            ];
            for (s, r) in pairs {
                assert!((r / s - 1.0).abs() < 0.1, "{em:?}: reported {r} vs scatter {s}");
            }
        }
    }

    #[test]
    fn unweighted_fit_is_less_efficient() {
        // Equal pixel weights under Poisson noise inflate the centroid
        // variance by 16/9 relative to the shot-noise bound.
        let scene = ideal_scene(1e4);
        let cam = camera();
        let sigma_nm = scene.spot.w0_x_nm / 2.0;
        let opts = FitOptions {
            weighting: Weighting::Unweighted,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..1000)
            .into_par_iter()
            .map(|i| {
                fit_frame(&render_frame(&scene, &cam, 22, i).unwrap(), &opts)
                    .unwrap()
                    .centroid_nm[0]
            })
            .collect();
        let ratio = stats::std_dev(&xs) / (sigma_nm / 1e2);
        assert!((ratio - 4.0 / 3.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn fig2_regime_fwhm_uncertainty_is_nm_scale() {
        let mut cam = camera();
        cam.em_gain = EmGainModel::MultiplicativeExcess;
        let f = render_frame(&fig2_scene(1.2e6), &cam, 4, 0).unwrap();
        let fit = fit_frame(&f, &FitOptions::default()).unwrap();
        let fwhm = fit.fwhm_nm();
        let err = fit.fwhm_error_nm();
        assert!(
            (fwhm[0] - 378.0).abs() < 3.0 && (fwhm[1] - 393.0).abs() < 3.0,
            "{fwhm:?}"
        );
        for e in err {
            assert!(e > 0.1 && e <= 1.0, "{err:?}");
        }
    }

    #[test]
    fn identical_frames_identical_fits_and_corrupt_frame_isolated() {
        use crate::sim::{ionf, simulate_chopped_series, ChopSchedule, DriftModel};
        let dir = tempfile::tempdir().unwrap();
        let sched = ChopSchedule {
            integration_time_s: 20.0,
            n_cycles: 2,
            applied_displacement_nm: [0.0; 3],
        };
        let mut cam = camera();
        cam.shot_noise = false;
        let s = simulate_chopped_series(&fig2_scene(1e5), &cam, &DriftModel::none(), &sched, 1).unwrap();
        let fits = fit_series(&s, &FitOptions::default());
        for f in &fits[1..] {
            assert_eq!(f.fit.unwrap().centroid_px, fits[0].fit.unwrap().centroid_px);
        }
        ionf::save_series(dir.path(), &s).unwrap();
        std::fs::write(dir.path().join(&s.manifest.frames[2].file), b"garbage").unwrap();
        let (_, entries) = fit_series_dir(dir.path(), &FitOptions::default()).unwrap();
        assert_eq!(entries.len(), 5);
        assert_eq!(entries.iter().filter(|e| e.fit.is_some()).count(), 4);
        assert!(entries[2].error.is_some());
    }

    #[test]
    fn two_ion_magnification() {
        let sp = IonSpecies::yb174();
        let nu = Frequency::from_khz(643.0);
        let pitch = 1824.5 / 114.0;
        let m = magnification_from_two_ions(114.0, pitch, nu, &sp).unwrap();
        assert!((m - 395.9).abs() / 395.9 < 3e-3, "{m}");
        let m2 = magnification_from_two_ions(228.0, pitch, nu, &sp).unwrap();
        assert_relative_eq!(m2, 2.0 * m, max_relative = 1e-14);
        let dm = magnification_uncertainty(m, 114.0, 0.1, nu, Frequency::from_khz(1.0));
        assert!((dm - 0.6).abs() < 0.1, "{dm}");
        assert!(magnification_from_two_ions(0.0, pitch, nu, &sp).is_err());
    }
}

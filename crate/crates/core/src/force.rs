//! From fitted positions to forces: drift-chopped differentials, the error
//! budget, Hooke conversion, sensitivities and linear-response fits.

use crate::error::{invalid, Error, Result};
use crate::fit::FitEntry;
use crate::optics::{width_to_z, DefocusCalibration};
use crate::sim::ChopState;
use crate::stats;
use crate::trap::SpringConstants;
use crate::units::Axis;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSample {
    pub time_s: f64,
    pub position_nm: [f64; 3],
    pub sigma_fit_nm: [f64; 3],
    pub chop_state: ChopState,
}

/// How the drift under an ON frame is estimated from the OFF frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Straight line between the two flanking OFF frames.
    #[default]
    Linear,
    /// Plain average of the two flanking OFF frames.
    AverageNeighbors,
    /// Parabola through the flanking OFF frames and the nearest one beyond.
    LocalQuadratic,
    /// Natural cubic spline through every OFF frame.
    NaturalSpline,
}

/// Estimator for the drift-interpolation uncertainty of an ON frame, built
/// from the deviations `d` of interior OFF frames from the line through their
/// OFF neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolationErrorModel {
    /// `rms(d)/√2`, with the fit-noise part of `d` removed. An ON frame sits
    /// half as far from its anchors as an OFF frame from its neighbours, so
    /// for a random walk its interpolation variance is half of `var(d)`.
    #[default]
    BridgeRms,
    /// `mean(|d|)/2`.
    HalfMeanAbsolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    pub time_s: f64,
    pub displacement_nm: [f64; 3],
    pub sigma_fit_nm: [f64; 3],
    /// Mean fit uncertainty of the two flanking OFF frames.
    pub sigma_drift_fit_nm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCorrection {
    pub differentials: Vec<Differential>,
    pub interpolation_sigma_nm: [f64; 3],
    /// Effective degrees of freedom of each interpolation variance estimate;
    /// `None` when that component is zero.
    pub interpolation_dof: [Option<f64>; 3],
    /// ON frames without an OFF frame on both sides.
    pub unbracketed_on_frames: usize,
}

/// Converts fit records into position samples. x and y come from the
/// centroid, z from the mean fitted waist through the defocus calibration,
/// relative to the operating point. Failed fits and widths outside the
/// calibrated model are skipped and counted.
pub fn samples_from_fits(entries: &[FitEntry], calib: &DefocusCalibration) -> (Vec<DisplacementSample>, usize) {
    let mut skipped = 0;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let Some(fit) = e.fit.filter(|f| f.converged) else {
            skipped += 1;
            continue;
        };
        let Ok(z) = width_to_z(fit.mean_waist_nm(), fit.mean_waist_error_nm(), calib) else {
            skipped += 1;
            continue;
        };
        let ce = fit.centroid_error_nm();
        out.push(DisplacementSample {
            time_s: e.timestamp_s,
            position_nm: [fit.centroid_nm[0], fit.centroid_nm[1], z.z - calib.operating_offset],
            sigma_fit_nm: [ce[0], ce[1], z.z_error],
            chop_state: e.chop_state,
        });
    }
    (out, skipped)
}

fn natural_spline_second_derivs(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

fn spline_eval(t: &[f64], y: &[f64], m: &[f64], seg: usize, x: f64) -> f64 {
    let h = t[seg + 1] - t[seg];
    let a = (t[seg + 1] - x) / h;
    let b = (x - t[seg]) / h;
    a * y[seg] + b * y[seg + 1] + ((a.powi(3) - a) * m[seg] + (b.powi(3) - b) * m[seg + 1]) * h * h / 6.0
}

fn lagrange3(t: [f64; 3], y: [f64; 3], x: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let mut l = 1.0;
        for j in 0..3 {
            if i != j {
                l *= (x - t[j]) / (t[i] - t[j]);
            }
        }
        s += l * y[i];
    }
    s
}

/// Subtracts the drift, estimated from the OFF frames, from every ON frame.
/// Samples must be in time order; at least three OFF frames are required.
pub fn drift_correct(
    samples: &[DisplacementSample],
    method: Interpolation,
    error_model: InterpolationErrorModel,
) -> Result<DriftCorrection> {
    if samples.windows(2).any(|w| !(w[1].time_s > w[0].time_s)) {
        return Err(invalid("displacement samples must be strictly increasing in time"));
    }
    let off: Vec<&DisplacementSample> = samples.iter().filter(|s| s.chop_state == ChopState::ForceOff).collect();
    if off.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "drift correction needs at least 3 force-OFF frames, got {}",
            off.len()
        )));
    }
    let t_off: Vec<f64> = off.iter().map(|s| s.time_s).collect();
    let y_off: Vec<Vec<f64>> = (0..3).map(|a| off.iter().map(|s| s.position_nm[a]).collect()).collect();
    let spline: Vec<Vec<f64>> = if method == Interpolation::NaturalSpline {
        (0..3)
            .map(|a| natural_spline_second_derivs(&t_off, &y_off[a]))
            .collect()
    } else {
        Vec::new()
    };

    let mut differentials = Vec::new();
    let mut unbracketed = 0;
    for s in samples.iter().filter(|s| s.chop_state == ChopState::ForceOn) {
        let next = t_off.partition_point(|&t| t < s.time_s);
        if next == 0 || next == t_off.len() {
            unbracketed += 1;
            continue;
        }
        let prev = next - 1;
        let (a, b) = (off[prev], off[next]);
        let mut d = Differential {
            time_s: s.time_s,
            displacement_nm: [0.0; 3],
            sigma_fit_nm: s.sigma_fit_nm,
            sigma_drift_fit_nm: [0.0; 3],
        };
        for ax in 0..3 {
            let y = &y_off[ax];
            let drift = match method {
                Interpolation::Linear => {
                    let f = (s.time_s - a.time_s) / (b.time_s - a.time_s);
                    y[prev] + f * (y[next] - y[prev])
                }
                Interpolation::AverageNeighbors => 0.5 * (y[prev] + y[next]),
                Interpolation::LocalQuadratic => {
                    let third = if next + 1 < t_off.len()
                        && (prev == 0 || t_off[next + 1] - s.time_s <= s.time_s - t_off[prev - 1])
                    {
                        next + 1
                    } else {
                        prev - 1
                    };
                    lagrange3(
                        [t_off[prev], t_off[next], t_off[third]],
                        [y[prev], y[next], y[third]],
                        s.time_s,
                    )
                }
                Interpolation::NaturalSpline => spline_eval(&t_off, y, &spline[ax], prev, s.time_s),
            };
            d.displacement_nm[ax] = s.position_nm[ax] - drift;
            d.sigma_drift_fit_nm[ax] = 0.5 * (a.sigma_fit_nm[ax] + b.sigma_fit_nm[ax]);
        }
        differentials.push(d);
    }

    // Adjacent second differences of a random walk correlate at -1/2, which
    // costs a third of the nominal degrees of freedom.
    const CORRELATION_COST: f64 = 1.5;
    let mut interpolation_sigma_nm = [0.0; 3];
    let mut interpolation_dof = [None; 3];
    for (ax, sigma) in interpolation_sigma_nm.iter_mut().enumerate() {
        let mut devs = Vec::with_capacity(off.len() - 2);
        let mut fit_var = Vec::with_capacity(off.len() - 2);
        for i in 1..off.len() - 1 {
            let f = (t_off[i] - t_off[i - 1]) / (t_off[i + 1] - t_off[i - 1]);
            let line = y_off[ax][i - 1] + f * (y_off[ax][i + 1] - y_off[ax][i - 1]);
            devs.push(y_off[ax][i] - line);
            let s = |j: usize| off[j].sigma_fit_nm[ax];
            fit_var.push(s(i).powi(2) + ((1.0 - f) * s(i - 1)).powi(2) + (f * s(i + 1)).powi(2));
        }
        let m = devs.len() as f64;
        let (value, dof) = match error_model {
            InterpolationErrorModel::HalfMeanAbsolute => (
                stats::mean(&devs.iter().map(|d| d.abs()).collect::<Vec<_>>()) / 2.0,
                m / CORRELATION_COST,
            ),
            InterpolationErrorModel::BridgeRms => {
                let ms = stats::mean(&devs.iter().map(|d| d * d).collect::<Vec<_>>());
                let excess = (ms - stats::mean(&fit_var)).max(0.0);
                // Subtracting the known fit part leaves the same absolute
                // scatter on a smaller variance.
                ((excess / 2.0).sqrt(), m * (excess / ms).powi(2) / CORRELATION_COST)
            }
        };
        *sigma = value;
        interpolation_dof[ax] = (value > 0.0).then_some(dof);
    }

    Ok(DriftCorrection {
        differentials,
        interpolation_sigma_nm,
        interpolation_dof,
        unbracketed_on_frames: unbracketed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub sigma_fit_nm: [f64; 3],
    pub sigma_drift_fit_nm: [f64; 3],
    pub sigma_drift_interpolation_nm: [f64; 3],
    pub sigma_ion_nm: [f64; 3],
}

/// Quadrature sum of the three per-axis components.
pub fn error_budget(sigma_fit: [f64; 3], sigma_drift_fit: [f64; 3], sigma_interp: [f64; 3]) -> Result<ErrorBudget> {
    let all = sigma_fit.iter().chain(&sigma_drift_fit).chain(&sigma_interp);
    if all.clone().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(invalid("error budget components must be finite and ≥ 0"));
    }
    let mut sigma_ion = [0.0; 3];
    for a in 0..3 {
        sigma_ion[a] = (sigma_fit[a].powi(2) + sigma_drift_fit[a].powi(2) + sigma_interp[a].powi(2)).sqrt();
    }
    Ok(ErrorBudget {
        sigma_fit_nm: sigma_fit,
        sigma_drift_fit_nm: sigma_drift_fit,
        sigma_drift_interpolation_nm: sigma_interp,
        sigma_ion_nm: sigma_ion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisForce {
    pub axis: Axis,
    pub displacement_nm: f64,
    pub displacement_error_nm: f64,
    pub spring_constant_zn_per_nm: f64,
    pub force_zn: f64,
    /// One standard deviation, from the displacement error only.
    pub statistical_error_zn: f64,
    /// Force range over the spring-constant bracket for ambiguous axes.
    pub systematic_bracket_zn: Option<(f64, f64)>,
    /// Effective degrees of freedom of the error estimate; `None` when it
    /// rests on known variances only.
    #[serde(default)]
    pub dof: Option<f64>,
}

impl AxisForce {
    /// Student-t multiplier on `statistical_error_zn` for a two-sided interval.
    pub fn interval_multiplier(&self, confidence: f64) -> f64 {
        stats::t_two_sided(confidence, self.dof)
    }

    /// Whether `truth` lies within the two-sided interval at `confidence`.
    pub fn covers(&self, truth: f64, confidence: f64) -> bool {
        (self.force_zn - truth).abs() <= self.interval_multiplier(confidence) * self.statistical_error_zn
    }
}

pub fn force_from_displacement(dx_nm: f64, sigma_nm: f64, springs: &SpringConstants, axis: Axis) -> Result<AxisForce> {
    if !dx_nm.is_finite() || !(sigma_nm >= 0.0) {
        return Err(invalid("displacement must be finite and its error ≥ 0"));
    }
    let k = springs.get(axis);
    let bracket = springs.bracket(axis).map(|(lo, hi)| {
        let (a, b) = (lo * dx_nm, hi * dx_nm);
        (a.min(b), a.max(b))
    });
    Ok(AxisForce {
        axis,
        displacement_nm: dx_nm,
        displacement_error_nm: sigma_nm,
        spring_constant_zn_per_nm: k,
        force_zn: k * dx_nm,
        statistical_error_zn: k * sigma_nm,
        systematic_bracket_zn: bracket,
        dof: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSensitivity {
    pub axis: Axis,
    pub value_zn_per_rthz: f64,
    pub bracket_zn_per_rthz: Option<(f64, f64)>,
}

impl AxisSensitivity {
    /// Bracket midpoint when bracketed, else the nominal value.
    pub fn central(&self) -> f64 {
        self.bracket_zn_per_rthz
            .map_or(self.value_zn_per_rthz, |(a, b)| 0.5 * (a + b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub integration_time_s: f64,
    pub axes: [AxisSensitivity; 3],
}

/// S = k·σ_ion·√T per axis.
pub fn sensitivity(
    budget: &ErrorBudget,
    springs: &SpringConstants,
    integration_time_s: f64,
) -> Result<SensitivityReport> {
    if !(integration_time_s > 0.0 && integration_time_s.is_finite()) {
        return Err(invalid("integration time must be > 0"));
    }
    let rt = integration_time_s.sqrt();
    let axes = Axis::ALL.map(|axis| {
        let s = budget.sigma_ion_nm[axis.index()] * rt;
        AxisSensitivity {
            axis,
            value_zn_per_rthz: springs.get(axis) * s,
            bracket_zn_per_rthz: springs.bracket(axis).map(|(lo, hi)| (lo * s, hi * s)),
        }
    });
    Ok(SensitivityReport {
        integration_time_s,
        axes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `[[var(intercept), cov], [cov, var(slope)]]`
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub confidence: f64,
}

impl LinearFit {
    pub fn slope_error(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn intercept_error(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Half-width of the confidence band of the fitted line at `x`.
    pub fn band(&self, x: f64) -> f64 {
        let c = &self.covariance;
        let var = c[0][0] + 2.0 * x * c[0][1] + x * x * c[1][1];
        stats::normal_two_sided(self.confidence) * var.max(0.0).sqrt()
    }
}

/// Weighted straight-line fit of `(control, displacement, σ)` points with a
/// 95% confidence band from the known errors.
pub fn linear_response_fit(points: &[(f64, f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs ≥ 3 points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|(x, y, s)| !x.is_finite() || !y.is_finite() || !(*s > 0.0))
    {
        return Err(invalid("linear fit points need finite values and σ > 0"));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, sig) in points {
        let w = 1.0 / (sig * sig);
        s += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let xbar = sx / s;
    let sxx_c: f64 = points.iter().map(|&(x, _, sig)| (x - xbar).powi(2) / (sig * sig)).sum();
    if !(sxx_c > 1e-12 * sxx.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::FitFailure(
            "degenerate abscissa: all control values equal".into(),
        ));
    }
    let delta = s * sxx - sx * sx;
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let chi2 = points
        .iter()
        .map(|&(x, y, sig)| ((y - intercept - slope * x) / sig).powi(2))
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        covariance: [[sxx / delta, -sx / delta], [-sx / delta, s / delta]],
        chi2,
        confidence: 0.95,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub interpolation: Interpolation,
    pub interpolation_error: InterpolationErrorModel,
    /// Two-sided confidence for reported intervals.
    pub confidence: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::Linear,
            interpolation_error: InterpolationErrorModel::BridgeRms,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    pub n_frames: usize,
    pub n_skipped_frames: usize,
    pub n_differentials: usize,
    pub unbracketed_on_frames: usize,
    pub options: AnalysisOptions,
    pub differentials: Vec<Differential>,
    /// Per data point (one ON frame).
    pub budget: ErrorBudget,
    pub forces: [AxisForce; 3],
    pub sensitivity: SensitivityReport,
}

/// Full chain from per-frame fits to forces: samples, drift correction,
/// budget, mean differential per axis with error σ_ion/√n, Hooke forces and
/// sensitivities.
pub fn analyze(
    entries: &[FitEntry],
    calib: &DefocusCalibration,
    springs: &SpringConstants,
    integration_time_s: f64,
    options: &AnalysisOptions,
) -> Result<ForceReport> {
    if !(options.confidence > 0.0 && options.confidence < 1.0) {
        return Err(invalid("confidence must lie in (0, 1)"));
    }
    let (samples, skipped) = samples_from_fits(entries, calib);
    let dc = drift_correct(&samples, options.interpolation, options.interpolation_error)?;
    let n = dc.differentials.len();
    if n == 0 {
        return Err(Error::InsufficientData(
            "no force-ON frame is bracketed by force-OFF frames".into(),
        ));
    }
    let col = |f: &dyn Fn(&Differential) -> [f64; 3], a: usize| -> Vec<f64> {
        dc.differentials.iter().map(|d| f(d)[a]).collect()
    };
    let mut sigma_fit = [0.0; 3];
    let mut sigma_drift_fit = [0.0; 3];
    let mut mean_disp = [0.0; 3];
    for a in 0..3 {
        sigma_fit[a] = stats::mean(&col(&|d| d.sigma_fit_nm, a));
        sigma_drift_fit[a] = stats::mean(&col(&|d| d.sigma_drift_fit_nm, a));
        mean_disp[a] = stats::mean(&col(&|d| d.displacement_nm, a));
    }
    let budget = error_budget(sigma_fit, sigma_drift_fit, dc.interpolation_sigma_nm)?;
    let rn = (n as f64).sqrt();
    let mut forces = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let a = axis.index();
        let mut f = force_from_displacement(mean_disp[a], budget.sigma_ion_nm[a] / rn, springs, axis)?;
        // Welch-Satterthwaite: only the interpolation term is estimated.
        f.dof = dc.interpolation_dof[a]
            .map(|v| budget.sigma_ion_nm[a].powi(4) / (dc.interpolation_sigma_nm[a].powi(4) / v));
        forces.push(f);
    }
    Ok(ForceReport {
        n_frames: entries.len(),
        n_skipped_frames: skipped,
        n_differentials: n,
        unbracketed_on_frames: dc.unbracketed_on_frames,
        options: *options,
        differentials: dc.differentials,
        budget,
        forces: [forces[0], forces[1], forces[2]],
        sensitivity: sensitivity(&budget, springs, integration_time_s)?,
    })
}

fn fmt_bracket(b: Option<(f64, f64)>) -> String {
    b.map_or_else(|| "-".to_string(), |(lo, hi)| format!("({lo:.2}, {hi:.2})"))
}

impl ForceReport {
    /// Human-readable tables; every column header carries its unit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "frames: {}  skipped: {}  differentials: {}  unbracketed ON: {}",
            self.n_frames, self.n_skipped_frames, self.n_differentials, self.unbracketed_on_frames
        );
        let _ = writeln!(s, "\nerror budget per data point");
        let _ = writeln!(
            s,
            "{:<5} {:>14} {:>18} {:>26} {:>14}",
            "axis", "sigma_fit[nm]", "sigma_drift_fit[nm]", "sigma_drift_interp[nm]", "sigma_ion[nm]"
        );
        let b = &self.budget;
        for a in Axis::ALL {
            let i = a.index();
            let _ = writeln!(
                s,
                "{:<5} {:>14.3} {:>18.3} {:>26.3} {:>14.3}",
                a.name(),
                b.sigma_fit_nm[i],
                b.sigma_drift_fit_nm[i],
                b.sigma_drift_interpolation_nm[i],
                b.sigma_ion_nm[i]
            );
        }
        let conf = self.options.confidence;
        let _ = writeln!(
            s,
            "\nforces (error is 1 sigma; interval is the {}% two-sided Student-t half-width)",
            100.0 * conf
        );
        let _ = writeln!(
            s,
            "{:<5} {:>16} {:>16} {:>12} {:>12} {:>12} {:>8} {:>14} {:>22}",
            "axis",
            "displacement[nm]",
            "disp_error[nm]",
            "k[zN/nm]",
            "force[zN]",
            "error[zN]",
            "dof",
            "interval[zN]",
            "bracket[zN]"
        );
        for f in &self.forces {
            let dof = f.dof.map_or_else(|| "inf".to_string(), |v| format!("{v:.1}"));
            let _ = writeln!(
                s,
                "{:<5} {:>16.3} {:>16.3} {:>12.3} {:>12.2} {:>12.2} {:>8} {:>14.2} {:>22}",
                f.axis.name(),
                f.displacement_nm,
                f.displacement_error_nm,
                f.spring_constant_zn_per_nm,
                f.force_zn,
                f.statistical_error_zn,
                dof,
                f.interval_multiplier(conf) * f.statistical_error_zn,
                fmt_bracket(f.systematic_bracket_zn)
            );
        }
        let _ = writeln!(s, "\nsensitivity (T = {} s)", self.sensitivity.integration_time_s);
        let _ = writeln!(s, "{:<5} {:>14} {:>24}", "axis", "S[zN/rtHz]", "bracket[zN/rtHz]");
        for a in &self.sensitivity.axes {
            let _ = writeln!(
                s,
                "{:<5} {:>14.1} {:>24}",
                a.axis.name(),
                a.value_zn_per_rthz,
                fmt_bracket(a.bracket_zn_per_rthz)
            );
        }
        s
    }
}

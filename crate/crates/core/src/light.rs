//! Two-level steady-state scattering, light-pressure force, the detected
//! photon budget and saturation-curve fitting.

use crate::error::{invalid, Error, Result};
use crate::lsq::{self, LmOptions, Problem};
use crate::trap::CODATA;
use crate::units::{Frequency, ZN_PER_N};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserConfig {
    pub wavelength_nm: f64,
    /// δ/2π, signed.
    pub detuning_hz: Frequency,
    /// Γ/2π.
    pub linewidth_hz: Frequency,
    /// s = P/P_sat.
    pub saturation: f64,
}

impl LaserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return Err(invalid("laser wavelength_nm must be > 0"));
        }
        if !(self.linewidth_hz.hz().is_finite() && self.linewidth_hz.hz() > 0.0) {
            return Err(invalid("laser linewidth_hz must be > 0"));
        }
        if !self.detuning_hz.hz().is_finite() {
            return Err(invalid("laser detuning_hz must be finite"));
        }
        if !(self.saturation.is_finite() && self.saturation >= 0.0) {
            return Err(invalid("laser saturation must be ≥ 0"));
        }
        Ok(())
    }

    pub fn with_saturation(mut self, s: f64) -> Self {
        self.saturation = s;
        self
    }

    /// (2δ/Γ)²
    pub fn detuning_term(&self) -> f64 {
        (2.0 * self.detuning_hz.hz() / self.linewidth_hz.hz()).powi(2)
    }

    /// Γ/2 in s⁻¹, the saturated scattering rate.
    pub fn max_scattering_rate(&self) -> f64 {
        self.linewidth_hz.angular() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionChain {
    pub collection_efficiency: f64,
    pub optics_transmission: f64,
    pub camera_qe: f64,
    /// Fraction of the collected light sent to the camera (PMT split).
    #[serde(default = "one")]
    pub splitter_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("collection_efficiency", self.collection_efficiency),
            ("optics_transmission", self.optics_transmission),
            ("camera_qe", self.camera_qe),
            ("splitter_fraction", self.splitter_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("detection {name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.collection_efficiency * self.optics_transmission * self.camera_qe * self.splitter_fraction
    }

    pub fn with_splitter(mut self, fraction: f64) -> Self {
        self.splitter_fraction = fraction;
        self
    }
}

/// γ = (Γ/2)·s/(1 + s + (2δ/Γ)²), photons/s.
pub fn scattering_rate(laser: &LaserConfig) -> f64 {
    let s = laser.saturation;
    laser.max_scattering_rate() * s / (1.0 + s + laser.detuning_term())
}

/// ħk in kg·m/s.
pub fn photon_momentum(wavelength_nm: f64) -> f64 {
    CODATA.hbar * 2.0 * PI / (wavelength_nm * 1e-9)
}

/// F = γħk in zN, along the beam.
pub fn light_pressure_force(gamma: f64, wavelength_nm: f64) -> f64 {
    gamma * photon_momentum(wavelength_nm) * ZN_PER_N
}

/// Expected number of camera-detected photons.
pub fn detected_photon_number(gamma: f64, chain: &DetectionChain, exposure_s: f64) -> f64 {
    gamma * chain.total() * exposure_s
}

/// Saturation parameter at which the light force reaches `target_zn`.
pub fn saturation_for_force(target_zn: f64, laser: &LaserConfig) -> Result<f64> {
    laser.validate()?;
    let asymptote = light_pressure_force(laser.max_scattering_rate(), laser.wavelength_nm);
    if !(target_zn.is_finite() && target_zn >= 0.0) {
        return Err(invalid(format!("target force must be ≥ 0, got {target_zn}")));
    }
    if target_zn >= asymptote {
        return Err(Error::UnreachableForce {
            target_zn,
            asymptote_zn: asymptote,
        });
    }
    let gamma = target_zn / (photon_momentum(laser.wavelength_nm) * ZN_PER_N);
    Ok(gamma * (1.0 + laser.detuning_term()) / (laser.max_scattering_rate() - gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub p_sat: f64,
    /// Detected counts per unit scattering rate (photons/s).
    pub scale: f64,
    /// ‖residuals‖ / ‖counts‖.
    pub residual_norm: f64,
}

impl SaturationFit {
    pub fn predict(&self, power: f64, laser: &LaserConfig) -> f64 {
        self.scale * scattering_rate(&laser.with_saturation(power / self.p_sat))
    }
}

struct SaturationProblem<'a> {
    samples: &'a [(f64, f64)],
    rmax: f64,
    d1: f64,
}

impl Problem for SaturationProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn n_residuals(&self) -> usize {
        self.samples.len()
    }

    fn evaluate(&self, p: &[f64], r: &mut DVector<f64>, j: Option<&mut DMatrix<f64>>) {
        let (p_sat, scale) = (p[0], p[1]);
        let mut jac = j;
        for (k, &(power, counts)) in self.samples.iter().enumerate() {
            // counts = scale·rmax·P/(P + p_sat·(1 + D))
            let den = power + p_sat * self.d1;
            let frac = power / den;
            r[k] = counts - scale * self.rmax * frac;
            if let Some(j) = jac.as_deref_mut() {
                j[(k, 0)] = -scale * self.rmax * power * self.d1 / (den * den);
                j[(k, 1)] = self.rmax * frac;
            }
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0
    }
}

/// Least-squares fit of detected counts against laser power to
/// `counts = scale·γ(P/p_sat)`, using the detuning and linewidth of `laser`.
pub fn fit_saturation_curve(samples: &[(f64, f64)], laser: &LaserConfig) -> Result<SaturationFit> {
    laser.validate()?;
    if samples.len() < 3 {
        return Err(Error::FitFailure(format!(
            "saturation fit needs ≥3 samples, got {}",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|(p, c)| !(p.is_finite() && c.is_finite()) || *p < 0.0)
    {
        return Err(invalid("saturation samples must be finite with non-negative power"));
    }
    let mut powers: Vec<f64> = samples.iter().map(|s| s.0).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 2 {
        return Err(Error::FitFailure("all samples share one laser power".into()));
    }

    let rmax = laser.max_scattering_rate();
    let d1 = 1.0 + laser.detuning_term();

    // Start from the linearization 1/c = (1/(scale·rmax))·(1 + p_sat·(1+D)/P).
    let lin: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(p, c)| *p > 0.0 && *c > 0.0)
        .map(|(p, c)| (1.0 / p, 1.0 / c))
        .collect();
    if lin.len() < 2 {
        return Err(Error::FitFailure(
            "too few samples with positive power and counts".into(),
        ));
    }
    let n = lin.len() as f64;
    let mx = lin.iter().map(|v| v.0).sum::<f64>() / n;
    let my = lin.iter().map(|v| v.1).sum::<f64>() / n;
    let sxx: f64 = lin.iter().map(|v| (v.0 - mx).powi(2)).sum();
    let sxy: f64 = lin.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure("degenerate power sampling".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope > 1e-9 * my / mx && intercept > 0.0) {
        return Err(Error::FitFailure(
            "counts do not saturate with power; p_sat undetermined".into(),
        ));
    }
    let start = [slope / (intercept * d1), 1.0 / (intercept * rmax)];

    let mut problem = SaturationProblem { samples, rmax, d1 };
    let out = lsq::minimize(&mut problem, &start, &LmOptions::default())?;
    let counts_norm = samples.iter().map(|s| s.1 * s.1).sum::<f64>().sqrt();
    Ok(SaturationFit {
        p_sat: out.params[0],
        scale: out.params[1],
        residual_norm: if counts_norm > 0.0 {
            out.cost.sqrt() / counts_norm
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn paper_laser() -> LaserConfig {
        LaserConfig {
            wavelength_nm: 369.5,
            detuning_hz: Frequency::from_mhz(-14.0),
            linewidth_hz: Frequency::from_mhz(19.6),
            saturation: 1.0,
        }
    }

    fn paper_chain() -> DetectionChain {
        DetectionChain {
            collection_efficiency: 0.042,
            optics_transmission: 0.51,
            camera_qe: 0.35,
            splitter_fraction: 1.0,
        }
    }

    #[test]
    fn scattering_rate_at_unit_saturation() {
        let l = paper_laser();
        assert!((l.detuning_term() - 2.0408).abs() < 1e-4);
        let g = scattering_rate(&l);
        assert!((g - 1.524e7).abs() / 1.524e7 < 1e-3, "{g}");
        assert_eq!(scattering_rate(&l.with_saturation(0.0)), 0.0);
        let big = scattering_rate(&l.with_saturation(1e12));
        assert!((big - 6.158e7).abs() / 6.158e7 < 1e-3);
        assert!(big < l.max_scattering_rate());
    }

    #[test]
    fn light_force_examples() {
        assert!((photon_momentum(369.5) - 1.793e-27).abs() < 1e-30);
        let l = paper_laser();
        let f = light_pressure_force(scattering_rate(&l), 369.5);
        assert!((f - 27.3).abs() < 0.05, "{f}");
        assert_eq!(light_pressure_force(0.0, 500.0), 0.0);
        let fmax = light_pressure_force(l.max_scattering_rate(), 369.5);
        assert!((fmax - 110.4).abs() < 0.1, "{fmax}");
        assert!(fmax > 95.0);
    }

    #[test]
    fn photon_budget() {
        let g = scattering_rate(&paper_laser());
        let n = detected_photon_number(g, &paper_chain(), 20.0);
        assert!((n - 2.29e6).abs() / 2.29e6 < 3e-3, "{n}");
        assert_eq!(detected_photon_number(g, &paper_chain(), 0.0), 0.0);
        let half = detected_photon_number(g, &paper_chain().with_splitter(0.5), 20.0);
        assert_relative_eq!(half, n / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn saturation_inversion_examples() {
        let l = paper_laser();
        let s95 = saturation_for_force(95.0, &l).unwrap();
        assert!((s95 - 18.7).abs() < 0.05, "{s95}");
        assert_eq!(saturation_for_force(0.0, &l).unwrap(), 0.0);
        let s = saturation_for_force(27.3, &l).unwrap();
        assert!((s - 1.0).abs() < 0.01, "{s}");
        assert!(matches!(
            saturation_for_force(111.0, &l),
            Err(Error::UnreachableForce { .. })
        ));
    }

    fn synthetic(p_sat: f64, scale: f64, powers: &[f64]) -> Vec<(f64, f64)> {
        let l = paper_laser();
        powers
            .iter()
            .map(|&p| (p, scale * scattering_rate(&l.with_saturation(p / p_sat))))
            .collect()
    }

    fn log_powers() -> Vec<f64> {
        (0..20).map(|i| 0.1 * 1000f64.powf(i as f64 / 19.0)).collect()
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let samples = synthetic(1.0, 1e6, &log_powers());
        let fit = fit_saturation_curve(&samples, &paper_laser()).unwrap();
        assert_relative_eq!(fit.p_sat, 1.0, max_relative = 1e-6);
        assert_relative_eq!(fit.scale, 1e6, max_relative = 1e-6);
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn noisy_fits_recover_p_sat() {
        let clean = synthetic(1.0, 1e6, &log_powers());
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<(f64, f64)> = clean
                .iter()
                .map(|&(p, c)| (p, c * (1.0 + noise.sample(&mut rng))))
                .collect();
            let fit = fit_saturation_curve(&noisy, &paper_laser()).unwrap();
            assert!((fit.p_sat - 1.0).abs() < 0.05, "seed {seed}: {}", fit.p_sat);
        }
    }

    #[test]
    fn degenerate_samples_fail() {
        let l = paper_laser();
        assert!(matches!(
            fit_saturation_curve(&[(1.0, 5.0), (1.0, 6.0), (1.0, 7.0)], &l),
            Err(Error::FitFailure(_))
        ));
        assert!(matches!(
            fit_saturation_curve(&[(1.0, 5.0), (1.0, 5.0), (2.0, 5.0)], &l),
            Err(Error::FitFailure(_))
        ));
        assert!(fit_saturation_curve(&[(1.0, 5.0), (2.0, 6.0)], &l).is_err());
    }

    proptest! {
        #[test]
        fn rate_monotone_and_bounded(s1 in 0.0f64..1e3, ds in 1e-6f64..1e3) {
            let l = paper_laser();
            let a = scattering_rate(&l.with_saturation(s1));
            let b = scattering_rate(&l.with_saturation(s1 + ds));
            prop_assert!(b > a);
            prop_assert!(b < l.max_scattering_rate());
        }

        #[test]
        fn rate_peaks_on_resonance_and_is_symmetric(d_mhz in 0.1f64..100.0, s in 0.01f64..100.0) {
            let l = paper_laser().with_saturation(s);
            let plus = LaserConfig { detuning_hz: Frequency::from_mhz(d_mhz), ..l };
            let minus = LaserConfig { detuning_hz: Frequency::from_mhz(-d_mhz), ..l };
            let zero = LaserConfig { detuning_hz: Frequency::from_hz(0.0), ..l };
            prop_assert_eq!(scattering_rate(&plus), scattering_rate(&minus));
            prop_assert!(scattering_rate(&zero) > scattering_rate(&plus));
        }

        #[test]
        fn force_inversion_round_trip(s in 1e-6f64..=100.0) {
            let l = paper_laser().with_saturation(s);
            let f = light_pressure_force(scattering_rate(&l), l.wavelength_nm);
            let back = saturation_for_force(f, &l).unwrap();
            prop_assert!(((back - s) / s).abs() < 1e-9);
        }

        #[test]
        fn photon_number_linear_in_factors(a in 0.0f64..1.0, t in 0.0f64..100.0) {
            let g = 1.5e7;
            let base = detected_photon_number(g, &paper_chain(), 1.0);
            let mut c = paper_chain();
            c.camera_qe *= a;
            let scaled = detected_photon_number(g, &c, t);
            prop_assert!((scaled - base * a * t).abs() <= 1e-9 * base.max(1.0) * (1.0 + t));
        }
    }
}

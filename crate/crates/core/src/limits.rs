//! Photon shot-noise limits on localization and force sensitivity, and a
//! Monte-Carlo oracle that checks them against the production estimator.

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_frame, FitOptions};
use crate::force::SensitivityReport;
use crate::optics::{width_to_z, DefocusCalibration};
use crate::sim::{render_frame, CameraConfig, Scene};
use crate::stats;
use crate::trap::SpringConstants;
use crate::units::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_photons(n: f64) -> Result<()> {
    if !(n.is_finite() && n > 0.0) {
        return Err(invalid(format!("photon number must be > 0, got {n}")));
    }
    Ok(())
}

fn check_optics(lambda_nm: f64, na: f64) -> Result<()> {
    if !(lambda_nm > 0.0 && na > 0.0 && na < 1.0) {
        return Err(invalid("need wavelength > 0 and 0 < NA < 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidLimit {
    /// w0/√N with w0 = λ/(πNA).
    pub waist_convention_nm: f64,
    /// (w0/2)/√N, the Cramér–Rao bound for a Gaussian of σ = w0/2.
    pub crb_nm: f64,
}

pub fn centroid_limit(lambda_nm: f64, na: f64, n_photons: f64) -> Result<CentroidLimit> {
    check_optics(lambda_nm, na)?;
    check_photons(n_photons)?;
    let w0 = lambda_nm / (PI * na);
    let paper = w0 / n_photons.sqrt();
    Ok(CentroidLimit {
        waist_convention_nm: paper,
        crb_nm: paper / 2.0,
    })
}

/// Δw/w = 1/√(2N).
pub fn width_rel_limit(n_photons: f64) -> Result<f64> {
    check_photons(n_photons)?;
    Ok(1.0 / (2.0 * n_photons).sqrt())
}

/// The three axial-limit expressions in circulation, side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusLimits {
    /// 2λ/(πNA²√N)
    pub intro_nm: f64,
    /// 2λ/(NA√N)
    pub methods_nm: f64,
    /// z_R/√N: width error w/√(2N) at z = z_R, slope NA/√2, averaged over
    /// two independent widths.
    pub first_principles_nm: f64,
}

impl FocusLimits {
    pub fn labeled(&self) -> [(&'static str, f64); 3] {
        [
            ("intro 2λ/(πNA²√N)", self.intro_nm),
            ("methods 2λ/(NA√N)", self.methods_nm),
            ("first-principles z_R/√N", self.first_principles_nm),
        ]
    }
}

pub fn focus_limit(lambda_nm: f64, na: f64, n_photons: f64) -> Result<FocusLimits> {
    check_optics(lambda_nm, na)?;
    check_photons(n_photons)?;
    let rn = n_photons.sqrt();
    let w0 = lambda_nm / (PI * na);
    let z_r = PI * w0 * w0 / lambda_nm;
    Ok(FocusLimits {
        intro_nm: 2.0 * lambda_nm / (PI * na * na * rn),
        methods_nm: 2.0 * lambda_nm / (na * rn),
        first_principles_nm: z_r / rn,
    })
}

/// Uncertainty normalized to one second: δ·√T.
pub fn attack_rate(limit_nm: f64, integration_time_s: f64) -> f64 {
    limit_nm * integration_time_s.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisLimit {
    pub axis: Axis,
    pub attack_rate_nm_per_rthz: f64,
    pub limit_zn_per_rthz: f64,
    pub bracket_zn_per_rthz: Option<(f64, f64)>,
    /// Measured central sensitivity over the limit's central value.
    pub ratio_to_measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub n_photons: f64,
    pub integration_time_s: f64,
    pub delta_x: CentroidLimit,
    pub delta_w_rel: f64,
    pub delta_z: FocusLimits,
    pub axes: [AxisLimit; 3],
}

/// Sensitivity limits S = k·(attack rate) per axis. `attack_rates` are in
/// nm/√Hz, ordered x, y, z. Ratios use bracket midpoints where bracketed.
pub fn limit_sensitivities(
    springs: &SpringConstants,
    attack_rates: [f64; 3],
    measured: Option<&SensitivityReport>,
) -> Result<[AxisLimit; 3]> {
    if attack_rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(invalid("attack rates must be > 0"));
    }
    Ok(Axis::ALL.map(|axis| {
        let r = attack_rates[axis.index()];
        let bracket = springs.bracket(axis).map(|(lo, hi)| (lo * r, hi * r));
        let value = springs.get(axis) * r;
        let central = bracket.map_or(value, |(a, b)| 0.5 * (a + b));
        AxisLimit {
            axis,
            attack_rate_nm_per_rthz: r,
            limit_zn_per_rthz: value,
            bracket_zn_per_rthz: bracket,
            ratio_to_measured: measured.map(|m| m.axes[axis.index()].central() / central),
        }
    }))
}

/// Full limit report at `n_photons` per `integration_time_s`: transverse axes
/// use the waist-convention centroid limit, z (the focus axis) uses `z_variant`.
pub fn limit_report(
    lambda_nm: f64,
    na: f64,
    n_photons: f64,
    integration_time_s: f64,
    springs: &SpringConstants,
    z_variant: fn(&FocusLimits) -> f64,
    measured: Option<&SensitivityReport>,
) -> Result<LimitReport> {
    if !(integration_time_s > 0.0) {
        return Err(invalid("integration time must be > 0"));
    }
    let dx = centroid_limit(lambda_nm, na, n_photons)?;
    let dz = focus_limit(lambda_nm, na, n_photons)?;
    let mut rates = [attack_rate(dx.waist_convention_nm, integration_time_s); 3];
    rates[Axis::Z.index()] = attack_rate(z_variant(&dz), integration_time_s);
    Ok(LimitReport {
        n_photons,
        integration_time_s,
        delta_x: dx,
        delta_w_rel: width_rel_limit(n_photons)?,
        delta_z: dz,
        axes: limit_sensitivities(springs, rates, measured)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub bootstrap_error: f64,
}

impl Estimate {
    fn of_std(values: &[f64], seed: u64) -> Self {
        // Bootstrap of the standard deviation via resampled variances.
        let value = stats::std_dev(values);
        let n = values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps: Vec<f64> = (0..200)
            .map(|_| {
                let sample: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
                stats::std_dev(&sample)
            })
            .collect();
        Self {
            value,
            bootstrap_error: stats::std_dev(&reps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub trials: usize,
    pub failed: usize,
    pub n_photons: f64,
    /// Ensemble std of fitted centroids, nm, per image axis.
    pub std_centroid_nm: [Estimate; 2],
    /// Ensemble relative std of fitted σ, per image axis.
    pub std_width_rel: [Estimate; 2],
    /// Ensemble std of z from the mean fitted width, when a calibration is given.
    pub std_z_nm: Option<Estimate>,
    /// Mean per-frame z error reported by the width-to-z inversion.
    pub mean_reported_z_error_nm: Option<f64>,
}

/// Per-trial centroid (nm), σ (nm) and optional (z, z error) in nm.
type Trial = ([f64; 2], [f64; 2], Option<(f64, f64)>);

/// Renders `trials` shot-noise frames of `scene`, fits each with the
/// production estimator and returns ensemble scatters. Trial `i` uses frame
/// stream `i` of `seed`, so results do not depend on thread count.
pub fn monte_carlo_localization(
    scene: &Scene,
    camera: &CameraConfig,
    trials: usize,
    seed: u64,
    options: &FitOptions,
    calibration: Option<&DefocusCalibration>,
) -> Result<OracleResult> {
    if trials < 100 {
        return Err(invalid(format!("oracle needs ≥ 100 trials, got {trials}")));
    }
    let results: Vec<Option<Trial>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let frame = render_frame(scene, camera, seed, i).ok()?;
            let fit = fit_frame(&frame, options).ok().filter(|f| f.converged)?;
            let z = match calibration {
                Some(c) => {
                    let e = width_to_z(fit.mean_waist_nm(), fit.mean_waist_error_nm(), c).ok()?;
                    Some((e.z, e.z_error))
                }
                None => None,
            };
            Some((fit.centroid_nm, fit.sigma_nm, z))
        })
        .collect();
    let ok: Vec<_> = results.iter().flatten().collect();
    let failed = trials - ok.len();
    if failed * 100 > trials {
        return Err(Error::OracleUnreliable { failed, trials });
    }
    let col = |f: &dyn Fn(&Trial) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    let cx = col(&|r| r.0[0]);
    let cy = col(&|r| r.0[1]);
    let rel = |v: Vec<f64>| {
        let m = stats::mean(&v);
        v.into_iter().map(|x| x / m).collect::<Vec<_>>()
    };
    let wx = rel(col(&|r| r.1[0]));
    let wy = rel(col(&|r| r.1[1]));
    let (std_z_nm, mean_reported_z_error_nm) = if calibration.is_some() {
        let z = col(&|r| r.2.map_or(f64::NAN, |z| z.0));
        let ze = col(&|r| r.2.map_or(f64::NAN, |z| z.1));
        (Some(Estimate::of_std(&z, seed ^ 3)), Some(stats::mean(&ze)))
    } else {
        (None, None)
    };
    Ok(OracleResult {
        trials,
        failed,
        n_photons: scene.expected_photons,
        std_centroid_nm: [Estimate::of_std(&cx, seed), Estimate::of_std(&cy, seed ^ 1)],
        std_width_rel: [Estimate::of_std(&wx, seed ^ 2), Estimate::of_std(&wy, seed ^ 4)],
        std_z_nm,
        mean_reported_z_error_nm,
    })
}

/// Independent centroid check that never touches pixels: each trial draws a
/// Poisson number of photon positions from N(0, σ²) and takes their mean,
/// the maximum-likelihood centroid. Returns the std over trials.
pub fn unbinned_centroid_oracle(sigma_nm: f64, n_photons: f64, trials: usize, seed: u64) -> Result<Estimate> {
    check_photons(n_photons)?;
    if !(sigma_nm > 0.0) || trials < 100 {
        return Err(invalid("need σ > 0 and ≥ 100 trials"));
    }
    let poisson = Poisson::new(n_photons).map_err(|e| invalid(e.to_string()))?;
    let means: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let n = poisson.sample(&mut rng) as usize;
            if n == 0 {
                return None;
            }
            let mut s = stats::CompensatedSum::default();
            for _ in 0..n {
                s.add(sigma_nm * rng.sample::<f64, _>(StandardNormal));
            }
            Some(s.value() / n as f64)
        })
        .collect();
    Ok(Estimate::of_std(&means, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::test_support::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn paper_centroid_limit() {
        let l = centroid_limit(369.5, 0.64, 2.4e6).unwrap();
        assert!((l.waist_convention_nm - 0.119).abs() < 5e-4);
        assert_relative_eq!(l.crb_nm * 2.0, l.waist_convention_nm);
        let r = attack_rate(l.waist_convention_nm, 20.0);
        assert!((r - 0.53).abs() / 0.53 < 0.01, "{r}");
        let q = centroid_limit(369.5, 0.64, 9.6e6).unwrap();
        assert_relative_eq!(q.waist_convention_nm * 2.0, l.waist_convention_nm, max_relative = 1e-12);
        assert!(centroid_limit(369.5, 0.64, 0.0).is_err());
    }

    #[test]
    fn width_limit() {
        assert!((1.0 / width_rel_limit(2.4e6).unwrap() - 2191.0).abs() < 0.5);
        assert_relative_eq!(width_rel_limit(0.5).unwrap(), 1.0);
    }

    #[test]
    fn focus_variants() {
        let f = focus_limit(369.5, 0.64, 2.4e6).unwrap();
        assert!((f.intro_nm - 0.37).abs() < 0.005);
        assert!((f.methods_nm - 0.745).abs() < 0.001);
        assert!((f.first_principles_nm - 0.185).abs() < 0.001);
        for (_, v) in f.labeled() {
            assert!((v - 1.16).abs() > 0.1);
        }
        let g = focus_limit(369.5, 0.64, 9.6e6).unwrap();
        assert_relative_eq!(g.intro_nm * 2.0, f.intro_nm, max_relative = 1e-12);
        assert_relative_eq!(g.methods_nm * 2.0, f.methods_nm, max_relative = 1e-12);
        assert_relative_eq!(g.first_principles_nm * 2.0, f.first_principles_nm, max_relative = 1e-12);
    }

    #[test]
    fn paper_limit_sensitivities_and_ratios() {
        let sp = SpringConstants::from_values([29.22, 7.29, 7.83], true).unwrap();
        let r = attack_rate(centroid_limit(369.5, 0.64, 2.4e6).unwrap().waist_convention_nm, 20.0);
        let measured = SensitivityReport {
            integration_time_s: 20.0,
            axes: [
                crate::force::AxisSensitivity {
                    axis: Axis::X,
                    value_zn_per_rthz: 372.0,
                    bracket_zn_per_rthz: None,
                },
                crate::force::AxisSensitivity {
                    axis: Axis::Y,
                    value_zn_per_rthz: 335.0,
                    bracket_zn_per_rthz: Some((335.0, 359.0)),
                },
                crate::force::AxisSensitivity {
                    axis: Axis::Z,
                    value_zn_per_rthz: 779.0,
                    bracket_zn_per_rthz: Some((779.0, 836.0)),
                },
            ],
        };
        let l = limit_sensitivities(&sp, [r; 3], Some(&measured)).unwrap();
        assert!((l[0].limit_zn_per_rthz - 15.50).abs() / 15.5 < 0.01);
        let (lo, hi) = l[1].bracket_zn_per_rthz.unwrap();
        assert!((lo - 3.866).abs() / 3.866 < 0.01 && (hi - 4.154).abs() / 4.154 < 0.01);
        assert!((l[0].ratio_to_measured.unwrap() - 24.0).abs() / 24.0 < 0.05);
        assert!((l[1].ratio_to_measured.unwrap() - 87.0).abs() / 87.0 < 0.05);
    }

    #[test]
    fn unbinned_oracle_matches_sigma_over_root_n() {
        let e = unbinned_centroid_oracle(91.9, 1e4, 1000, 5).unwrap();
        assert!((e.value / 0.919 - 1.0).abs() < 0.1, "{e:?}");
    }

    #[test]
    fn oracle_rejects_small_ensembles() {
        assert!(monte_carlo_localization(&ideal_scene(1e4), &camera(), 10, 0, &FitOptions::default(), None).is_err());
    }

    #[test]
    fn oracle_flags_unreliable_fits() {
        let scene = ideal_scene(0.0);
        let r = monte_carlo_localization(&scene, &camera(), 100, 0, &FitOptions::default(), None);
        assert!(matches!(r, Err(Error::OracleUnreliable { .. })));
    }

    #[test]
    fn oracle_scaling_is_n_independent() {
        let mut normalized = Vec::new();
        for n in [1e3, 1e4, 1e5] {
            let r = monte_carlo_localization(&ideal_scene(n), &camera(), 400, 9, &FitOptions::default(), None).unwrap();
            normalized.push(r.std_centroid_nm[0].value * n.sqrt());
        }
        let m = stats::mean(&normalized);
        for v in normalized {
            assert!((v / m - 1.0).abs() < 0.1, "{v} vs {m}");
        }
    }

    proptest! {
        #[test]
        fn fixed_ratios(l in 200.0f64..900.0, na in 0.05f64..0.95, n in 1.0f64..1e9) {
            let c = centroid_limit(l, na, n).unwrap();
            prop_assert!((c.waist_convention_nm - 2.0 * c.crb_nm).abs() <= 1e-15 * c.waist_convention_nm);
            let f = focus_limit(l, na, n).unwrap();
            prop_assert!((f.methods_nm / f.intro_nm / (PI * na) - 1.0).abs() < 1e-12);
        }
    }
}

//! Named reproduction cases: published numbers recomputed from the profile's
//! inputs, each row showing computed value, published value and deviation.

use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::fit::{magnification_from_two_ions, magnification_uncertainty};
use crate::force::{error_budget, force_from_displacement, sensitivity, AxisSensitivity, SensitivityReport};
use crate::light::{detected_photon_number, light_pressure_force, saturation_for_force, scattering_rate};
use crate::limits::{attack_rate, centroid_limit, focus_limit, limit_sensitivities, width_rel_limit};
use crate::optics::beam_geometry;
use crate::trap::{infer_spring_constant, two_ion_separation, SpringConstants};
use crate::units::{Axis, Frequency};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const CASES: [&str; 8] = [
    "spring-constants",
    "two-ion-magnification",
    "beam-geometry",
    "photon-budget",
    "error-budget",
    "sensitivities",
    "quantum-limits",
    "light-force",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub quantity: String,
    pub unit: String,
    pub computed: f64,
    pub published: Option<f64>,
    /// (computed − published)/published, percent.
    pub deviation_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub case: String,
    pub rows: Vec<Row>,
}

impl Reproduction {
    fn new(case: &str) -> Self {
        Self {
            case: case.to_string(),
            rows: Vec::new(),
        }
    }

    fn add(&mut self, quantity: &str, unit: &str, computed: f64, published: Option<f64>, note: &str) {
        self.rows.push(Row {
            quantity: quantity.to_string(),
            unit: unit.to_string(),
            computed,
            published,
            deviation_pct: published.map(|p| (computed - p) / p * 100.0),
            note: note.to_string(),
        });
    }

    pub fn row(&self, quantity: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "case: {}", self.case);
        let _ = writeln!(
            s,
            "{:<34} {:<12} {:>14} {:>14} {:>14}  note",
            "quantity", "unit", "computed", "published", "deviation[%]"
        );
        for r in &self.rows {
            let published = r.published.map_or_else(|| "-".to_string(), |p| format!("{p:.6}"));
            let dev = r.deviation_pct.map_or_else(|| "-".to_string(), |d| format!("{d:+.3}"));
            let _ = writeln!(
                s,
                "{:<34} {:<12} {:>14.6} {:>14} {:>14}  {}",
                r.quantity, r.unit, r.computed, published, dev, r.note
            );
        }
        s
    }
}

fn measured_sensitivities(cfg: &RunConfig) -> Result<SensitivityReport> {
    let r = cfg.reference()?;
    let t = cfg.schedule.integration_time_s;
    let axis = |axis, value, bracket| AxisSensitivity {
        axis,
        value_zn_per_rthz: value,
        bracket_zn_per_rthz: bracket,
    };
    let [ylo, yhi] = r.sensitivity_y_zn_per_rthz;
    let [zlo, zhi] = r.sensitivity_z_zn_per_rthz;
    Ok(SensitivityReport {
        integration_time_s: t,
        axes: [
            axis(Axis::X, r.sensitivity_x_zn_per_rthz, None),
            axis(Axis::Y, ylo, Some((ylo, yhi))),
            axis(Axis::Z, zlo, Some((zlo, zhi))),
        ],
    })
}

fn quoted_springs(cfg: &RunConfig) -> Result<SpringConstants> {
    SpringConstants::from_values(cfg.reference()?.spring_constants_zn_per_nm, cfg.trap.axis_ambiguous)
}

/// Runs one named case with the inputs and reference values of `cfg`.
pub fn reproduce(case: &str, cfg: &RunConfig) -> Result<Reproduction> {
    let r = cfg.reference()?;
    let mut out = Reproduction::new(case);
    let t = cfg.schedule.integration_time_s;
    match case {
        "spring-constants" => {
            let k = cfg.springs()?;
            for a in Axis::ALL {
                let nu = cfg.trap.secular_freqs_hz[a.index()];
                out.add(
                    &format!("k_{} ({:.0} kHz)", a.name(), nu.khz()),
                    "zN/nm",
                    k.get(a),
                    Some(r.spring_constants_zn_per_nm[a.index()]),
                    "",
                );
            }
        }
        "two-ion-magnification" => {
            let nu = Frequency::from_hz(r.two_ion_frequency_hz);
            let l = two_ion_separation(&cfg.species, nu)?;
            out.add("ion separation l", "um", l, Some(r.two_ion_separation_um), "");
            out.add(
                "M = image separation / l",
                "-",
                r.two_ion_image_separation_um / l,
                Some(r.magnification),
                "",
            );
            let px = r.two_ion_image_separation_px;
            let m = magnification_from_two_ions(px, cfg.camera.pixel_pitch_um, nu, &cfg.species)?;
            out.add("M from pixels x pitch", "-", m, Some(r.magnification), "");
            let dm = magnification_uncertainty(
                m,
                px,
                r.two_ion_image_separation_error_px,
                nu,
                Frequency::from_hz(r.two_ion_frequency_error_hz),
            );
            out.add("dM (first-order propagation)", "-", dm, Some(r.magnification_error), "");
        }
        "beam-geometry" => {
            let g = beam_geometry(&cfg.optics);
            out.add("waist w0", "nm", g.waist_radius_w0, Some(r.waist_nm), "");
            out.add("FWHM", "nm", g.fwhm, Some(r.fwhm_nm), "");
            out.add(
                "Rayleigh range z_R",
                "nm",
                g.rayleigh_range,
                Some(r.rayleigh_range_nm),
                "",
            );
            let px = cfg.camera.object_pixel_nm(cfg.optics.magnification);
            out.add("object pixel", "nm", px, None, "");
        }
        "photon-budget" => {
            let gamma = scattering_rate(&cfg.laser);
            out.add("scattering rate", "1/s", gamma, None, "");
            let chain = cfg.detection.with_splitter(1.0);
            out.add("total efficiency", "-", chain.total(), None, "without splitter");
            let n = detected_photon_number(gamma, &chain, cfg.camera.exposure_s);
            out.add(
                "detected photons N",
                "photons",
                n,
                Some(r.detected_photons),
                "efficiency product",
            );
            out.add(
                "photons on camera",
                "photons",
                cfg.photons_per_frame(),
                None,
                "with configured splitter",
            );
        }
        "error-budget" => {
            let b = error_budget(r.sigma_fit_nm, r.sigma_drift_fit_nm, r.sigma_drift_interpolation_nm)?;
            for a in Axis::ALL {
                let i = a.index();
                out.add(
                    &format!("sigma_ion {}", a.name()),
                    "nm",
                    b.sigma_ion_nm[i],
                    Some(r.sigma_ion_nm[i]),
                    "",
                );
            }
        }
        "sensitivities" => {
            let b = error_budget(r.sigma_fit_nm, r.sigma_drift_fit_nm, r.sigma_drift_interpolation_nm)?;
            let quoted = sensitivity(&b, &quoted_springs(cfg)?, t)?;
            let derived = sensitivity(&b, &cfg.springs()?, t)?;
            let [ylo, yhi] = r.sensitivity_y_zn_per_rthz;
            let [zlo, zhi] = r.sensitivity_z_zn_per_rthz;
            let published = [
                [Some(r.sensitivity_x_zn_per_rthz), None],
                [Some(ylo), Some(yhi)],
                [Some(zlo), Some(zhi)],
            ];
            for (label, rep) in [("quoted k", &quoted), ("frequency-derived k", &derived)] {
                let suffix = if label == "quoted k" { "" } else { ", derived k" };
                for a in &rep.axes {
                    let p = published[a.axis.index()];
                    let name = a.axis.name();
                    match a.bracket_zn_per_rthz {
                        Some((lo, hi)) => {
                            out.add(&format!("S_{name} lower{suffix}"), "zN/rtHz", lo, p[0], label);
                            out.add(&format!("S_{name} upper{suffix}"), "zN/rtHz", hi, p[1], label);
                        }
                        None => out.add(
                            &format!("S_{name}{suffix}"),
                            "zN/rtHz",
                            a.value_zn_per_rthz,
                            p[0],
                            label,
                        ),
                    }
                }
            }
        }
        "quantum-limits" => {
            let (lambda, na) = (cfg.optics.wavelength_nm, cfg.optics.numerical_aperture);
            let n = r.detected_photons;
            let dx = centroid_limit(lambda, na, n)?;
            out.add(
                "delta_x = w0/sqrt(N)",
                "nm",
                dx.waist_convention_nm,
                Some(r.centroid_limit_nm),
                "published N",
            );
            out.add("delta_x CRB = (w0/2)/sqrt(N)", "nm", dx.crb_nm, None, "");
            let rate = attack_rate(dx.waist_convention_nm, t);
            out.add("attack rate", "nm/rtHz", rate, Some(r.attack_rate_nm_per_rthz), "");
            let n_calc = detected_photon_number(scattering_rate(&cfg.laser), &cfg.detection.with_splitter(1.0), t);
            out.add(
                "delta_x at computed N",
                "nm",
                centroid_limit(lambda, na, n_calc)?.waist_convention_nm,
                Some(r.centroid_limit_nm),
                "computed N",
            );
            out.add("w/dw", "-", 1.0 / width_rel_limit(n)?, None, "1/sqrt(2N)");
            let n1 = n / t;
            out.add(
                "w/dw in 1 s, 1/sqrt(2N)",
                "-",
                1.0 / width_rel_limit(n1)?,
                Some(r.width_limit_inverse_1s),
                "published value matches sqrt(N) instead",
            );
            out.add(
                "w/dw in 1 s, 1/sqrt(N)",
                "-",
                n1.sqrt(),
                Some(r.width_limit_inverse_1s),
                "",
            );
            let dz = focus_limit(lambda, na, n)?;
            for (label, v) in dz.labeled() {
                out.add(
                    &format!("delta_z {label}"),
                    "nm",
                    v,
                    Some(r.quoted_focus_limit_nm),
                    "none matches",
                );
            }
            let geom = beam_geometry(&cfg.optics);
            out.add(
                "z_R*sqrt(2)/sqrt(N per 1 s)",
                "nm",
                geom.rayleigh_range * 2f64.sqrt() / n1.sqrt(),
                Some(r.quoted_focus_limit_nm),
                "closest match",
            );
            let sp = quoted_springs(cfg)?;
            let measured = measured_sensitivities(cfg)?;
            let lim = limit_sensitivities(&sp, [rate; 3], Some(&measured))?;
            out.add(
                "S_limit strong",
                "zN/rtHz",
                lim[sp.strong_axis.index()].limit_zn_per_rthz,
                Some(r.limit_sensitivity_strong_zn_per_rthz),
                "",
            );
            let (lo, hi) = sp.k_weak_bracket;
            let [plo, phi] = r.limit_sensitivity_weak_zn_per_rthz;
            out.add("S_limit weak lower", "zN/rtHz", lo * rate, Some(plo), "");
            out.add("S_limit weak upper", "zN/rtHz", hi * rate, Some(phi), "");
            let ratio = |a: Axis| lim[a.index()].ratio_to_measured.unwrap_or(f64::NAN);
            out.add(
                "ratio to limit, strong (x)",
                "-",
                ratio(Axis::X),
                Some(r.ratio_strong),
                "",
            );
            out.add(
                "ratio to limit, weak (y)",
                "-",
                ratio(Axis::Y),
                Some(r.ratio_weak),
                "bracket midpoints",
            );
        }
        "light-force" => {
            let gamma = scattering_rate(&cfg.laser.with_saturation(1.0));
            out.add("scattering rate at s=1", "1/s", gamma, None, "");
            out.add(
                "force at s=1",
                "zN",
                light_pressure_force(gamma, cfg.laser.wavelength_nm),
                None,
                "",
            );
            let max = light_pressure_force(cfg.laser.max_scattering_rate(), cfg.laser.wavelength_nm);
            out.add("asymptotic force", "zN", max, None, "");
            let s = saturation_for_force(r.max_light_force_zn, &cfg.laser)?;
            out.add("saturation for max force", "-", s, None, "");
            let nu = Frequency::from_hz(r.drifted_frequency_hz);
            let k = cfg.species.mass_kg() * nu.angular().powi(2) * crate::units::ZN_PER_NM_PER_N_PER_M;
            let dx = r.max_light_force_zn / k;
            out.add("k at drifted frequency", "zN/nm", k, None, "");
            out.add("displacement at max force", "nm", dx, None, "");
            let (_, nu_back) = infer_spring_constant(r.max_light_force_zn, dx, &cfg.species)?;
            out.add("inferred frequency", "kHz", nu_back.khz(), Some(nu.khz()), "");
            let f = force_from_displacement(r.weak_axis_displacement_nm, 0.0, &quoted_springs(cfg)?, Axis::Y)?;
            if let Some((lo, hi)) = f.systematic_bracket_zn {
                out.add("weak-axis force lower", "zN", lo, None, "");
                out.add("weak-axis force upper", "zN", hi, Some(r.max_light_force_zn), "");
            }
        }
        other => {
            return Err(invalid(format!(
                "unknown case '{other}'; valid cases: {}",
                CASES.join(", ")
            )));
        }
    }
    Ok(out)
}

use clap::{Args, Parser, Subcommand};
use ionforce::config::RunConfig;
use ionforce::fit::{fit_series_dir, FitEntry};
use ionforce::force::analyze;
use ionforce::limits::{limit_report, monte_carlo_localization, FocusLimits, LimitReport, OracleResult};
use ionforce::optics::{beam_geometry, calibrate_defocus, DefocusCalibration};
use ionforce::reproduce::{reproduce, CASES};
use ionforce::sim::{ionf, simulate_chopped_series, EmGainModel, SpotModel};
use ionforce::Error;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Name accepted by `--config` for the bundled profile.
const BUNDLED: &str = "paper_defaults";

#[derive(Parser)]
#[command(name = "ionforce", version, about = "Single-ion imaging force sensing toolkit")]
struct Cli {
    /// Worker threads for frame generation and fitting (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration file, or `paper_defaults` for the bundled profile.
    #[arg(long, default_value = BUNDLED)]
    config: String,
}

#[derive(Subcommand)]
enum Command {
    /// Render a chopped force-on/force-off frame series.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the configured run output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit every frame of a series and compute forces and sensitivities.
    Analyze {
        /// Series directory written by `simulate`.
        series: PathBuf,
        /// Configuration; defaults to the one recorded in the series manifest.
        #[arg(long)]
        config: Option<String>,
        /// Output directory (default: <series>/analysis).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute published numbers; `--case all` runs every case.
    Reproduce {
        #[arg(long)]
        case: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shot-noise limits, optionally checked by a Monte-Carlo oracle.
    Limits {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the Monte-Carlo oracle.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Photons per oracle frame.
        #[arg(long, default_value_t = 1e4)]
        photons: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a defocus calibration to a camera-translation scan.
    Calibrate {
        /// Text file of `camera_shift_nm width_nm` pairs, one per line.
        scan: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
}

/// Usage and configuration problems exit with 1, everything else with 2.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidInput(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn data_error(message: String) -> Failure {
    Failure { code: 2, message }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(name: &str) -> CliResult<RunConfig> {
    if name == BUNDLED && !Path::new(name).exists() {
        return Ok(RunConfig::paper_defaults());
    }
    Ok(RunConfig::load(Path::new(name))?)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| data_error(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| data_error(format!("cannot create {}: {e}", dir.display())))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn cmd_simulate(config: &str, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let out = out.unwrap_or_else(|| PathBuf::from(&cfg.run.output));
    let mut series = simulate_chopped_series(&cfg.scene(), &cfg.camera, &cfg.drift, &cfg.schedule, cfg.run.seed)?;
    series.manifest.run_config = Some(cfg.clone());
    ionf::save_series(&out, &series)?;
    let truncated = series.frames.iter().filter(|f| f.meta.provenance.truncated).count();
    println!(
        "wrote {} frames ({}x{} px, {:.4} nm/px, {:.4e} photons/frame, seed {}) to {}",
        series.frames.len(),
        cfg.camera.roi[0],
        cfg.camera.roi[1],
        cfg.camera.object_pixel_nm(cfg.optics.magnification),
        cfg.photons_per_frame(),
        cfg.run.seed,
        out.display()
    );
    if truncated > 0 {
        eprintln!("warning: {truncated} frames lose more than 1% of the spot flux outside the ROI");
    }
    Ok(())
}

fn fits_jsonl(entries: &[FitEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("fit records serialize"));
        s.push('\n');
    }
    s
}

fn cmd_analyze(series: &Path, config: Option<String>, out: Option<PathBuf>) -> CliResult<()> {
    let manifest = ionf::load_manifest(series).map_err(|e| data_error(format!("{}: {e}", series.display())))?;
    let cfg = match config {
        Some(name) => load_config(&name)?,
        None => manifest.run_config.clone().ok_or_else(|| Failure {
            code: 1,
            message: "series manifest records no configuration; pass --config".into(),
        })?,
    };
    let (_, entries) = fit_series_dir(series, &cfg.analysis.fit)?;
    let report = analyze(
        &entries,
        &cfg.defocus_calibration(),
        &cfg.springs()?,
        manifest.integration_time_s,
        &cfg.analysis.force,
    )?;
    let out = out.unwrap_or_else(|| series.join("analysis"));
    create_dir(&out)?;
    write_file(&out.join("fits.jsonl"), &fits_jsonl(&entries))?;
    write_file(&out.join("force_report.json"), &json(&report))?;
    let text = report.to_text();
    write_file(&out.join("force_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_reproduce(case: &str, config: &str, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = load_config(config)?;
    let cases: Vec<&str> = if case == "all" { CASES.to_vec() } else { vec![case] };
    let mut tables = Vec::new();
    for c in cases {
        tables.push(reproduce(c, &cfg)?);
    }
    let out = out.unwrap_or_else(|| PathBuf::from(&cfg.run.output));
    create_dir(&out)?;
    for t in &tables {
        let text = t.to_text();
        print!("{text}");
        println!();
        write_file(&out.join(format!("reproduce_{}.txt", t.case)), &text)?;
        write_file(&out.join(format!("reproduce_{}.json", t.case)), &json(t))?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct OracleSummary {
    result: OracleResult,
    predicted_centroid_nm: f64,
    predicted_width_rel: f64,
    predicted_z_nm: f64,
}

#[derive(serde::Serialize)]
struct LimitsOutput {
    limits: LimitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleSummary>,
}

fn run_oracle(cfg: &RunConfig, trials: usize, photons: f64, seed: u64) -> CliResult<OracleSummary> {
    let mut optics = cfg.optics;
    optics.defocus_offset_nm = 0.0;
    let geom = beam_geometry(&optics);
    let mut scene = cfg.scene();
    scene.optics = optics;
    scene.spot = SpotModel::ideal(&geom);
    scene.expected_photons = photons;
    let mut camera = cfg.camera;
    camera.em_gain = EmGainModel::None;
    camera.read_noise = 0.0;
    camera.background_rate = 0.0;
    camera.shot_noise = true;
    let in_focus = monte_carlo_localization(&scene, &camera, trials, seed, &cfg.analysis.fit, None)?;
    let mut defocused = scene;
    defocused.optics.defocus_offset_nm = geom.rayleigh_range;
    let calib = DefocusCalibration {
        w0_effective: geom.waist_radius_w0,
        z_r_effective: geom.rayleigh_range,
        operating_offset: geom.rayleigh_range,
        width_uncertainty_floor: 0.0,
    };
    let z = monte_carlo_localization(
        &defocused,
        &camera,
        trials,
        seed ^ 0x5a5a,
        &cfg.analysis.fit,
        Some(&calib),
    )?;
    let mut result = in_focus;
    result.std_z_nm = z.std_z_nm;
    result.mean_reported_z_error_nm = z.mean_reported_z_error_nm;
    result.failed += z.failed;
    let rn = photons.sqrt();
    Ok(OracleSummary {
        result,
        predicted_centroid_nm: geom.waist_radius_w0 / 2.0 / rn,
        predicted_width_rel: 1.0 / (2.0 * photons).sqrt(),
        predicted_z_nm: geom.rayleigh_range / rn,
    })
}

fn limits_text(o: &LimitsOutput) -> String {
    let l = &o.limits;
    let mut s = String::new();
    let _ = writeln!(s, "photons N = {:.4e} per {} s", l.n_photons, l.integration_time_s);
    let _ = writeln!(s, "{:<36} {:>14}", "quantity", "value");
    let _ = writeln!(
        s,
        "{:<36} {:>14.5}",
        "delta_x w0/sqrt(N) [nm]", l.delta_x.waist_convention_nm
    );
    let _ = writeln!(s, "{:<36} {:>14.5}", "delta_x CRB [nm]", l.delta_x.crb_nm);
    let _ = writeln!(s, "{:<36} {:>14.4e}", "delta_w/w [-]", l.delta_w_rel);
    for (label, v) in l.delta_z.labeled() {
        let _ = writeln!(s, "{:<36} {:>14.5}", format!("delta_z {label} [nm]"), v);
    }
    let _ = writeln!(
        s,
        "\n{:<5} {:>18} {:>18} {:>24} {:>12}",
        "axis", "attack[nm/rtHz]", "S_limit[zN/rtHz]", "bracket[zN/rtHz]", "ratio[-]"
    );
    for a in &l.axes {
        let bracket = a
            .bracket_zn_per_rthz
            .map_or_else(|| "-".to_string(), |(lo, hi)| format!("({lo:.3}, {hi:.3})"));
        let ratio = a
            .ratio_to_measured
            .map_or_else(|| "-".to_string(), |r| format!("{r:.1}"));
        let _ = writeln!(
            s,
            "{:<5} {:>18.4} {:>18.3} {:>24} {:>12}",
            a.axis.name(),
            a.attack_rate_nm_per_rthz,
            a.limit_zn_per_rthz,
            bracket,
            ratio
        );
    }
    if let Some(or) = &o.oracle {
        let r = &or.result;
        let _ = writeln!(
            s,
            "\noracle: {} trials at N = {:.3e}, {} failed fits",
            r.trials, r.n_photons, r.failed
        );
        let _ = writeln!(
            s,
            "{:<28} {:>12} {:>12} {:>12}",
            "quantity", "oracle", "+-", "predicted"
        );
        for (i, axis) in ["x", "y"].iter().enumerate() {
            let e = r.std_centroid_nm[i];
            let _ = writeln!(
                s,
                "{:<28} {:>12.5} {:>12.5} {:>12.5}",
                format!("std centroid {axis} [nm]"),
                e.value,
                e.bootstrap_error,
                or.predicted_centroid_nm
            );
            let w = r.std_width_rel[i];
            let _ = writeln!(
                s,
                "{:<28} {:>12.3e} {:>12.1e} {:>12.3e}",
                format!("std width {axis} [rel]"),
                w.value,
                w.bootstrap_error,
                or.predicted_width_rel
            );
        }
        if let Some(z) = r.std_z_nm {
            let _ = writeln!(
                s,
                "{:<28} {:>12.4} {:>12.4} {:>12.4}",
                "std z at z_R [nm]", z.value, z.bootstrap_error, or.predicted_z_nm
            );
        }
    }
    s
}

fn cmd_limits(
    config: &str,
    out: Option<PathBuf>,
    oracle: bool,
    trials: usize,
    photons: f64,
    seed: Option<u64>,
) -> CliResult<()> {
    let cfg = load_config(config)?;
    let t = cfg.camera.exposure_s;
    let n = ionforce::light::detected_photon_number(
        ionforce::light::scattering_rate(&cfg.laser),
        &cfg.detection.with_splitter(1.0),
        t,
    );
    let (springs, measured) = match &cfg.reference {
        Some(r) => (
            ionforce::trap::SpringConstants::from_values(r.spring_constants_zn_per_nm, cfg.trap.axis_ambiguous)?,
            Some(ionforce::force::SensitivityReport {
                integration_time_s: t,
                axes: [
                    ionforce::force::AxisSensitivity {
                        axis: ionforce::Axis::X,
                        value_zn_per_rthz: r.sensitivity_x_zn_per_rthz,
                        bracket_zn_per_rthz: None,
                    },
                    ionforce::force::AxisSensitivity {
                        axis: ionforce::Axis::Y,
                        value_zn_per_rthz: r.sensitivity_y_zn_per_rthz[0],
                        bracket_zn_per_rthz: Some((r.sensitivity_y_zn_per_rthz[0], r.sensitivity_y_zn_per_rthz[1])),
                    },
                    ionforce::force::AxisSensitivity {
                        axis: ionforce::Axis::Z,
                        value_zn_per_rthz: r.sensitivity_z_zn_per_rthz[0],
                        bracket_zn_per_rthz: Some((r.sensitivity_z_zn_per_rthz[0], r.sensitivity_z_zn_per_rthz[1])),
                    },
                ],
            }),
        ),
        None => (cfg.springs()?, None),
    };
    let limits = limit_report(
        cfg.optics.wavelength_nm,
        cfg.optics.numerical_aperture,
        n,
        t,
        &springs,
        |f: &FocusLimits| f.first_principles_nm,
        measured.as_ref(),
    )?;
    let oracle = if oracle {
        Some(run_oracle(&cfg, trials, photons, seed.unwrap_or(cfg.run.seed))?)
    } else {
        None
    };
    let output = LimitsOutput { limits, oracle };
    let out = out.unwrap_or_else(|| PathBuf::from(&cfg.run.output));
    create_dir(&out)?;
    let text = limits_text(&output);
    write_file(&out.join("limits_report.txt"), &text)?;
    write_file(&out.join("limits_report.json"), &json(&output))?;
    print!("{text}");
    Ok(())
}

fn cmd_calibrate(scan: &Path, config: &str) -> CliResult<()> {
    let cfg = load_config(config)?;
    let text = fs::read_to_string(scan).map_err(|e| data_error(format!("cannot read {}: {e}", scan.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| data_error(format!("{}:{}: {e}", scan.display(), i + 1)))?;
        if v.len() != 2 {
            return Err(data_error(format!(
                "{}:{}: expected two columns",
                scan.display(),
                i + 1
            )));
        }
        points.push((v[0], v[1]));
    }
    let calib = calibrate_defocus(&points, cfg.optics.magnification)?;
    #[derive(serde::Serialize)]
    struct Section {
        calibration: DefocusCalibration,
    }
    let text = toml::to_string(&Section { calibration: calib }).map_err(|e| data_error(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 1,
                message: format!("--threads: {e}"),
            })?;
    }
    match cli.command {
        Command::Simulate { config, seed, out } => cmd_simulate(&config.config, seed, out),
        Command::Analyze { series, config, out } => cmd_analyze(&series, config, out),
        Command::Reproduce { case, config, out } => cmd_reproduce(&case, &config.config, out),
        Command::Limits {
            config,
            out,
            oracle,
            trials,
            photons,
            seed,
        } => cmd_limits(&config.config, out, oracle, trials, photons, seed),
        Command::Calibrate { scan, config } => cmd_calibrate(&scan, &config.config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

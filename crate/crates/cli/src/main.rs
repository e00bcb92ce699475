//! `lbaw`: command-line front end for the resonator toolkit.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lbaw_core::dispersion::{self, SweepConfig};
use lbaw_core::materials::{self, EulerAngles, MaterialDb};
use lbaw_core::mbvd::{self, AdmittanceSpectrum, FitReport, MbvdParams};
use lbaw_core::rfio::{self, TwoPortData};
use lbaw_core::Error;

const EXAMPLE_CONFIG: &str = include_str!("../configs/reference_sweep.cfg");

#[derive(Parser)]
#[command(name = "lbaw", version, about = "Lateral-field bulk acoustic resonator toolkit")]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rotate a material into the device frame and write it in material-file format.
    Rotate {
        #[arg(long)]
        material: String,
        /// Z-X-Z Euler angles in degrees.
        #[arg(long, num_args = 3, value_names = ["PHI", "THETA", "PSI"], allow_negative_numbers = true)]
        euler: Vec<f64>,
        /// Material file to use instead of the bundled constants.
        #[arg(long)]
        materials: Option<PathBuf>,
    },
    /// Sweep w_m/w_p and write dispersion CSV plus the optimum of each family.
    Disperse {
        /// Sweep config; the bundled reference-geometry config when omitted.
        config: Option<PathBuf>,
        /// Comma-separated ratios overriding the config grid.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long)]
        materials: Option<PathBuf>,
        /// Also write kt² and η charts as SVG.
        #[arg(long)]
        svg: bool,
        /// Print the bundled config and exit.
        #[arg(long)]
        print_example: bool,
    },
    /// Fit the mBVD model to a measured or synthesized spectrum.
    Fit {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Generate an mBVD spectrum.
    Synth(SynthArgs),
    /// Convert a Touchstone file to a −Y12 admittance CSV.
    Convert { input: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    S2p,
    Csv,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2.0)]
    rm: f64,
    #[arg(long, default_value_t = 80e-6)]
    lm: f64,
    #[arg(long, default_value_t = 0.7e-15)]
    cm: f64,
    #[arg(long, default_value_t = 2e-12)]
    c0: f64,
    #[arg(long, default_value_t = 1.0)]
    r0: f64,
    #[arg(long, default_value_t = 3.0)]
    rs: f64,
    /// Build Rm, Lm, Cm from fs, kt² and Qs (uses --c0, --r0, --rs).
    #[arg(long, num_args = 3, value_names = ["FS", "KT2", "QS"])]
    targets: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2001)]
    points: usize,
    /// Frequency span in Hz; 0.8·fs to 1.2·fp by default.
    #[arg(long, num_args = 2, value_names = ["F_MIN", "F_MAX"])]
    span: Option<Vec<f64>>,
    /// Multiplicative complex Gaussian noise level.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, value_enum, default_value = "s2p")]
    format: Format,
    #[arg(long, default_value_t = 50.0)]
    z0: f64,
    /// Output file name inside --out.
    #[arg(long, default_value = "synth")]
    name: String,
}

struct Failure {
    code: u8,
    msg: String,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn fail(code: u8, msg: impl Into<String>) -> Failure {
    Failure { code, msg: msg.into() }
}

/// Exit code for a library error; `data` marks errors raised while reading
/// measurement input rather than configuration.
fn classify(e: Error, data: bool) -> Failure {
    let code = match &e {
        Error::Parse { .. } if data => 3,
        Error::InsufficientData(_)
        | Error::NoResonanceFound(_)
        | Error::NonMonotoneFrequency { .. }
        | Error::SingularConversion { .. } => 3,
        Error::EigSolverFailure(_) | Error::FitDiverged(_) | Error::SingularElement(_) => 4,
        Error::Domain(_) if data => 3,
        _ => 2,
    };
    fail(code, e.to_string())
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn load_db(path: &Option<PathBuf>) -> CliResult<MaterialDb> {
    match path {
        None => Ok(materials::bundled_materials()),
        Some(p) => materials::load_material_db(&read(p)?).map_err(|e| classify(e, false)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Command::Disperse { print_example: true, .. } = cli.cmd {
        print!("{EXAMPLE_CONFIG}");
        return Ok(());
    }
    fs::create_dir_all(&cli.out).map_err(|e| fail(2, format!("{}: {e}", cli.out.display())))?;
    match &cli.cmd {
        Command::Rotate {
            material,
            euler,
            materials,
        } => cmd_rotate(cli, material, euler, materials),
        Command::Disperse {
            config,
            ratios,
            materials,
            svg,
            ..
        } => cmd_disperse(cli, config.as_deref(), ratios.clone(), materials, *svg),
        Command::Fit { input, format } => cmd_fit(cli, input, *format),
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Convert { input } => cmd_convert(cli, input),
    }
}

fn cmd_rotate(cli: &Cli, name: &str, euler: &[f64], db: &Option<PathBuf>) -> CliResult<()> {
    let db = load_db(db)?;
    let mat = db
        .get(name)
        .ok_or_else(|| fail(2, format!("unknown material `{name}`")))?;
    let angles = EulerAngles::new(euler[0], euler[1], euler[2]).map_err(|e| classify(e, false))?;
    let rotated = materials::rotate_tensors(mat, angles).map_err(|e| classify(e, false))?;
    let path = cli.out.join(format!("{name}_rotated.txt"));
    write(&path, &materials::write_material_db([&rotated]))?;
    if cli.verbose {
        eprintln!("rotated {name} by ({}, {}, {})", angles.phi, angles.theta, angles.psi);
    }
    println!("{}", path.display());
    Ok(())
}

fn cmd_disperse(
    cli: &Cli,
    config: Option<&Path>,
    ratios: Option<Vec<f64>>,
    db: &Option<PathBuf>,
    svg: bool,
) -> CliResult<()> {
    let text = match config {
        Some(p) => read(p)?,
        None => EXAMPLE_CONFIG.to_string(),
    };
    let mut cfg = SweepConfig::parse(&text).map_err(|e| classify(e, false))?;
    if let Some(r) = ratios {
        cfg.ratios = r;
        cfg.validate().map_err(|e| classify(e, false))?;
    }
    let db = load_db(db)?;
    let result = dispersion::run_sweep(&cfg, &db, cli.jobs).map_err(|e| classify(e, false))?;
    write(&cli.out.join("dispersion.csv"), &dispersion::export_csv(&result.points))?;
    for g in &result.gaps {
        if cli.verbose {
            eprintln!("gap at w_m/w_p = {}: {} ({})", g.wm_wp, g.mode, g.reason);
        }
    }
    let mut summary = String::from("family,wm_wp,kt2,fs_hz,eta,eta_peak_wm_wp,eta_peak\n");
    for fam in &cfg.families {
        let pts = result.family(fam.label);
        match dispersion::find_optimum(&pts) {
            Ok(best) => {
                let peak = dispersion::nearest_eta_peak(&pts, best.wm_wp);
                let (pr, pe) = peak.map_or((f64::NAN, f64::NAN), |p| (p.wm_wp, p.eta));
                summary += &format!(
                    "{},{},{},{},{},{},{}\n",
                    fam.label, best.wm_wp, best.kt2, best.fs, best.eta, pr, pe
                );
                println!(
                    "{:<6} optimum w_m/w_p = {:.4}  kt2 = {:.4}  fs = {:.4e} Hz  eta = {:.4}",
                    fam.label.to_string(),
                    best.wm_wp,
                    best.kt2,
                    best.fs,
                    best.eta
                );
            }
            Err(e) => eprintln!("warning: {}: {e}", fam.label),
        }
    }
    write(&cli.out.join("optimum.csv"), &summary)?;
    if svg {
        let series: Vec<_> = cfg
            .families
            .iter()
            .map(|f| {
                let pts = result.family(f.label);
                (f.label.to_string(), pts)
            })
            .collect();
        let kt2: Vec<_> = series
            .iter()
            .map(|(n, p)| (n.clone(), p.iter().map(|q| (q.wm_wp, q.kt2)).collect()))
            .collect();
        let eta: Vec<_> = series
            .iter()
            .map(|(n, p)| (n.clone(), p.iter().map(|q| (q.wm_wp, q.eta)).collect()))
            .collect();
        write(&cli.out.join("kt2.svg"), &svg::line_chart("kt²", "w_m/w_p", &kt2))?;
        write(&cli.out.join("eta.svg"), &svg::line_chart("η", "w_m/w_p", &eta))?;
    }
    Ok(())
}

fn read_spectrum(path: &Path, format: Option<Format>, verbose: bool) -> CliResult<AdmittanceSpectrum> {
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::S2p,
    });
    let text = read(path)?;
    match format {
        Format::Csv => rfio::parse_admittance_csv(&text).map_err(|e| classify(e, true)),
        Format::S2p => {
            let d = rfio::parse_touchstone(&text).map_err(|e| classify(e, true))?;
            touchstone_to_spectrum(&d, verbose)
        }
    }
}

fn touchstone_to_spectrum(d: &TwoPortData, verbose: bool) -> CliResult<AdmittanceSpectrum> {
    let y = rfio::s_to_y(d);
    for i in &y.dropped {
        eprintln!("warning: dropped point {i} at {} Hz: I + S is singular", d.frequencies[*i]);
    }
    let (spec, mismatch) = rfio::extract_y12(&y).map_err(|e| classify(e, true))?;
    if mismatch > 0.01 {
        eprintln!("warning: Y12 and Y21 differ by up to {:.2}%", 100.0 * mismatch);
    } else if verbose {
        eprintln!("reciprocity mismatch {:.2e}", mismatch);
    }
    Ok(spec)
}

fn cmd_fit(cli: &Cli, input: &Path, format: Option<Format>) -> CliResult<()> {
    let spec = read_spectrum(input, format, cli.verbose)?;
    let r = mbvd::fit(&spec, None).map_err(|e| classify(e, true))?;
    if cli.verbose {
        eprintln!("converged in {} iterations, residual {:.3e}", r.iterations, r.residual);
    }
    let report = FitReport::new(&spec, &r, Some(input.display().to_string()));
    let path = cli.out.join("fit.json");
    write(&path, &report.to_json())?;
    let m = r.metrics;
    println!(
        "fs = {:.6e} Hz  fp = {:.6e} Hz  kt2 = {:.4}  Qs = {:.1}  Qp = {:.1}  FoM = {:.1}",
        m.fs, m.fp, m.kt2_eff, m.qs, m.qp, m.fom
    );
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> CliResult<()> {
    let p = match &a.targets {
        Some(t) => MbvdParams::from_targets(t[0], t[1], t[2], a.c0, a.r0, a.rs),
        None => {
            let p = MbvdParams {
                rm: a.rm,
                lm: a.lm,
                cm: a.cm,
                c0: a.c0,
                r0: a.r0,
                rs: a.rs,
            };
            p.check().map(|_| p)
        }
    }
    .map_err(|e| classify(e, false))?;
    let m = mbvd::derive_metrics(&p);
    let (lo, hi) = match &a.span {
        Some(s) => (s[0], s[1]),
        None => (0.8 * m.fs, 1.2 * m.fp),
    };
    if !(lo > 0.0 && hi > lo) || a.points < 2 {
        return Err(fail(2, "span must satisfy 0 < F_MIN < F_MAX with at least 2 points"));
    }
    let mut spec = mbvd::synthesize(&p, &mbvd::linspace(lo, hi, a.points)).map_err(|e| classify(e, false))?;
    if a.noise > 0.0 {
        spec = mbvd::add_noise(&spec, a.noise, cli.seed);
    }
    let path = match a.format {
        Format::Csv => {
            let path = cli.out.join(format!("{}.csv", a.name));
            write(&path, &rfio::write_admittance_csv(&spec))?;
            path
        }
        Format::S2p => {
            let s = spec
                .y
                .iter()
                .enumerate()
                .map(|(i, y)| {
                    rfio::y_to_s_matrix(&rfio::series_two_port(*y), a.z0)
                        .ok_or(fail(4, format!("point {i} cannot be expressed as S-parameters")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let d = TwoPortData {
                frequencies: spec.frequencies.clone(),
                s,
                z0: a.z0,
            };
            let path = cli.out.join(format!("{}.s2p", a.name));
            write(&path, &rfio::write_touchstone(&d))?;
            path
        }
    };
    if cli.verbose {
        eprintln!(
            "fs = {:.6e} Hz  fp = {:.6e} Hz  kt2 = {:.4}  Qs = {:.1}  FoM = {:.1}",
            m.fs, m.fp, m.kt2_eff, m.qs, m.fom
        );
    }
    println!("{}", path.display());
    Ok(())
}

fn cmd_convert(cli: &Cli, input: &Path) -> CliResult<()> {
    let d = rfio::parse_touchstone(&read(input)?).map_err(|e| classify(e, true))?;
    let spec = touchstone_to_spectrum(&d, cli.verbose)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("converted");
    let path = cli.out.join(format!("{stem}_y.csv"));
    write(&path, &rfio::write_admittance_csv(&spec))?;
    println!("{}", path.display());
    Ok(())
}

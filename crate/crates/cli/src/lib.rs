//! Subcommand implementations behind the `dirac-spect` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dirac_core::direct_spectra::{
    asymptotic_residuals, compute_spectra, norming_quadrature, ResidualKind, ResidualReport, SpectraFile,
};
use dirac_core::glm_krein::{reconstruct, reconstruct_from_spectra, InverseOptions, Reconstruction};
use dirac_core::potential::lp_distance;
use dirac_core::spectral_products::{validate_sd, DEFAULT_DECAY_THRESHOLD};
use dirac_core::transform_kernel::{build_kernels, DEFAULT_N_MAX};
use dirac_core::{Error, Grid, Potential};
use serde::Serialize;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_ROOT: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_POSITIVITY: i32 = 5;
pub const EXIT_THRESHOLD: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "dirac-spect", version, about = "Direct and inverse spectral problems for Dirac operators on (0,1)")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "DIRAC_SPECT_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Potential → two spectra (and optionally norming constants).
    Direct(DirectArgs),
    /// Two spectra → potential.
    Inverse(InverseArgs),
    /// Eigenvalues and norming constants → potential.
    InverseNorming(InverseArgs),
    /// Potential → spectra → potential → spectra, with closure metrics.
    Roundtrip(RoundtripArgs),
    /// Checks a spectra file for interlacing and remainder decay.
    Validate(ValidateArgs),
    /// Transformation-operator kernel K of a potential.
    Kernel(KernelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn is_on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Args)]
pub struct DirectArgs {
    /// Potential file (JSON, or CSV rows `x,q1,q2`).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Index half-range: indices -N..=N are computed.
    #[arg(short = 'N', long = "modes", default_value_t = 64, value_parser = clap::value_parser!(i64).range(1..))]
    pub n: i64,
    /// Also compute norming constants by quadrature.
    #[arg(long)]
    pub norming: bool,
    /// Residuals above this value are counted in the summary.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InverseArgs {
    /// Spectra or norming file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Recovered potential; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Reconstruction report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// H profile (CSV `s,a,b`).
    #[arg(long)]
    pub h_profile: Option<PathBuf>,
    /// Reconstruction grid cells.
    #[arg(short = 'M', long = "cells", default_value_t = 256, value_parser = clap::value_parser!(u64).range(16..))]
    pub m: u64,
    /// Fejér summation of the H series.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub cesaro: Toggle,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Report file; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(short = 'N', long = "modes", default_value_t = 64, value_parser = clap::value_parser!(i64).range(1..))]
    pub n: i64,
    #[arg(short = 'M', long = "cells", default_value_t = 256, value_parser = clap::value_parser!(u64).range(16..))]
    pub m: u64,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub cesaro: Toggle,
    /// Bound on ‖Q − Q̂‖_L1 / ‖Q‖_L1 (absolute when Q = 0).
    #[arg(long, default_value_t = 5e-2)]
    pub l1_threshold: f64,
    /// Bound on max |λ_in − λ_out|.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_threshold: f64,
    /// Bound on max |α_in − α_out|.
    #[arg(long, default_value_t = 5e-2)]
    pub alpha_threshold: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Largest admissible outer-quartile remainder.
    #[arg(long, default_value_t = DEFAULT_DECAY_THRESHOLD)]
    pub decay_threshold: f64,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Terms of the successive-approximation series.
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    pub n_max: usize,
    /// Grid cells on [0,1].
    #[arg(short = 'M', long = "cells", default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    /// `csv` writes K over the triangle; `json` writes the norm report.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// A failure mapped to an exit code and a machine-readable object.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub module: &'static str,
    pub condition: String,
    pub message: String,
}

impl Failure {
    pub fn to_json(&self) -> String {
        json!({"error": {"module": self.module, "condition": self.condition, "message": self.message, "exit_code": self.code}})
            .to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, module, condition) = match &e {
            Error::Parse(_) | Error::Io(_) => (EXIT_SCHEMA, "cli", "schema"),
            Error::InvalidPotential(_) => (EXIT_SCHEMA, "core", "invalid_potential"),
            Error::StructureViolation(_) => (EXIT_SCHEMA, "core", "structure_violation"),
            Error::InvalidGrid(_) => (EXIT_SCHEMA, "core", "invalid_grid"),
            Error::InvalidArgument(_) => (EXIT_SCHEMA, "core", "invalid_argument"),
            Error::NonFiniteLambda(_) => (EXIT_NUMERIC, "cauchy", "non_finite_lambda"),
            Error::StepUnderflow(..) => (EXIT_NUMERIC, "cauchy", "step_underflow"),
            Error::RootNotBracketed(_) => (EXIT_ROOT, "direct_spectra", "root_not_bracketed"),
            Error::DuplicateRoot(_) => (EXIT_ROOT, "direct_spectra", "duplicate_root"),
            Error::NonPositiveAlpha(..) => (EXIT_VALIDATION, "spectral_products", "non_positive_alpha"),
            Error::Validation(_) => (EXIT_VALIDATION, "spectral_products", "validation"),
            Error::NotPositive(_) => (EXIT_POSITIVITY, "glm_krein", "not_positive"),
            Error::SingularSystem(_) => (EXIT_NUMERIC, "glm_krein", "singular_system"),
            Error::AliasRisk(_) => (EXIT_NUMERIC, "fourier_algebra", "alias_risk"),
            Error::NearZeroSymbol(_) => (EXIT_NUMERIC, "fourier_algebra", "near_zero_symbol"),
        };
        Failure { code, module, condition: condition.into(), message: e.to_string() }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

/// Parses the command line, sizes the worker pool and runs the command.
pub fn main_with(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            let f = Failure { code: EXIT_SCHEMA, module: "cli", condition: "threads".into(), message: e.to_string() };
            println!("{}", f.to_json());
            return f.code;
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("dirac-spect: {}", f.message);
            println!("{}", f.to_json());
            f.code
        }
    }
}

pub fn run(cmd: &Command) -> CmdResult {
    match cmd {
        Command::Direct(a) => run_direct(a),
        Command::Inverse(a) => run_inverse(a, false),
        Command::InverseNorming(a) => run_inverse(a, true),
        Command::Roundtrip(a) => run_roundtrip(a),
        Command::Validate(a) => run_validate(a),
        Command::Kernel(a) => run_kernel(a),
    }
}

fn emit(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display())).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn read_potential(path: &Path) -> std::result::Result<Potential, Failure> {
    Potential::from_file(path).map_err(|e| with_path(e, path))
}

fn read_spectra(path: &Path) -> std::result::Result<SpectraFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| with_path(e.into(), path))?;
    serde_json::from_str(&text).map_err(|e| with_path(e.into(), path))
}

fn with_path(e: Error, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn residual_summary(r: &ResidualReport, tol: f64) -> String {
    let above = r.residuals.iter().filter(|v| v.abs() > tol).count();
    format!(
        "{:?}: sum |r|^2 = {:.3e}, quartile max = [{:.2e}, {:.2e}, {:.2e}, {:.2e}], {above} above {tol:e}",
        r.kind, r.sum_sq, r.quartile_max[0], r.quartile_max[1], r.quartile_max[2], r.quartile_max[3]
    )
}

pub fn run_direct(a: &DirectArgs) -> CmdResult {
    let q = read_potential(&a.input)?;
    let sp = compute_spectra(&q, -a.n, a.n)?;
    let mut file = SpectraFile::from_pair(&sp);
    let mut reports = vec![
        asymptotic_residuals(&sp.lambda, sp.n_min, ResidualKind::Lambda),
        asymptotic_residuals(&sp.mu, sp.n_min, ResidualKind::Mu),
    ];
    if a.norming {
        let data = norming_quadrature(&q, sp.n_min, &sp.lambda)?;
        reports.push(asymptotic_residuals(&data.alpha, sp.n_min, ResidualKind::Alpha));
        file.alpha = Some(data.alpha);
    }
    for r in &reports {
        eprintln!("{}", residual_summary(r, a.tol));
    }
    let text = match a.format {
        Format::Json => to_json(&file),
        Format::Csv => spectra_csv(&file),
    };
    emit(a.output.as_deref(), &text)
}

fn spectra_csv(f: &SpectraFile) -> String {
    let mut out = String::from(if f.alpha.is_some() { "n,lambda,mu,alpha\n" } else { "n,lambda,mu\n" });
    for (k, n) in (f.n_min..=f.n_max).enumerate() {
        let _ = write!(out, "{n},{}", f.lambda[k]);
        if let Some(mu) = &f.mu {
            let _ = write!(out, ",{}", mu[k]);
        }
        if let Some(alpha) = &f.alpha {
            let _ = write!(out, ",{}", alpha[k]);
        }
        out.push('\n');
    }
    out
}

fn inverse_options(m: u64, cesaro: Toggle) -> InverseOptions {
    InverseOptions { cells: m as usize, cesaro: cesaro.is_on(), ..Default::default() }
}

pub fn run_inverse(a: &InverseArgs, norming: bool) -> CmdResult {
    let file = read_spectra(&a.input)?;
    let opts = inverse_options(a.m, a.cesaro);
    let rec: Reconstruction = if norming {
        let data = file.norming_data().map_err(|e| with_path(e, &a.input))?;
        reconstruct(&data, opts)?
    } else {
        let sp = file.spectrum_pair().map_err(|e| with_path(e, &a.input))?;
        reconstruct_from_spectra(&sp, opts)?
    };
    let r = &rec.report;
    eprintln!(
        "min eigenvalue {:.4e}, Krein residual {:.3e}, structure violation {:.3e}, ‖Q̂‖_L1 = {:.4e}",
        r.positivity.min_eigenvalue,
        r.krein_residual,
        r.structure_violation,
        rec.potential.lp_norm(1.0)?
    );
    if r.krein_residual > a.tol {
        eprintln!("warning: Krein residual {:.3e} exceeds {:e}", r.krein_residual, a.tol);
    }
    if let Some(p) = &a.report {
        emit(Some(p), &to_json(r))?;
    }
    if let Some(p) = &a.h_profile {
        emit(Some(p), &rec.h.to_csv())?;
    }
    let text = match a.format {
        Format::Json => rec.potential.to_json() + "\n",
        Format::Csv => rec.potential.to_csv(),
    };
    emit(a.output.as_deref(), &text)
}

/// Closure metrics of a direct → inverse → direct cycle.
#[derive(Debug, Clone, Serialize)]
pub struct RoundtripReport {
    pub n: i64,
    pub cells: usize,
    pub cesaro: bool,
    pub l1_error: f64,
    pub l1_relative_error: f64,
    pub lambda_max_error: f64,
    pub mu_max_error: f64,
    pub alpha_max_error: f64,
    pub min_eigenvalue: f64,
    pub krein_residual: f64,
    pub structure_violation: f64,
    pub thresholds: Thresholds,
    pub pass: bool,
    pub first_exceeded: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    pub l1: f64,
    pub lambda: f64,
    pub alpha: f64,
}

/// Runs the closure cycle and returns the report and the recovered potential.
pub fn roundtrip(q: &Potential, n: i64, opts: InverseOptions, th: Thresholds) -> dirac_core::Result<(RoundtripReport, Potential)> {
    let sp_in = compute_spectra(q, -n, n)?;
    let alpha_in = norming_quadrature(q, -n, &sp_in.lambda)?;
    let rec = reconstruct_from_spectra(&sp_in, opts)?;
    let q_hat = rec.potential;
    let sp_out = compute_spectra(&q_hat, -n, n)?;
    let alpha_out = norming_quadrature(&q_hat, -n, &sp_out.lambda)?;
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let l1_error = lp_distance(q, &q_hat, 1.0)?;
    let norm = q.lp_norm(1.0)?;
    let l1_relative_error = if norm > 0.0 { l1_error / norm } else { l1_error };
    let lambda_max_error = max_diff(&sp_in.lambda, &sp_out.lambda);
    let alpha_max_error = max_diff(&alpha_in.alpha, &alpha_out.alpha);
    let first_exceeded = [
        ("l1_relative_error", l1_relative_error, th.l1),
        ("lambda_max_error", lambda_max_error, th.lambda),
        ("alpha_max_error", alpha_max_error, th.alpha),
    ]
    .into_iter()
    .find(|(_, v, t)| !(v <= t))
    .map(|(name, v, t)| format!("{name} = {v:.4e} exceeds {t:e}"));
    let report = RoundtripReport {
        n,
        cells: opts.cells,
        cesaro: opts.cesaro,
        l1_error,
        l1_relative_error,
        lambda_max_error,
        mu_max_error: max_diff(&sp_in.mu, &sp_out.mu),
        alpha_max_error,
        min_eigenvalue: rec.report.positivity.min_eigenvalue,
        krein_residual: rec.report.krein_residual,
        structure_violation: rec.report.structure_violation,
        thresholds: th,
        pass: first_exceeded.is_none(),
        first_exceeded,
    };
    Ok((report, q_hat))
}

pub fn run_roundtrip(a: &RoundtripArgs) -> CmdResult {
    let q = read_potential(&a.input)?;
    let th = Thresholds { l1: a.l1_threshold, lambda: a.lambda_threshold, alpha: a.alpha_threshold };
    let (report, _) = roundtrip(&q, a.n, inverse_options(a.m, a.cesaro), th)?;
    let text = match a.format {
        Format::Json => to_json(&report),
        Format::Csv => format!(
            "metric,value,threshold\nl1_relative_error,{},{}\nlambda_max_error,{},{}\nalpha_max_error,{},{}\n",
            report.l1_relative_error, th.l1, report.lambda_max_error, th.lambda, report.alpha_max_error, th.alpha
        ),
    };
    emit(a.output.as_deref(), &text)?;
    match report.first_exceeded {
        None => Ok(()),
        Some(m) => Err(Failure { code: EXIT_THRESHOLD, module: "cli", condition: "roundtrip_threshold".into(), message: m }),
    }
}

pub fn run_validate(a: &ValidateArgs) -> CmdResult {
    let file = read_spectra(&a.input)?;
    let sp = file.spectrum_pair().map_err(|e| with_path(e, &a.input))?;
    let report = validate_sd(&sp, a.decay_threshold);
    emit(a.output.as_deref(), &to_json(&report))?;
    match report.failure_reason() {
        None => Ok(()),
        Some(reason) => Err(Error::Validation(reason).into()),
    }
}

pub fn run_kernel(a: &KernelArgs) -> CmdResult {
    let q = read_potential(&a.input)?;
    let grid = Grid::uniform(a.m as usize)?;
    let (_, k, report) = build_kernels(&q, a.n_max, &grid)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    let text = match a.format {
        Format::Csv => k.to_csv(),
        Format::Json => to_json(&report),
    };
    emit(a.output.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_documented_exit_codes() {
        let cases = [
            (Error::Parse("x".into()), EXIT_SCHEMA, "cli"),
            (Error::StructureViolation("x".into()), EXIT_SCHEMA, "core"),
            (Error::RootNotBracketed(3), EXIT_ROOT, "direct_spectra"),
            (Error::DuplicateRoot(3), EXIT_ROOT, "direct_spectra"),
            (Error::Validation("interlacing".into()), EXIT_VALIDATION, "spectral_products"),
            (Error::NotPositive(2), EXIT_POSITIVITY, "glm_krein"),
            (Error::SingularSystem(2), EXIT_NUMERIC, "glm_krein"),
        ];
        for (e, code, module) in cases {
            let f = Failure::from(e);
            assert_eq!((f.code, f.module), (code, module));
            let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
            assert_eq!(v["error"]["exit_code"], code);
            assert_eq!(v["error"]["condition"], f.condition.as_str());
        }
    }

    #[test]
    fn command_line_defaults() {
        let cli = Cli::try_parse_from(["dirac-spect", "roundtrip", "-i", "q.json"]).unwrap();
        let Command::Roundtrip(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!((a.n, a.m, a.cesaro), (64, 256, Toggle::Off));
        assert_eq!((a.l1_threshold, a.lambda_threshold), (5e-2, 1e-3));
        let cli = Cli::try_parse_from(["dirac-spect", "inverse", "-i", "s.json"]).unwrap();
        let Command::Inverse(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!((a.m, a.cesaro, a.tol), (256, Toggle::On, 1e-6));
        assert!(Cli::try_parse_from(["dirac-spect", "inverse", "-i", "s.json", "-M", "8"]).is_err());
        assert!(Cli::try_parse_from(["dirac-spect", "direct", "-i", "q.json", "-N", "0"]).is_err());
    }
}

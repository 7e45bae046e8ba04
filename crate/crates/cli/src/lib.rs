//! `tilt` command-line front end: problem files in, verdicts and reports out.
//!
//! Exit codes: `0` the command ran (whatever the verdict), `2` bad input, `3` numerical failure.

pub mod csv;
pub mod problem;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use tilt_core::analyzer::{self, AnalyzeOptions, ScanReport, TiltReport};
use tilt_core::composite::{multiplier_sample, FilterMode};
use tilt_core::oracle::{self, OracleReport, SolverOptions};
use tilt_core::proxcore::{self, mat_to_vec, vec_to_mat, NonsmoothTerm};
use tilt_core::sovf::{self, SovfCase};
use tilt_core::TiltError;

pub use problem::{parse_problem, ParsedProblem, ProblemFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<TiltError> for CliError {
    fn from(e: TiltError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tilt",
    version,
    about = "Tilt-stability certificates and tilt oracles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Conservative,
}

impl From<ModeArg> for FilterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => FilterMode::Exact,
            ModeArg::Conservative => FilterMode::Conservative,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TermArg {
    Spectral,
    L1,
    NonposOrthant,
}

#[derive(Debug, clap::Args)]
pub struct CertificateArgs {
    pub file: PathBuf,
    /// Target modulus; falls back to the "kappa" key of the problem file.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, value_enum, default_value = "conservative")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    pub mu_samples: usize,
    #[arg(long, default_value_t = 32)]
    pub direction_samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sufficient second-order certificate for a given modulus.
    Analyze(CertificateArgs),
    /// Necessary second-order condition; may refute tilt stability.
    Necessary {
        #[command(flatten)]
        args: CertificateArgs,
        /// Do not assert the sequence hypotheses; Refuted is then reported as Inconclusive.
        #[arg(long)]
        no_hypotheses: bool,
    },
    /// Brute-force tilt oracle.
    Oracle {
        file: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tilt_radius: f64,
        #[arg(long, default_value_t = 16)]
        tilts: usize,
        /// Repeat at `k` radii shrinking by 10x each.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value_t = 16)]
        multistarts: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Proximal mapping of `g` applied to a CSV matrix.
    Prox {
        #[arg(long, value_enum)]
        g: TermArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Second-order variational function at the sampled multipliers.
    Sovf {
        file: PathBuf,
        /// Direction (CSV, row-major) at which to evaluate the function.
        #[arg(long)]
        direction: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        mu_samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Heuristic neighborhood scan of the second-order quantity.
    Scan {
        file: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub tilt_radius: f64,
    pub empirical_lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub trend: Vec<SweepEntry>,
    pub reports: Vec<OracleReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SovfRecord {
    pub mu: Vec<f64>,
    pub case: SovfCase,
    pub ambiguous: bool,
    pub domain_dim: usize,
    pub constraints: usize,
    /// Value at `--direction`; `null` when outside the domain or no direction was given.
    pub gamma: Option<f64>,
    pub in_domain: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SovfReport {
    pub seed: u64,
    pub point: Vec<f64>,
    pub records: Vec<SovfRecord>,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<ParsedProblem, CliError> {
    let text = read_file(path)?;
    parse_problem(&text).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("report serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn emit_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, &to_json(value)?),
        None => Ok(()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.6e}"))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write to standard output: {e}")))
}

fn certificate_summary(name: &str, r: &TiltReport) -> String {
    let mut s = format!(
        "{name}: {:?} at kappa = {}\n  min lambda: {}\n  best modulus: {}\n",
        r.verdict,
        r.kappa,
        opt(r.min_lambda),
        opt(r.best_modulus)
    );
    s.push_str(&format!(
        "  multipliers: {} found, {} in tau ball (tau = {:.4e}), {} checked, diameter {:.3e}\n",
        r.metadata.multipliers_found,
        r.metadata.multipliers_in_tau_ball,
        r.metadata.tau,
        r.metadata.multipliers_checked,
        r.metadata.multiplier_diameter
    ));
    s
}

fn certificate_options(
    args: &CertificateArgs,
    parsed: &ParsedProblem,
    hypotheses: bool,
) -> Result<(f64, AnalyzeOptions), CliError> {
    let kappa = args.kappa.or(parsed.kappa).ok_or_else(|| {
        CliError::Input(
            "no modulus given: pass --kappa or set \"kappa\" in the problem file".into(),
        )
    })?;
    let opts = AnalyzeOptions {
        mu_samples: args.mu_samples,
        seed: args.seed.or(parsed.seed).unwrap_or(0),
        mode: args.mode.into(),
        direction_samples: args.direction_samples,
        hypotheses,
    };
    Ok((kappa, opts))
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => {
            let parsed = load(&args.file)?;
            let (kappa, opts) = certificate_options(&args, &parsed, false)?;
            let report =
                analyzer::certify_sufficient(&parsed.problem, &parsed.x_bar, kappa, &opts)?;
            emit_json(&args.json, &report)?;
            write_out(out, &certificate_summary("sufficient", &report))
        }
        Command::Necessary {
            args,
            no_hypotheses,
        } => {
            let parsed = load(&args.file)?;
            let (kappa, opts) = certificate_options(&args, &parsed, !no_hypotheses)?;
            let report =
                analyzer::evaluate_necessary(&parsed.problem, &parsed.x_bar, kappa, &opts)?;
            emit_json(&args.json, &report)?;
            write_out(out, &certificate_summary("necessary", &report))
        }
        Command::Oracle {
            file,
            delta,
            tilt_radius,
            tilts,
            sweep,
            multistarts,
            seed,
            json,
        } => {
            let parsed = load(&file)?;
            let seed = seed.or(parsed.seed).unwrap_or(0);
            let opts = SolverOptions {
                multistarts,
                ..SolverOptions::default()
            };
            let (p, x) = (&parsed.problem, &parsed.x_bar);
            match sweep {
                None => {
                    let r = oracle::tilt_oracle(p, x, delta, tilt_radius, tilts, seed, &opts)?;
                    emit_json(&json, &r)?;
                    write_out(
                        out,
                        &format!(
                            "oracle: empirical Lipschitz {} over {} pairs\n  uniqueness violations: {}, failed samples: {}, center check: {}\n",
                            opt(r.empirical_lipschitz),
                            r.lipschitz_pairs.len(),
                            r.uniqueness_violations,
                            r.failed_samples,
                            r.center_check
                        ),
                    )
                }
                Some(k) => {
                    if k == 0 {
                        return Err(CliError::Input("--sweep needs at least one radius".into()));
                    }
                    let reports =
                        oracle::tilt_sweep(p, x, delta, tilt_radius, k, tilts, seed, &opts)?;
                    let trend: Vec<SweepEntry> = reports
                        .iter()
                        .map(|r| SweepEntry {
                            tilt_radius: r.tilt_radius,
                            empirical_lipschitz: r.empirical_lipschitz,
                        })
                        .collect();
                    let mut s = String::from("oracle sweep:\n");
                    for t in &trend {
                        s.push_str(&format!(
                            "  radius {:.3e}: empirical Lipschitz {}\n",
                            t.tilt_radius,
                            opt(t.empirical_lipschitz)
                        ));
                    }
                    emit_json(&json, &SweepReport { trend, reports })?;
                    write_out(out, &s)
                }
            }
        }
        Command::Prox {
            g,
            input,
            out: dest,
        } => {
            let a = csv::read_matrix(&read_file(&input)?, &input.display().to_string())?;
            let (p, q) = a.shape();
            let term = match g {
                TermArg::Spectral => NonsmoothTerm::spectral(p, q),
                TermArg::L1 => NonsmoothTerm::l1(p * q),
                TermArg::NonposOrthant => NonsmoothTerm::nonpositive_orthant(p * q),
            };
            let result = proxcore::prox_apply(&term, &mat_to_vec(&a))?;
            let text = csv::write_matrix(&vec_to_mat(&result, p, q));
            match dest {
                Some(path) => write_file(&path, &text),
                None => write_out(out, &text),
            }
        }
        Command::Sovf {
            file,
            direction,
            mu_samples,
            seed,
            json,
        } => {
            let parsed = load(&file)?;
            let seed = seed.or(parsed.seed).unwrap_or(0);
            let report = sovf_report(&parsed, direction.as_deref(), mu_samples, seed)?;
            emit_json(&json, &report)?;
            let mut s = format!("sovf at F(x_bar): {} multiplier(s)\n", report.records.len());
            for r in &report.records {
                s.push_str(&format!(
                    "  {:?}: domain dimension {} ({} constraints){}\n",
                    r.case,
                    r.domain_dim,
                    r.constraints,
                    match (r.in_domain, r.gamma) {
                        (Some(true), Some(v)) => format!(", value {v:.6e}"),
                        (Some(false), _) => ", direction outside the domain".to_string(),
                        _ => String::new(),
                    }
                ));
            }
            write_out(out, &s)
        }
        Command::Scan {
            file,
            eta,
            samples,
            seed,
            json,
        } => {
            let parsed = load(&file)?;
            let seed = seed.or(parsed.seed).unwrap_or(0);
            let r: ScanReport =
                analyzer::neighborhood_scan(&parsed.problem, &parsed.x_bar, eta, samples, seed)?;
            emit_json(&json, &r)?;
            write_out(
                out,
                &format!(
                    "scan (heuristic): {} of {} samples kept, {} directions, min observed {}, nonpositive fraction {:.3}\n",
                    r.samples_kept,
                    r.samples_drawn,
                    r.directions_evaluated,
                    opt(r.min_observed),
                    r.nonpositive_fraction
                ),
            )
        }
    }
}

fn sovf_report(
    parsed: &ParsedProblem,
    direction: Option<&Path>,
    mu_samples: usize,
    seed: u64,
) -> Result<SovfReport, CliError> {
    let prob = &parsed.problem;
    let x = &parsed.x_bar;
    let fx = prob.feasible_image(x)?;
    let y: Option<DVector<f64>> = match direction {
        None => None,
        Some(path) => {
            let m = csv::read_matrix(&read_file(path)?, &path.display().to_string())?;
            if m.len() != prob.g.dim() {
                return Err(CliError::Input(format!(
                    "direction has {} entries but g acts on dimension {}",
                    m.len(),
                    prob.g.dim()
                )));
            }
            Some(mat_to_vec(&m))
        }
    };
    let xstar = -prob.f0.gradient(x);
    let sample = multiplier_sample(prob, x, &xstar, mu_samples, seed)?;
    if sample.multipliers.is_empty() {
        return Err(TiltError::NotStationary(format!(
            "no multiplier satisfies the KKT system at x_bar (best residual {:e})",
            sample.best_residual
        ))
        .into());
    }
    let records = sample
        .multipliers
        .iter()
        .map(|mu| -> Result<SovfRecord, CliError> {
            let form = sovf::build_sovf(&prob.g, &fx, mu)?;
            let cm = form.constraint_matrix();
            let rank = if cm.nrows() == 0 {
                0
            } else {
                tilt_core::numkernel::singular_values(&cm)
                    .iter()
                    .filter(|&&s| s > 1e-9)
                    .count()
            };
            let (gamma, in_domain) = match &y {
                None => (None, None),
                Some(y) => {
                    let inside = form.in_domain(y)?;
                    (
                        inside.then(|| sovf::sovf_eval(&form, y)).transpose()?,
                        Some(inside),
                    )
                }
            };
            Ok(SovfRecord {
                mu: mu.iter().copied().collect(),
                case: form.case_tag,
                ambiguous: form.ambiguous,
                domain_dim: form.dim - rank,
                constraints: form.domain_constraints.len(),
                gamma,
                in_domain,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(SovfReport {
        seed,
        point: fx.iter().copied().collect(),
        records,
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

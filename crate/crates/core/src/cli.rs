//! Command-line entry point.
//!
//! Exit status: 0 when every check passes, 1 when a property fails, 2 on
//! unreadable, malformed or invalid input.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::absstab::{
    check_sproc, search_lambda, sector_limit, sector_reach, sector_valid_on, sproc_max_eigenvalue,
    verify_equivalence, StabilityError,
};
use crate::analyzer::{
    analyze, closed_loop, initial_margins, invariant_ellipsoid, render_report, report_json,
    AnalysisError,
};
use crate::ir::{emit_listing, parse_spec, validate, SpecError, SystemSpec, BENCHMARK_SYS};
use crate::simulator::{
    run_campaign, simulate, write_trace_csv, CampaignConfig, Program, SimError,
};
use crate::Tolerances;

#[derive(Debug, Parser)]
#[command(
    name = "loopcert",
    version,
    about = "Stability certificates for plant/controller programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// System file; the bundled benchmark when omitted.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Slack on eigenvalues in semidefiniteness tests.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub psd_tol: f64,
    /// Slack in set containment tests.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub contain_tol: f64,
    /// Overrides the multiplier of the [sector] section.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Loop turns per simulated run.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub steps: usize,
    /// Number of sampled initial states.
    #[arg(long, global = true, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, global = true, env = "LOOPCERT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Machine-readable output: JSON report, or CSV traces for `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Accept initial states outside the initial ellipsoid.
    #[arg(long, global = true)]
    pub force_initial: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Matrix inequality, sector validity and initial-set checks.
    CheckSpec,
    /// Annotated listing and inductiveness verdict.
    Analyze,
    /// Sampled simulation checked against the annotations.
    Simulate {
        /// Single run from this initial state (comma-separated).
        #[arg(long, allow_hyphen_values = true)]
        initial: Option<String>,
        /// Number of leading runs written to the CSV.
        #[arg(long, default_value_t = 1)]
        trace_samples: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Agreement of the code-level chain with the matrix inequality.
    Equivalence {
        /// Frobenius tolerance of the matrix identities.
        #[arg(long, default_value_t = 1e-8)]
        identity_tol: f64,
    },
    /// Heuristic scan for a feasible multiplier.
    SearchLambda {
        #[arg(long, default_value_t = 1e-4)]
        lo: f64,
        #[arg(long, default_value_t = 100.0)]
        hi: f64,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: SpecError },
    #[error("{path}: invalid system:\n{}", messages.join("\n"))]
    Invalid { path: String, messages: Vec<String> },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Settings shared by all commands, checked for consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec_path: Option<PathBuf>,
    pub tol: Tolerances,
    pub lambda: Option<f64>,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub force_initial: bool,
}

impl RunConfig {
    pub fn from_options(o: &Options) -> Result<RunConfig, CliError> {
        if !(o.psd_tol > 0.0 && o.contain_tol > 0.0) {
            return Err(CliError::Config("tolerances must be positive".into()));
        }
        if o.steps == 0 {
            return Err(CliError::Config("--steps must be at least 1".into()));
        }
        if let Some(l) = o.lambda {
            if !l.is_finite() {
                return Err(CliError::Config(format!(
                    "--lambda must be finite, got {l}"
                )));
            }
        }
        Ok(RunConfig {
            spec_path: o.spec.clone(),
            tol: Tolerances {
                psd: o.psd_tol,
                contain: o.contain_tol,
            },
            lambda: o.lambda,
            steps: o.steps,
            samples: o.samples,
            seed: o.seed,
            out: o.out.clone(),
            force_initial: o.force_initial,
        })
    }

    fn source_name(&self) -> String {
        self.spec_path.as_ref().map_or_else(
            || "benchmark.sys (bundled)".into(),
            |p| p.display().to_string(),
        )
    }

    /// Reads, parses and validates the system, applying the multiplier override.
    pub fn load(&self) -> Result<SystemSpec, CliError> {
        let path = self.source_name();
        let text = match &self.spec_path {
            Some(p) => fs::read_to_string(p).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?,
            None => BENCHMARK_SYS.to_string(),
        };
        let mut spec = parse_spec(&text).map_err(|source| CliError::Parse {
            path: path.clone(),
            source,
        })?;
        if let Some(l) = self.lambda {
            if spec.sector.is_none() {
                return Err(CliError::Config("--lambda needs a [sector] section".into()));
            }
            spec = spec.with_lambda(l);
        }
        let diags = validate(&spec);
        if !diags.is_empty() {
            return Err(CliError::Invalid {
                path,
                messages: diags.iter().map(|d| format!("  {d}")).collect(),
            });
        }
        Ok(spec)
    }

    fn write_out(&self, text: &str) -> Result<(), CliError> {
        if let Some(p) = &self.out {
            fs::write(p, text)?;
        }
        Ok(())
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_bool(ok: bool) -> Outcome {
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }
}

struct Row {
    name: String,
    margin: f64,
    passed: bool,
    detail: String,
}

fn render_rows(rows: &[Row]) -> String {
    let mut s = String::new();
    for r in rows {
        let mark = if r.passed { "ok  " } else { "FAIL" };
        s.push_str(&format!(
            "  {mark} {:<20} margin {:>12.4e}  {}\n",
            r.name, r.margin, r.detail
        ));
    }
    s
}

fn rows_json(rows: &[Row]) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| json!({"name": r.name, "margin": r.margin, "passed": r.passed}))
            .collect(),
    )
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain values serialize");
    s.push('\n');
    s
}

/// Matrix inequality, sector validity on `E_P`, and initial-set embedding.
pub fn cmd_check_spec(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = cfg.load()?;
    let cl = closed_loop(&spec)?;
    let model = &cl.model;
    let mut rows = Vec::new();

    let max_eig = sproc_max_eigenvalue(model)?;
    rows.push(Row {
        name: "S-procedure".into(),
        margin: -max_eig,
        passed: check_sproc(model, cfg.tol.psd)?,
        detail: format!(
            "largest eigenvalue {max_eig:.6e} at lambda = {}",
            model.lambda
        ),
    });

    let e = invariant_ellipsoid(&spec)
        .map_err(AnalysisError::from)?
        .ok_or_else(|| CliError::Config("no [invariant] section".into()))?;
    match cl.sat_limit {
        Some(sat) => {
            let reach = sector_reach(&e, &model.c)?;
            let limit = sector_limit(&model.sector, sat);
            rows.push(Row {
                name: "sector validity".into(),
                margin: limit - reach,
                passed: sector_valid_on(&e, &model.c, &model.sector, sat)?,
                detail: format!("max |Cx| on E_P {reach:.6}, sector holds up to {limit:.6}"),
            });
        }
        None => rows.push(Row {
            name: "sector validity".into(),
            margin: f64::INFINITY,
            passed: true,
            detail: "no saturation".into(),
        }),
    }

    if let Some((embed, block)) = initial_margins(&spec)? {
        rows.push(Row {
            name: "initial embedding".into(),
            margin: embed,
            passed: embed >= -cfg.tol.contain,
            detail: "smallest eigenvalue of P^-1 - G0".into(),
        });
        rows.push(Row {
            name: "initial block".into(),
            margin: block,
            passed: block >= -cfg.tol.contain,
            detail: "smallest eigenvalue of Q - P_block".into(),
        });
    }

    let ok = rows.iter().all(|r| r.passed);
    writeln!(out, "system: {}", cfg.source_name())?;
    writeln!(out, "lambda: {}", model.lambda)?;
    writeln!(out, "checks:")?;
    write!(out, "{}", render_rows(&rows))?;
    writeln!(out, "result: {}", if ok { "PASS" } else { "FAIL" })?;
    cfg.write_out(&pretty(&json!({
        "lambda": model.lambda,
        "sproc_max_eig": max_eig,
        "checks": rows_json(&rows),
        "passed": ok,
    })))?;
    Ok(Outcome::from_bool(ok))
}

/// Annotated listing and margin report.
pub fn cmd_analyze(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = cfg.load()?;
    let analysis = analyze(&spec, &cfg.tol)?;
    let listing = emit_listing(&spec, &analysis.listing_annotations())
        .map_err(|e| CliError::Config(format!("listing: {e}")))?;
    write!(out, "{listing}\n{}", render_report(&analysis))?;
    cfg.write_out(&pretty(&report_json(&analysis)))?;
    Ok(Outcome::from_bool(analysis.verdict.is_inductive()))
}

fn parse_vector(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad number `{}` in --initial", t.trim())))
        })
        .collect()
}

/// Sampled or single simulation; traces go to `--out` as CSV.
pub fn cmd_simulate(
    cfg: &RunConfig,
    initial: Option<&str>,
    trace_samples: usize,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let spec = cfg.load()?;
    let analysis = analyze(&spec, &cfg.tol)?;
    let program = Program::new(&spec)?;
    writeln!(out, "system: {}", cfg.source_name())?;
    if let Some(text) = initial {
        let x0 = parse_vector(text)?;
        let trace = match simulate(&spec, &x0, cfg.steps, cfg.force_initial) {
            Ok(t) => t,
            Err(e @ (SimError::Divergence { .. } | SimError::Uninitialized { .. })) => {
                writeln!(out, "error: {e}")?;
                writeln!(out, "result: FAIL")?;
                return Ok(Outcome::Fail);
            }
            Err(e) => return Err(e.into()),
        };
        let violations =
            crate::simulator::check_annotations(&spec, &trace, &analysis.annotations, 1e-6);
        writeln!(out, "initial: {}", text)?;
        writeln!(out, "steps: {}", cfg.steps)?;
        writeln!(out, "records: {}", trace.len())?;
        writeln!(out, "violations: {}", violations.len())?;
        if let Some(v) = violations.first() {
            writeln!(
                out,
                "first violation: step {} at {} (margin {:.4e})",
                v.step, v.line, v.margin
            )?;
        }
        let ok = violations.is_empty();
        writeln!(out, "result: {}", if ok { "PASS" } else { "FAIL" })?;
        if let Some(p) = &cfg.out {
            write_trace_csv(fs::File::create(p)?, &program, &[(0, trace)])?;
        }
        return Ok(Outcome::from_bool(ok));
    }
    let threads = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let config = CampaignConfig {
        samples: cfg.samples,
        steps: cfg.steps,
        seed: cfg.seed,
        membership_tol: 1e-6,
        keep_traces: if cfg.out.is_some() { trace_samples } else { 0 },
        threads,
    };
    let c = run_campaign(&spec, &analysis.annotations, &config)?;
    writeln!(out, "samples: {}", cfg.samples)?;
    writeln!(out, "steps: {}", cfg.steps)?;
    writeln!(out, "seed: {}", cfg.seed)?;
    writeln!(out, "annotation violations: {}", c.violations())?;
    writeln!(out, "failed runs: {}", c.errors())?;
    if !c.runs.is_empty() {
        writeln!(
            out,
            "max V increase per step: {:.4e}",
            c.max_lyapunov_increase()
        )?;
        writeln!(
            out,
            "max V - 1 at loop ends: {:.4e}",
            c.max_invariant_excess()
        )?;
    }
    for r in c
        .runs
        .iter()
        .filter(|r| r.violations > 0 || r.error.is_some())
        .take(5)
    {
        if let Some(e) = &r.error {
            writeln!(out, "  sample {}: {e}", r.sample)?;
        } else if let Some(v) = &r.first_violation {
            writeln!(
                out,
                "  sample {}: {} violations, first at step {} line {} (margin {:.4e})",
                r.sample, r.violations, v.step, v.line, v.margin
            )?;
        }
    }
    let ok = c.violations() == 0 && c.errors() == 0;
    writeln!(out, "result: {}", if ok { "PASS" } else { "FAIL" })?;
    if let Some(p) = &cfg.out {
        write_trace_csv(fs::File::create(p)?, &program, &c.traces)?;
    }
    Ok(Outcome::from_bool(ok))
}

/// Four-part agreement report between the code-level chain and the matrix
/// inequality.
pub fn cmd_equivalence(
    cfg: &RunConfig,
    identity_tol: f64,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let spec = cfg.load()?;
    let model = closed_loop(&spec)?.model;
    let r = verify_equivalence(&model, identity_tol, cfg.tol.psd, cfg.tol.contain)?;
    let mark = |b: bool| if b { "ok  " } else { "FAIL" };
    writeln!(out, "system: {}", cfg.source_name())?;
    writeln!(out, "lambda: {}", r.lambda)?;
    writeln!(out, "identity tolerance: {identity_tol:e}")?;
    writeln!(
        out,
        "  {} closed form of W        residual {:.4e}",
        mark(r.w_closed_form_ok),
        r.w_closed_form_residual
    )?;
    writeln!(
        out,
        "  {} factorization of W      residual {:.4e}",
        mark(r.factorization_ok),
        r.factorization_residual
    )?;
    writeln!(
        out,
        "  {} Schur complements       residuals {:.4e}, {:.4e}",
        mark(r.schur_ok),
        r.schur_first_residual,
        r.schur_second_residual
    )?;
    writeln!(out, "  {} containment iff inequality", mark(r.iff_ok))?;
    let opt = |v: Option<f64>| v.map_or_else(|| "singular".to_string(), |x| format!("{x:.4e}"));
    for row in &r.iff_rows {
        writeln!(
            out,
            "       lambda {:<10} max eig {:>11.4e} ({})  lemma min eig {:>11}  containment {:>11} ({})",
            row.lambda,
            row.lmi_max_eig,
            if row.lmi_holds { "holds" } else { "fails" },
            opt(row.lemma_min_eig),
            opt(row.containment_margin),
            if row.forward_holds { "holds" } else { "fails" },
        )?;
    }
    let ok = r.all_ok();
    writeln!(out, "result: {}", if ok { "PASS" } else { "FAIL" })?;
    cfg.write_out(&pretty(&json!({
        "lambda": r.lambda,
        "w_closed_form_residual": r.w_closed_form_residual,
        "factorization_residual": r.factorization_residual,
        "schur_residuals": [r.schur_first_residual, r.schur_second_residual],
        "iff": r.iff_rows.iter().map(|row| json!({
            "lambda": row.lambda,
            "lmi_max_eig": row.lmi_max_eig,
            "lmi_holds": row.lmi_holds,
            "lemma_min_eig": row.lemma_min_eig,
            "containment_margin": row.containment_margin,
            "forward_holds": row.forward_holds,
        })).collect::<Vec<_>>(),
        "passed": ok,
    })))?;
    Ok(Outcome::from_bool(ok))
}

/// Grid plus golden-section scan of the multiplier.
pub fn cmd_search_lambda(
    cfg: &RunConfig,
    lo: f64,
    hi: f64,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    if !(0.0 < lo && lo < hi && hi.is_finite()) {
        return Err(CliError::Config(format!(
            "need 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    let spec = cfg.load()?;
    let model = closed_loop(&spec)?.model;
    let s = search_lambda(&model, lo, hi, cfg.tol.psd)?;
    writeln!(out, "system: {}", cfg.source_name())?;
    writeln!(out, "range: ({lo}, {hi}]")?;
    writeln!(out, "best lambda: {:.6}", s.best_lambda)?;
    writeln!(out, "largest eigenvalue there: {:.6e}", s.best_max_eig)?;
    match s.feasible {
        Some((a, b)) => writeln!(out, "feasible interval: [{a:.6}, {b:.6}]")?,
        None => writeln!(out, "feasible interval: none")?,
    }
    cfg.write_out(&pretty(&json!({
        "best_lambda": s.best_lambda,
        "best_max_eig": s.best_max_eig,
        "feasible": s.feasible.map(|(a, b)| [a, b]),
    })))?;
    Ok(Outcome::from_bool(s.feasible.is_some()))
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_options(&cli.options)?;
    match &cli.command {
        Command::CheckSpec => cmd_check_spec(&cfg, out),
        Command::Analyze => cmd_analyze(&cfg, out),
        Command::Simulate {
            initial,
            trace_samples,
            threads,
        } => cmd_simulate(&cfg, initial.as_deref(), *trace_samples, *threads, out),
        Command::Equivalence { identity_tol } => cmd_equivalence(&cfg, *identity_tol, out),
        Command::SearchLambda { lo, hi } => cmd_search_lambda(&cfg, *lo, *hi, out),
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

//! Command-line front end: single solves, refinement studies and the
//! property-check suite, reporting as CSV or JSON.

pub mod check;
pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ma_hybrid::hybrid::{build_mask, RegionMask};
use ma_hybrid::problems::{catalog, problem_by_name, Problem};
use ma_hybrid::solver::{solve, SolveReport};
use ma_hybrid::GridSpec;
use serde::Serialize;

pub use check::{run_check, run_check_with, CheckReport};
pub use config::{CliError, Command, Format, MaskSource, RunConfig};

/// Caps the worker threads of the library's parallel loops.
pub const THREADS_ENV: &str = "MA_HYBRID_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ma-hybrid", version, about = "Hybrid finite difference solver for det D²u = f on the unit square")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve one problem on one grid
    Solve(RunArgs),
    /// Solve on a sequence of grids and tabulate errors and observed orders
    Study(RunArgs),
    /// Run the monotonicity, Hessian-consistency and Poincaré checks
    Check(RunArgs),
    /// List the built-in problems
    ListProblems {
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Every option is also a key of the `--config` file.
#[derive(Args, Debug)]
struct RunArgs {
    /// flat key=value file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// problem name, see list-problems
    #[arg(long)]
    problem: Option<String>,
    /// mesh size, as 1/N or a decimal with 1/h integral
    #[arg(long)]
    h: Option<String>,
    /// comma-separated mesh sizes for a study, strictly decreasing
    #[arg(long)]
    refine: Option<String>,
    /// auto | singular | regular | file:PATH
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    fmin: Option<String>,
    #[arg(long)]
    fmax: Option<String>,
    /// boundary layer, in cells, forced singular by the auto mask
    #[arg(long)]
    margin: Option<String>,
    /// singular-branch step; disables step estimation
    #[arg(long)]
    nu1: Option<String>,
    /// regular-branch step; disables step estimation
    #[arg(long)]
    nu2: Option<String>,
    #[arg(long)]
    auto_steps: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    hybrid_tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    /// stencil radius in grid units
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    shrink: Option<String>,
    #[arg(long)]
    backtracking: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// monotonicity trials per node (check)
    #[arg(long)]
    trials: Option<String>,
    /// output file, written atomically; stdout when absent
    #[arg(long)]
    out: Option<String>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
}

impl RunArgs {
    fn merged(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut values = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("cannot read config file {}: {e}", path.display())))?;
                config::parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let flags = [
            ("problem", &self.problem),
            ("h", &self.h),
            ("refine", &self.refine),
            ("mask", &self.mask),
            ("fmin", &self.fmin),
            ("fmax", &self.fmax),
            ("margin", &self.margin),
            ("nu1", &self.nu1),
            ("nu2", &self.nu2),
            ("auto-steps", &self.auto_steps),
            ("tol", &self.tol),
            ("hybrid-tol", &self.hybrid_tol),
            ("max-iter", &self.max_iter),
            ("radius", &self.radius),
            ("shrink", &self.shrink),
            ("backtracking", &self.backtracking),
            ("seed", &self.seed),
            ("trials", &self.trials),
            ("out", &self.out),
            ("format", &self.format),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(values)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: impl IntoIterator<Item = String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_ERROR
                }
            };
        }
    };
    let result = with_thread_cap(|| execute(cli)).and_then(|(out, outcome)| {
        output::emit(out.as_deref(), &outcome.text, stdout)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            for note in &outcome.notes {
                let _ = writeln!(stderr, "{note}");
            }
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn with_thread_cap<T: Send>(f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return f();
    };
    let threads: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {text:?}")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

/// Runs the command and returns the output destination with the outcome.
fn execute(cli: Cli) -> Result<(Option<PathBuf>, Outcome), CliError> {
    let (command, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Study(a) => (Command::Study, a),
        Cmd::Check(a) => (Command::Check, a),
        Cmd::ListProblems { format, out } => {
            let format = match format.as_deref() {
                None | Some("text") => None,
                Some("json") => Some(Format::Json),
                Some(other) => return Err(CliError::Usage(format!("format must be text or json, got {other:?}"))),
            };
            return Ok((out, Outcome { code: EXIT_OK, text: list_problems(format), notes: Vec::new() }));
        }
    };
    let cfg = config::resolve(command, &args.merged()?)?;
    let outcome = match command {
        Command::Solve => run_solve(&cfg)?,
        Command::Study => run_study(&cfg)?,
        Command::Check => {
            let report = run_check(&cfg)?;
            let text = output::json(&report)?;
            Outcome { code: if report.passed { EXIT_OK } else { EXIT_FAILED }, text, notes: Vec::new() }
        }
    };
    Ok((cfg.out.clone(), outcome))
}

/// Rendered report, exit code and diagnostics for stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
    pub notes: Vec<String>,
}

/// Builds the mask requested by `cfg` on `cells`, or on the grid of the
/// mask file when `cells` is `None`.
pub fn resolve_mask(cfg: &RunConfig, problem: &Problem, cells: Option<usize>) -> Result<RegionMask, CliError> {
    let grid = || -> Result<GridSpec, CliError> {
        let cells = cells.ok_or_else(|| CliError::Usage("no mesh size given".into()))?;
        Ok(GridSpec::new(cells)?)
    };
    Ok(match &cfg.mask {
        MaskSource::Auto => build_mask(&problem.f_mesh(grid()?)?, &cfg.heuristics(&problem.heuristics))?,
        MaskSource::Singular => RegionMask::all_singular(grid()?),
        MaskSource::Regular => RegionMask::all_regular(grid()?),
        MaskSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read mask file {}: {e}", path.display())))?;
            let mask = RegionMask::from_text(&text)?;
            if let Some(c) = cells {
                if mask.grid().cells() != c {
                    return Err(CliError::Usage(format!(
                        "mask file {} is for h=1/{}, but h=1/{c} was requested",
                        path.display(),
                        mask.grid().cells()
                    )));
                }
            }
            mask
        }
    })
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    config: &'a RunConfig,
    converged: bool,
    report: &'a SolveReport,
}

pub fn run_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let problem = problem_by_name(&cfg.problem)?;
    let mask = resolve_mask(cfg, &problem, cfg.cells.first().copied())?;
    let mut cfg = cfg.clone();
    cfg.cells = vec![mask.grid().cells()];
    let (_, report) = solve(&problem, &mask, &cfg.solver)?;
    let text = match cfg.format {
        Format::Json => output::json(&SolveOutput { config: &cfg, converged: report.converged(), report: &report })?,
        Format::Csv => output::solve_csv(&cfg, &report),
    };
    let mut notes = Vec::new();
    if !report.converged() {
        notes.push(format!(
            "not converged: termination={} after {} iterations, residual {:e}",
            report.termination.as_str(),
            report.iterations,
            report.final_residual.max_norm
        ));
    }
    Ok(Outcome { code: if report.converged() { EXIT_OK } else { EXIT_FAILED }, text, notes })
}

/// One refinement level of a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub cells: usize,
    pub report: SolveReport,
}

pub fn run_study(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let problem = problem_by_name(&cfg.problem)?;
    let mut rows = Vec::with_capacity(cfg.cells.len());
    for &cells in &cfg.cells {
        let mask = resolve_mask(cfg, &problem, Some(cells))?;
        let (_, report) = solve(&problem, &mask, &cfg.solver)?;
        rows.push(StudyRow { cells, report });
    }
    let failed: Vec<&StudyRow> = rows.iter().filter(|r| !r.report.converged()).collect();
    let notes = failed
        .iter()
        .map(|r| format!("h=1/{} not converged: termination={}", r.cells, r.report.termination.as_str()))
        .collect();
    let code = if failed.is_empty() { EXIT_OK } else { EXIT_FAILED };
    let text = match cfg.format {
        Format::Csv => output::study_csv(cfg, &rows),
        Format::Json => output::study_json(cfg, &rows)?,
    };
    Ok(Outcome { code, text, notes })
}

#[derive(Serialize)]
struct ProblemEntry {
    name: String,
    description: String,
    has_exact: bool,
    satisfies_hypotheses: bool,
}

fn list_problems(format: Option<Format>) -> String {
    let entries: Vec<ProblemEntry> = catalog()
        .into_iter()
        .map(|p| ProblemEntry {
            has_exact: p.exact.is_some(),
            satisfies_hypotheses: p.satisfies_hypotheses,
            name: p.name,
            description: p.description,
        })
        .collect();
    if format == Some(Format::Json) {
        return serde_json::to_string_pretty(&entries).expect("plain data serializes") + "\n";
    }
    let mut out = format!("{:<6}{:<7}{:<12}{}\n", "name", "exact", "hypotheses", "description");
    for e in entries {
        let yn = |b: bool| if b { "yes" } else { "no" };
        out += &format!("{:<6}{:<7}{:<12}{}\n", e.name, yn(e.has_exact), yn(e.satisfies_hypotheses), e.description);
    }
    out
}

//! Report rendering and atomic file output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{CliError, RunConfig};
use crate::StudyRow;
use ma_hybrid::solver::SolveReport;

/// Errors at or below this count as exact when computing orders.
pub const SATURATION: f64 = 1e-9;

pub fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Io(format!("cannot serialize report: {e}")))
}

/// Writes `text` to `path` through a temporary file in the same directory,
/// or to `stdout` when no path is given.
pub fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let Some(path) = path else {
        return stdout.write_all(text.as_bytes()).map_err(|e| CliError::Io(format!("cannot write output: {e}")));
    };
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(text.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn header(cfg: &RunConfig) -> String {
    cfg.echo().into_iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn solve_csv(cfg: &RunConfig, report: &SolveReport) -> String {
    let mut out = header(cfg);
    let _ = writeln!(out, "# termination={}", report.termination.as_str());
    let _ = writeln!(out, "# iterations={}", report.iterations);
    let _ = writeln!(out, "# step_nu1={} step_nu2={}", report.steps.nu_singular, report.steps.nu_regular);
    let _ = writeln!(out, "# convex={}", report.convexity.ok);
    let _ = writeln!(out, "# solution_bound={}", sci(report.solution_bound));
    if let Some(e) = &report.errors {
        let _ = writeln!(out, "# err_max_singular={}", sci(e.err_max_singular));
        let _ = writeln!(out, "# err_h1_regular={}", sci(e.err_h1_regular));
        let _ = writeln!(out, "# err_hybrid={}", sci(e.err_hybrid));
        let _ = writeln!(out, "# err_max_global={}", sci(e.err_max_global));
    }
    out += "iteration,res_max,res_hybrid\n";
    for (k, r) in report.residual_history.iter().enumerate() {
        let _ = writeln!(out, "{k},{},{}", sci(r.max_norm), sci(r.hybrid_norm));
    }
    out
}

/// Observed order between two levels, `None` when undefined.
pub fn observed_order(coarse: (usize, f64), fine: (usize, f64)) -> Option<f64> {
    let (ratio_h, ratio_e) = (fine.0 as f64 / coarse.0 as f64, coarse.1 / fine.1);
    (coarse.1 > 0.0 && fine.1 > 0.0).then(|| ratio_e.ln() / ratio_h.ln())
}

/// `order_max` cell for consecutive rows: empty for the first row and for
/// pairs involving a non-converged level.
fn order_cell(prev: Option<&StudyRow>, row: &StudyRow) -> String {
    let Some(prev) = prev else { return String::new() };
    if !(prev.report.converged() && row.report.converged()) {
        return String::new();
    }
    let (Some(a), Some(b)) = (&prev.report.errors, &row.report.errors) else { return String::new() };
    if a.err_max_global <= SATURATION && b.err_max_global <= SATURATION {
        return "saturated".into();
    }
    observed_order((prev.cells, a.err_max_global), (row.cells, b.err_max_global))
        .map(|o| format!("{o:.6}"))
        .unwrap_or_default()
}

pub fn study_csv(cfg: &RunConfig, rows: &[StudyRow]) -> String {
    let mut out = header(cfg);
    for r in rows.iter().filter(|r| !r.report.converged()) {
        let _ = writeln!(
            out,
            "# not converged: h=1/{} termination={} iterations={}",
            r.cells,
            r.report.termination.as_str(),
            r.report.iterations
        );
    }
    out += "h,iters,res_max,res_hybrid,err_max_singular,err_h1_regular,err_hybrid,err_max_global,order_max\n";
    for (k, row) in rows.iter().enumerate() {
        let rep = &row.report;
        let errs = match &rep.errors {
            Some(e) => [e.err_max_singular, e.err_h1_regular, e.err_hybrid, e.err_max_global].map(sci).join(","),
            None => ",,,".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            1.0 / row.cells as f64,
            rep.iterations,
            sci(rep.final_residual.max_norm),
            sci(rep.final_residual.hybrid_norm),
            errs,
            order_cell(k.checked_sub(1).map(|p| &rows[p]), row)
        );
    }
    out
}

#[derive(Serialize)]
struct StudyLevel<'a> {
    h: f64,
    converged: bool,
    order_max: String,
    report: &'a SolveReport,
}

#[derive(Serialize)]
struct StudyOutput<'a> {
    config: &'a RunConfig,
    levels: Vec<StudyLevel<'a>>,
}

pub fn study_json(cfg: &RunConfig, rows: &[StudyRow]) -> Result<String, CliError> {
    let levels = rows
        .iter()
        .enumerate()
        .map(|(k, row)| StudyLevel {
            h: 1.0 / row.cells as f64,
            converged: row.report.converged(),
            order_max: order_cell(k.checked_sub(1).map(|p| &rows[p]), row),
            report: &row.report,
        })
        .collect();
    json(&StudyOutput { config: cfg, levels })
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::RunReport;
use crate::distsim::CommLedger;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] =
    ["run_seed", "k", "x_err_sq", "lyapunov", "bound", "grad_calls", "up_floats", "down_floats"];

/// One recorded round of one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub run_seed: u64,
    pub k: usize,
    pub x_err_sq: f64,
    pub lyapunov: f64,
    pub bound: f64,
    pub grad_calls: u64,
    pub up_floats: u64,
    pub down_floats: u64,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes every recorded row, seed-major, with floats in round-trippable
/// scientific notation.
pub fn emit_csv(report: &RunReport, path: &Path) -> Result<()> {
    write_rows(&report.rows, path)
}

pub(crate) fn write_rows(rows: &[CsvRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.run_seed.to_string(),
            r.k.to_string(),
            float(r.x_err_sq),
            float(r.lyapunov),
            float(r.bound),
            r.grad_calls.to_string(),
            r.up_floats.to_string(),
            r.down_floats.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected CSV header {header:?}", path.display())));
    }
    let bad = |what: &str, v: &str| Error::Config(format!("{}: cannot parse {what} from {v:?}", path.display()));
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record.map_err(csv_err)?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(CSV_HEADER[i], &rec[i]));
        let flt = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_HEADER[i], &rec[i]));
        rows.push(CsvRow {
            run_seed: int(0)?,
            k: int(1)? as usize,
            x_err_sq: flt(2)?,
            lyapunov: flt(3)?,
            bound: flt(4)?,
            grad_calls: int(5)?,
            up_floats: int(6)?,
            down_floats: int(7)?,
        });
    }
    Ok(rows)
}

/// `run.csv` becomes `run.ledger.csv`.
pub fn ledger_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    csv_path.with_file_name(format!("{stem}.ledger.csv"))
}

/// All per-seed ledgers in one file, keyed by `run_seed`.
pub fn write_ledgers(path: &Path, ledgers: &[(u64, CommLedger)]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["run_seed", "round", "up_floats", "down_floats", "up_indices", "down_indices", "participants"])
        .map_err(csv_err)?;
    for (seed, ledger) in ledgers {
        for r in &ledger.rounds {
            w.write_record([
                seed.to_string(),
                r.round.to_string(),
                r.up_floats.to_string(),
                r.down_floats.to_string(),
                r.up_indices.to_string(),
                r.down_indices.to_string(),
                r.participants.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Human-readable summary: resolved settings, certificate fields, notes and
/// the seed-averaged trajectory at a few checkpoints.
pub fn render_report(report: &RunReport) -> String {
    let r = &report.resolved;
    let cfg = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "variant = {}", r.variant);
    let _ = writeln!(
        s,
        "problem = M {} d {} d' {} seed {}",
        cfg.problem.num_components, cfg.problem.dim, cfg.problem.rows, cfg.problem.seed
    );
    let _ = writeln!(s, "L = {:.6e}", r.constants.l);
    let _ = writeln!(s, "mu = {:.6e}", r.constants.mu);
    let _ = writeln!(s, "kappa = {:.6e}", r.constants.kappa);
    let _ = writeln!(s, "gamma = {:.6e}", r.params.gamma);
    let _ = writeln!(s, "lambda = {:.6e}", r.params.lambda);
    let _ = writeln!(s, "rho = {:.6e}", r.params.rho);
    let _ = writeln!(s, "rounds = {}", cfg.runs.rounds);
    let _ = writeln!(s, "seeds = {}", report.seeds.len());
    let _ = writeln!(s, "[certificate]");
    for (k, v) in r.certificate.fields() {
        let _ = writeln!(s, "{k} = {v}");
    }
    if !report.notes.is_empty() {
        let _ = writeln!(s, "[notes]");
        for n in &report.notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    let _ = writeln!(s, "[trajectory]");
    let _ = writeln!(s, "k,mean_lyapunov,bound,mean_x_err_sq,mean_grad_calls");
    let last = report.summary.last().map(|row| row.k);
    for row in &report.summary {
        let checkpoint = row.k == 0 || Some(row.k) == last || (row.k > 0 && (row.k as f64).log10().fract() == 0.0);
        if checkpoint {
            let _ = writeln!(
                s,
                "{},{:.6e},{:.6e},{:.6e},{:.1}",
                row.k, row.mean_lyapunov, row.bound, row.mean_x_err_sq, row.mean_grad_calls
            );
        }
    }
    s
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, render_report(report)).map_err(|e| Error::io(path, e))
}

//! CSV tables. Every float is written with 17 significant digits so that a
//! reread reproduces it bit for bit.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::SideSolution;

pub const SWEEP_HEADER: [&str; 13] = [
    "k",
    "C_k",
    "D_k",
    "I_primal",
    "I_dual",
    "gap",
    "K_k",
    "K_tent",
    "deficit",
    "sup_slope",
    "sup_u",
    "el_residual",
    "wall_ms",
];

pub const SAMPLES_HEADER: [&str; 6] = ["x", "side", "theta", "lambda", "eta", "u"];

pub const ORACLE_HEADER: [&str; 3] = ["K_tent", "C_limit", "D_limit"];

/// One line of a k-sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: f64,
    pub c_k: f64,
    pub d_k: f64,
    pub i_primal: f64,
    pub i_dual: f64,
    pub gap: f64,
    pub k_k: f64,
    pub k_tent: f64,
    pub deficit: f64,
    pub sup_slope: f64,
    pub sup_u: f64,
    pub el_residual: f64,
    pub wall_ms: f64,
}

impl SweepRow {
    fn fields(&self) -> [f64; 13] {
        [
            self.k,
            self.c_k,
            self.d_k,
            self.i_primal,
            self.i_dual,
            self.gap,
            self.k_k,
            self.k_tent,
            self.deficit,
            self.sup_slope,
            self.sup_u,
            self.el_residual,
            self.wall_ms,
        ]
    }

    fn from_fields(v: &[f64]) -> Self {
        Self {
            k: v[0],
            c_k: v[1],
            d_k: v[2],
            i_primal: v[3],
            i_dual: v[4],
            gap: v[5],
            k_k: v[6],
            k_tent: v[7],
            deficit: v[8],
            sup_slope: v[9],
            sup_u: v[10],
            el_residual: v[11],
            wall_ms: v[12],
        }
    }
}

/// Limit quantities for the oracle table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub k_tent: f64,
    pub c_limit: f64,
    pub d_limit: f64,
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_error(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.to_string(), message: e.to_string() }
}

fn write_table<W: Write>(
    out: W,
    name: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header).map_err(|e| io_error(name, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_error(name, e))?;
    }
    w.flush().map_err(|e| io_error(name, e))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| io_error(&path.display().to_string(), e))
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    write_table(
        out,
        "sweep table",
        &SWEEP_HEADER,
        rows.iter().map(|r| r.fields().iter().map(|&v| format_float(v)).collect()),
    )
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_sweep(rows, create(path)?)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error(&name, e))?;
    let header = r.headers().map_err(|e| io_error(&name, e))?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(io_error(&name, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_error(&name, e))?;
        let values = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| io_error(&name, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(SweepRow::from_fields(&values));
    }
    Ok(rows)
}

/// Grid samples of every side, in order.
pub fn write_samples<W: Write>(sides: &[&SideSolution], out: W) -> Result<()> {
    let rows = sides.iter().flat_map(|s| {
        (0..s.x.len()).map(move |i| {
            vec![
                format_float(s.x[i]),
                s.side.to_string(),
                format_float(s.theta[i]),
                format_float(s.lambda[i]),
                format_float(s.eta[i]),
                format_float(s.u[i]),
            ]
        })
    });
    write_table(out, "samples table", &SAMPLES_HEADER, rows)
}

pub fn emit_samples(sides: &[&SideSolution], path: &Path) -> Result<()> {
    write_samples(sides, create(path)?)
}

pub fn write_oracle<W: Write>(row: &OracleRow, out: W) -> Result<()> {
    let values = [row.k_tent, row.c_limit, row.d_limit].iter().map(|&v| format_float(v)).collect();
    write_table(out, "oracle table", &ORACLE_HEADER, [values])
}

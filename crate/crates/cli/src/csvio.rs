//! CSV output at 17 significant digits, and the readers that parse it back.

use std::path::Path;

use pmp_core::algebra::{c, Operator};
use pmp_core::lindblad::{OperatorPath, SampleConvention, SwitchingCurve};
use pmp_core::problem::ControlSchedule;

use crate::error::{CliError, Result};

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_rows<P: AsRef<Path>>(path: P, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse { path: path.into(), message: format!("{other:?}") },
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(to_io)?;
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(row).map_err(to_io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// A parsed numeric CSV. Empty cells read as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// A fully populated column.
    pub fn values(&self, name: &str) -> std::result::Result<Vec<f64>, String> {
        let k = self.column(name).ok_or_else(|| format!("missing column '{name}'"))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[k].ok_or_else(|| format!("empty '{name}' in row {}", i + 1)))
            .collect()
    }
}

pub fn read_table<P: AsRef<Path>>(path: P) -> Result<Table> {
    let path = path.as_ref();
    let bad = |message: String| CliError::Parse { path: path.into(), message };
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| bad(format!("not a number: '{cell}'")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn entry_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for r in 0..dim {
        for col in 0..dim {
            h.push(format!("re_{r}{col}"));
            h.push(format!("im_{r}{col}"));
        }
    }
    h
}

/// `t, re_00, im_00, re_01, ...` in row-major entry order.
pub fn write_operator_path<P: AsRef<Path>>(path: P, p: &OperatorPath) -> Result<()> {
    let dim = p.dim();
    let rows: Vec<Vec<String>> = p
        .times()
        .iter()
        .zip(p.ops())
        .map(|(t, op)| {
            let mut row = vec![num(*t)];
            for r in 0..dim {
                for col in 0..dim {
                    let z = op.get(r, col);
                    row.push(num(z.re));
                    row.push(num(z.im));
                }
            }
            row
        })
        .collect();
    write_rows(path, &entry_header(dim), &rows)
}

pub fn read_operator_path<P: AsRef<Path>>(path: P) -> Result<OperatorPath> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let bad = |message: String| CliError::Parse { path: path.into(), message };
    let dim = ((table.header.len().saturating_sub(1) / 2) as f64).sqrt().round() as usize;
    if dim == 0 || table.header != entry_header(dim) {
        return Err(bad("not an operator-path table".into()));
    }
    let times = table.values("t").map_err(bad)?;
    let mut ops = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let cells: Vec<f64> = row[1..]
            .iter()
            .map(|v| v.ok_or_else(|| bad(format!("empty entry in row {}", i + 1))))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<_>> = (0..dim)
            .map(|r| (0..dim).map(|col| c(cells[2 * (r * dim + col)], cells[2 * (r * dim + col) + 1])).collect())
            .collect();
        ops.push(Operator::from_rows(&rows)?);
    }
    Ok(OperatorPath::new(times, ops)?)
}

/// `t, <name>` plus optional extra per-bin columns.
pub fn write_curve<P: AsRef<Path>>(path: P, name: &str, curve: &SwitchingCurve, extra: &[(&str, Vec<f64>)]) -> Result<()> {
    let mut header = vec!["t".to_string(), name.to_string()];
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    let rows: Vec<Vec<String>> = (0..curve.len())
        .map(|i| {
            let mut row = vec![num(curve.times()[i]), num(curve.values()[i])];
            row.extend(extra.iter().map(|(_, v)| num(v[i])));
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn read_curve<P: AsRef<Path>>(path: P, name: &str, convention: SampleConvention) -> Result<SwitchingCurve> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let bad = |message: String| CliError::Parse { path: path.into(), message };
    let times = table.values("t").map_err(bad)?;
    let values = table.values(name).map_err(bad)?;
    Ok(SwitchingCurve::new(times, values, convention)?)
}

/// `t_start, t_end, u` per bin.
pub fn write_control<P: AsRef<Path>>(path: P, u: &ControlSchedule) -> Result<()> {
    let dt = u.dt();
    let rows: Vec<Vec<String>> = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| vec![num(i as f64 * dt), num((i + 1) as f64 * dt), num(*v)])
        .collect();
    write_rows(path, &["t_start".into(), "t_end".into(), "u".into()], &rows)
}

pub fn read_control<P: AsRef<Path>>(path: P) -> Result<ControlSchedule> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let bad = |message: String| CliError::Parse { path: path.into(), message };
    let start = table.values("t_start").map_err(bad)?;
    let end = table.values("t_end").map_err(bad)?;
    let u = table.values("u").map_err(bad)?;
    if u.is_empty() {
        return Err(bad("control table has no rows".into()));
    }
    Ok(ControlSchedule::new(u, end[0] - start[0])?)
}

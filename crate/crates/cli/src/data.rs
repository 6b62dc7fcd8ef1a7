use std::path::Path;

use medtransport::{Observation, ObservationTable};

use crate::error::{CliError, CliResult};

pub const WARN_STRATUM: usize = 50;
pub const MIN_STRATUM: usize = 10;

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub table: ObservationTable,
    pub warnings: Vec<String>,
}

struct Layout {
    s: usize,
    a: usize,
    w: usize,
    r: usize,
    c: usize,
    y: usize,
    m: Option<usize>,
    id: Option<usize>,
    c_true: Option<usize>,
}

fn find(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

impl Layout {
    fn from_header(header: &csv::StringRecord) -> CliResult<Self> {
        let req = |name: &str| {
            find(header, name).ok_or_else(|| CliError::Schema(format!("missing required column: {name}")))
        };
        Ok(Self {
            s: req("S")?,
            a: req("A")?,
            w: req("W")?,
            r: req("R")?,
            c: req("C")?,
            y: req("Y")?,
            m: find(header, "M"),
            id: find(header, "id"),
            c_true: find(header, "C_TRUE"),
        })
    }
}

fn field(rec: &csv::StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("").trim()
}

fn binary(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> CliResult<u8> {
    match field(rec, i) {
        "0" => Ok(0),
        "1" => Ok(1),
        v => Err(CliError::Row { line, message: format!("column {name} must be 0 or 1, found {v:?}") }),
    }
}

fn real(v: &str, name: &str, line: u64) -> CliResult<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::Row { line, message: format!("column {name} is not a finite number: {v:?}") }),
    }
}

fn optional_real(v: &str, name: &str, line: u64) -> CliResult<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        real(v, name, line).map(Some)
    }
}

/// Reads S, A, W, R, C, Y (+ optional M, id, C_TRUE). An empty C means the mediator is missing.
pub fn load_csv(path: &Path) -> CliResult<LoadedTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let header = reader.headers().map_err(|e| CliError::Schema(e.to_string()))?.clone();
    let layout = Layout::from_header(&header)?;
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| CliError::Row { line, message: e.to_string() })?;
        let c = optional_real(field(&rec, layout.c), "C", line)?;
        let c_obs = match layout.m {
            Some(i) => match binary(&rec, i, "M", line)? {
                0 => None,
                _ if c.is_none() => {
                    return Err(CliError::Row { line, message: "M = 1 but C is empty".into() });
                }
                _ => c,
            },
            None => c,
        };
        let c_true = match layout.c_true {
            Some(i) => optional_real(field(&rec, i), "C_TRUE", line)?,
            None => None,
        };
        let id = match layout.id {
            Some(i) => field(&rec, i)
                .parse::<u64>()
                .map_err(|_| CliError::Row { line, message: "id must be a nonnegative integer".into() })?,
            None => k as u64,
        };
        rows.push(Observation {
            id,
            s: binary(&rec, layout.s, "S", line)?,
            a: binary(&rec, layout.a, "A", line)?,
            w: binary(&rec, layout.w, "W", line)?,
            r: real(field(&rec, layout.r), "R", line)?,
            c_true,
            c_obs,
            y: binary(&rec, layout.y, "Y", line)?,
        });
    }
    let table = ObservationTable::new(rows)?;
    let mut warnings = Vec::new();
    for s in 0..2u8 {
        for w in 0..2u8 {
            let n = table.count(Some(s), Some(w));
            if n < MIN_STRATUM {
                return Err(CliError::Schema(format!("stratum S={s}, W={w} has {n} rows (minimum {MIN_STRATUM})")));
            }
            if n < WARN_STRATUM {
                warnings.push(format!("stratum S={s}, W={w} has only {n} rows"));
            }
        }
    }
    Ok(LoadedTable { table, warnings })
}

/// Writes id, S, A, W, R, C, Y (C empty when missing), plus C_TRUE when `keep_truth`.
pub fn write_csv(table: &ObservationTable, path: &Path, keep_truth: bool) -> CliResult<()> {
    let werr = |e: csv::Error| CliError::Write { path: path.to_path_buf(), source: e.into() };
    let mut out = csv::Writer::from_path(path).map_err(werr)?;
    let mut header = vec!["id", "S", "A", "W", "R", "C", "Y"];
    if keep_truth {
        header.push("C_TRUE");
    }
    out.write_record(&header).map_err(werr)?;
    for r in table.iter() {
        let mut rec = vec![
            r.id.to_string(),
            r.s.to_string(),
            r.a.to_string(),
            r.w.to_string(),
            r.r.to_string(),
            r.c_obs.map(|c| c.to_string()).unwrap_or_default(),
            r.y.to_string(),
        ];
        if keep_truth {
            rec.push(r.c_true.map(|c| c.to_string()).unwrap_or_default());
        }
        out.write_record(&rec).map_err(werr)?;
    }
    out.flush().map_err(|e| CliError::Write { path: path.to_path_buf(), source: e })
}

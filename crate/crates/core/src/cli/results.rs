//! Versioned results CSV written by `simulate` and read by `plot`.

use crate::cli::matrix_io::fmt_f64;
use crate::error::{Error, Result};
use crate::simlab::ResultRow;
use crate::solvers::Method;

pub const VERSION_LINE: &str = "# hetero-spectra results v1";
pub const HEADER: [&str; 7] = ["method", "param", "value", "replicate", "sin_theta", "wall_ms", "status"];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn to_csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for row in rows {
        w.write_record([
            row.method.tag().to_string(),
            row.param.clone(),
            // shortest round-trip form keeps sweep values readable ("3", "0.5")
            format!("{}", row.value),
            row.replicate.to_string(),
            opt(row.sin_theta),
            opt(row.wall_ms),
            row.status.clone(),
        ])
        .map_err(io)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?;
    Ok(format!("{VERSION_LINE}\n{body}"))
}

fn field_err(line: usize, column: usize, message: String) -> Error {
    Error::Parse {
        line,
        column,
        message,
    }
}

fn parse_opt(tok: &str, line: usize, column: usize) -> Result<Option<f64>> {
    if tok.is_empty() {
        return Ok(None);
    }
    tok.parse()
        .map(Some)
        .map_err(|_| field_err(line, column, format!("not a number: '{tok}'")))
}

/// Parses a results CSV. Lines starting with `#` are comments.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| field_err(0, 0, e.to_string()))?,
        None => return Err(field_err(1, 1, "missing header".into())),
    };
    if header.iter().ne(HEADER.iter().copied()) {
        let line = header.position().map_or(1, |p| p.line() as usize);
        return Err(field_err(line, 1, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            field_err(line, 0, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let f = |i: usize| rec.get(i).unwrap_or("");
        let method: Method = f(0)
            .parse()
            .map_err(|_| field_err(line, 1, format!("unknown method '{}'", f(0))))?;
        let value = f(2)
            .parse()
            .map_err(|_| field_err(line, 3, format!("not a number: '{}'", f(2))))?;
        let replicate = f(3)
            .parse()
            .map_err(|_| field_err(line, 4, format!("not a replicate index: '{}'", f(3))))?;
        rows.push(ResultRow {
            method,
            param: f(1).to_string(),
            value,
            replicate,
            sin_theta: parse_opt(f(4), line, 5)?,
            wall_ms: parse_opt(f(5), line, 6)?,
            status: f(6).to_string(),
        });
    }
    Ok(rows)
}

//! Dense CSV and Matrix Market array readers/writers for symmetric matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;

/// Inputs whose worst `|m_ij - m_ji|` is at most this are averaged into exact symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    CsvDense,
    MatrixMarketArray,
}

impl MatrixFormat {
    /// `.mtx` means Matrix Market, anything else dense CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("mtx") => MatrixFormat::MatrixMarketArray,
            _ => MatrixFormat::CsvDense,
        }
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn parse_number(token: &str, line: usize, column: usize) -> Result<f64> {
    let t = token.trim();
    let v: f64 = t
        .parse()
        .map_err(|_| parse_err(line, column, format!("not a number: '{t}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, column, format!("non-finite value '{t}'")));
    }
    Ok(v)
}

pub fn parse_matrix(path: &Path, format: MatrixFormat) -> Result<SymMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix_str(&text, format)
}

pub fn parse_matrix_str(text: &str, format: MatrixFormat) -> Result<SymMatrix> {
    let dense = match format {
        MatrixFormat::CsvDense => parse_csv_dense(text)?,
        MatrixFormat::MatrixMarketArray => parse_matrix_market(text)?,
    };
    let (m, gap) = SymMatrix::from_matrix_symmetrized(dense, SYMMETRY_TOL)?;
    if gap > 0.0 {
        warn!("input asymmetric by {gap:e}; symmetrized by averaging");
    }
    Ok(m)
}

fn parse_csv_dense(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut last_line = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        last_line = line;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, f)| parse_number(f, line, j + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    line,
                    row.len().min(first.len()) + 1,
                    format!("row has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    if nrows == 0 {
        return Err(parse_err(1, 1, "empty matrix"));
    }
    let ncols = rows[0].len();
    if nrows != ncols {
        return Err(parse_err(
            last_line,
            ncols,
            format!("matrix is not square: {nrows} rows vs {ncols} columns"),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
    let banner: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if banner.len() != 5 || banner[0] != "%%matrixmarket" || banner[1] != "matrix" {
        return Err(parse_err(1, 1, "expected '%%MatrixMarket matrix array <field> <symmetry>'"));
    }
    if banner[2] != "array" {
        return Err(parse_err(1, 1, format!("unsupported format '{}', only 'array'", banner[2])));
    }
    if !matches!(banner[3].as_str(), "real" | "double" | "integer") {
        return Err(parse_err(1, 1, format!("unsupported field '{}'", banner[3])));
    }
    let symmetric = match banner[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, 1, format!("unsupported symmetry '{other}'"))),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or_else(|| parse_err(2, 1, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(size_line, 1, "size line must be 'rows cols'"));
    }
    let parse_dim = |tok: &str, col: usize| -> Result<usize> {
        tok.parse()
            .map_err(|_| parse_err(size_line, col, format!("bad dimension '{tok}'")))
    };
    let (m, n) = (parse_dim(dims[0], 1)?, parse_dim(dims[1], 2)?);
    if m != n || m == 0 {
        return Err(parse_err(
            size_line,
            1,
            format!("matrix is not square: {m} rows vs {n} columns"),
        ));
    }

    // Column-major; the symmetric variant stores only the lower triangle.
    let slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (if symmetric { j } else { 0 }..m).map(move |i| (i, j)))
        .collect();
    let mut out = DMatrix::zeros(m, n);
    let mut filled = 0;
    for (line, content) in body {
        for tok in content.split_whitespace() {
            let Some(&(i, j)) = slots.get(filled) else {
                return Err(parse_err(line, 1, format!("more than {} values", slots.len())));
            };
            let v = parse_number(tok, line, 1)?;
            out[(i, j)] = v;
            if symmetric {
                out[(j, i)] = v;
            }
            filled += 1;
        }
    }
    if filled != slots.len() {
        return Err(parse_err(
            text.lines().count(),
            1,
            format!("expected {} values, found {filled}", slots.len()),
        ));
    }
    Ok(out)
}

/// Formats with 17 significant digits, which round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv_string(m: &SymMatrix) -> String {
    let p = m.dim();
    let mut s = String::new();
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| fmt_f64(m.get(i, j))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn to_matrix_market_string(m: &SymMatrix) -> String {
    let p = m.dim();
    let mut s = String::from("%%MatrixMarket matrix array real symmetric\n");
    let _ = writeln!(s, "{p} {p}");
    for j in 0..p {
        for i in j..p {
            let _ = writeln!(s, "{}", fmt_f64(m.get(i, j)));
        }
    }
    s
}

pub fn write_matrix(path: &Path, m: &SymMatrix, format: MatrixFormat) -> Result<()> {
    let text = match format {
        MatrixFormat::CsvDense => to_csv_string(m),
        MatrixFormat::MatrixMarketArray => to_matrix_market_string(m),
    };
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_two_by_two() {
        let m = parse_matrix_str("1,2\n2,3\n", MatrixFormat::CsvDense).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn csv_non_square_names_both_sizes() {
        let err = parse_matrix_str("1,2,3\n4,5,6\n", MatrixFormat::CsvDense).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(msg.contains("2 rows vs 3 columns"), "{msg}");
    }

    #[test]
    fn csv_bad_token_position() {
        let err = parse_matrix_str("1,2\n2,x\n", MatrixFormat::CsvDense).unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                column: 2,
                message: "not a number: 'x'".into()
            }
        );
    }

    #[test]
    fn csv_ragged_row() {
        let err = parse_matrix_str("1,2\n2\n", MatrixFormat::CsvDense).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn asymmetry_beyond_tol_rejected_with_pair() {
        let err = parse_matrix_str("1,2,0\n2,1,0\n0,0.001,1\n", MatrixFormat::CsvDense).unwrap_err();
        match err {
            Error::NotSymmetric { row, col, gap } => {
                assert_eq!((row.min(col), row.max(col)), (1, 2));
                assert!((gap - 1e-3).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tiny_asymmetry_averaged() {
        let m = parse_matrix_str("1,2\n2.00000000001,3\n", MatrixFormat::CsvDense).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!((m.get(0, 1) - 2.000000000005).abs() < 1e-15);
    }

    #[test]
    fn matrix_market_general_and_symmetric() {
        let general = "%%MatrixMarket matrix array real general\n% c\n2 2\n1\n2\n2\n3\n";
        let sym = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n";
        let a = parse_matrix_str(general, MatrixFormat::MatrixMarketArray).unwrap();
        let b = parse_matrix_str(sym, MatrixFormat::MatrixMarketArray).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_rows(), vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn matrix_market_count_and_banner_errors() {
        let short = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n";
        assert!(parse_matrix_str(short, MatrixFormat::MatrixMarketArray).is_err());
        let coord = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n";
        assert!(parse_matrix_str(coord, MatrixFormat::MatrixMarketArray).is_err());
        let rect = "%%MatrixMarket matrix array real general\n2 3\n1\n2\n3\n4\n5\n6\n";
        let msg = parse_matrix_str(rect, MatrixFormat::MatrixMarketArray)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("2 rows vs 3 columns"));
    }

    #[test]
    fn round_trip_both_formats() {
        let m = SymMatrix::from_lower_fn(4, |i, j| ((i * 7 + j * 3) as f64).sin() / 3.0 + 1e-17 * i as f64)
            .unwrap();
        for fmt in [MatrixFormat::CsvDense, MatrixFormat::MatrixMarketArray] {
            let text = match fmt {
                MatrixFormat::CsvDense => to_csv_string(&m),
                MatrixFormat::MatrixMarketArray => to_matrix_market_string(&m),
            };
            let back = parse_matrix_str(&text, fmt).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(MatrixFormat::from_path(Path::new("a.MTX")), MatrixFormat::MatrixMarketArray);
        assert_eq!(MatrixFormat::from_path(Path::new("a.csv")), MatrixFormat::CsvDense);
    }
}

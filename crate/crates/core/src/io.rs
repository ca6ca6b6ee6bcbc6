//! Matrix CSV files: one row per line, no column header, 17 significant
//! digits. Lines starting with `#` carry `key=value` metadata and are
//! skipped by the reader.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Formats a value so that parsing it back yields the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a `# k=v k=v` comment line (without trailing newline).
pub fn comment_line(meta: &[(&str, String)]) -> String {
    let mut s = String::from("#");
    for (k, v) in meta {
        let _ = write!(s, " {k}={v}");
    }
    s
}

pub fn matrix_to_csv(m: &DMatrix<f64>, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    if !meta.is_empty() {
        out.push_str(&comment_line(meta));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, meta: &[(&str, String)]) -> Result<()> {
    fs::write(path, matrix_to_csv(m, meta)).map_err(|e| Error::io(path, e))
}

/// Writes a vector as a single column.
pub fn write_column(path: &Path, v: &[f64], meta: &[(&str, String)]) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v), meta)
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("bad number {:?}: {e}", f.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

/// Reads a single-column (or single-row) file as a flat vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() > 1 && m.nrows() > 1 {
        return Err(Error::Dimension(format!(
            "{}: expected a vector, found {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.iter().copied().collect())
}

/// Parses `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..40), ncols in 1usize..5) {
            let nrows = vals.len() / ncols;
            prop_assume!(nrows > 0);
            let m = DMatrix::from_fn(nrows, ncols, |i, j| vals[i * ncols + j]);
            let text = matrix_to_csv(&m, &[("seed", "1".into())]);
            let back = parse_matrix(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = parse_matrix("1,2\n3\n", Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn key_values_skip_comments() {
        let kv = parse_key_values("# hi\nkappa=3.5\n\n beta = 0.1 \n");
        assert_eq!(kv, vec![("kappa".into(), "3.5".into()), ("beta".into(), "0.1".into())]);
    }
}

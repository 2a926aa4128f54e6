//! Plain-text matrix format: first line `N`, then `N` lines of `N` whitespace-separated
//! decimal values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;
use crate::scalar::Scalar;

/// Relative asymmetry accepted by the loader when not symmetrizing.
pub const ASYMMETRY_TOL: f64 = 1e-9;

pub fn parse_matrix<T: Scalar>(text: &str, symmetrize: bool) -> Result<SymmetricMatrix<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (first, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let n: usize = header.trim().parse().map_err(|_| Error::Parse {
        line: first + 1,
        msg: format!("expected dimension, got {:?}", header.trim()),
    })?;
    if n < 2 {
        return Err(Error::Parse {
            line: first + 1,
            msg: format!("dimension {n} < 2"),
        });
    }
    let mut raw = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (idx, line) = lines.next().ok_or(Error::Parse {
            line: first + 2 + raw.len() / n,
            msg: "missing row".into(),
        })?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad number {tok:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {n} values, got {}", row.len()),
            });
        }
        raw.extend(row);
    }
    if let Some((idx, _)) = lines.next() {
        return Err(Error::Parse {
            line: idx + 1,
            msg: "trailing data".into(),
        });
    }
    if !symmetrize {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n {
            for j in i + 1..n {
                let d = (raw[i * n + j] - raw[j * n + i]).abs();
                if d > ASYMMETRY_TOL * norm.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetric at ({i}, {j}): |Δ| = {d:e}; pass --symmetrize to average"
                    )));
                }
            }
        }
    }
    SymmetricMatrix::from_fn(n, |i, j| T::lit(0.5 * (raw[i * n + j] + raw[j * n + i])))
}

/// Writes values with the shortest decimal representation that round-trips.
pub fn format_matrix<T: Scalar>(m: &SymmetricMatrix<T>) -> String {
    let mut out = format!("{}\n", m.n());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_matrix<T: Scalar>(path: &Path, symmetrize: bool) -> Result<SymmetricMatrix<T>> {
    parse_matrix(&fs::read_to_string(path)?, symmetrize)
}

pub fn write_matrix<T: Scalar>(path: &Path, m: &SymmetricMatrix<T>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

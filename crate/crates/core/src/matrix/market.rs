//! MatrixMarket reader and writer for real matrices.
//!
//! Supports `coordinate` (sparse) and `array` (dense) layouts with `general`
//! or `symmetric` symmetry. Values are written with 17 significant digits so
//! a write/read round trip reproduces every `f64` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DenseMatrix, Factor, SparseMatrix};
use crate::error::{Error, Result};

/// Largest matrix (rows * cols for arrays, stored entries for coordinates)
/// the reader accepts.
pub const MAX_ENTRIES: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

pub fn read(path: impl AsRef<Path>) -> Result<Factor> {
    let file = File::open(path)?;
    read_from(BufReader::new(file))
}

/// Reads a matrix; coordinate files become sparse, array files dense.
pub fn read_from<R: BufRead>(reader: R) -> Result<Factor> {
    let mut lines = reader.lines().enumerate();
    let (lineno, banner) = match lines.next() {
        Some((i, l)) => (i + 1, l?),
        None => return Err(parse(1, "empty file")),
    };
    let tokens: Vec<String> = banner.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse(lineno, "expected '%%MatrixMarket matrix <layout> real <symmetry>'"));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(parse(lineno, format!("unsupported layout '{other}'"))),
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse(lineno, format!("unsupported field '{}'", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse(lineno, format!("unsupported symmetry '{other}'"))),
    };

    let mut data = lines.filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('%') => None,
        Ok(s) => Some(Ok((i + 1, s))),
        Err(e) => Some(Err(e)),
    });
    let (size_line, size) = data.next().ok_or_else(|| parse(lineno + 1, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse(size_line, format!("bad size line: {e}")))?;

    match layout {
        Layout::Coordinate => {
            if dims.len() != 3 {
                return Err(parse(size_line, "coordinate size line needs 'rows cols entries'"));
            }
            let (rows, cols, entries) = (dims[0], dims[1], dims[2]);
            if entries > MAX_ENTRIES || rows.checked_mul(cols).is_none() {
                return Err(Error::Capacity(format!("{rows}x{cols} with {entries} entries")));
            }
            let mut triplets = Vec::with_capacity(if symmetric { 2 * entries } else { entries });
            for _ in 0..entries {
                let (ln, line) = data
                    .next()
                    .ok_or_else(|| parse(size_line, "fewer entries than declared"))??;
                let mut it = line.split_whitespace();
                let i = index(it.next(), rows, ln)?;
                let j = index(it.next(), cols, ln)?;
                let v = value(it.next(), ln)?;
                triplets.push((i, j, v));
                if symmetric && i != j {
                    triplets.push((j, i, v));
                }
            }
            if let Some(extra) = data.next() {
                let (ln, _) = extra?;
                return Err(parse(ln, "more entries than declared"));
            }
            Ok(Factor::Sparse(SparseMatrix::from_triplets(rows, cols, &triplets)?))
        }
        Layout::Array => {
            if dims.len() != 2 {
                return Err(parse(size_line, "array size line needs 'rows cols'"));
            }
            let (rows, cols) = (dims[0], dims[1]);
            let total = rows
                .checked_mul(cols)
                .filter(|&t| t <= MAX_ENTRIES)
                .ok_or_else(|| Error::Capacity(format!("{rows}x{cols} array")))?;
            let mut out = DenseMatrix::zeros(rows, cols);
            if symmetric {
                if rows != cols {
                    return Err(parse(size_line, "symmetric array must be square"));
                }
                for j in 0..cols {
                    for i in j..rows {
                        let (ln, line) = data.next().ok_or_else(|| parse(size_line, "too few values"))??;
                        let v = value(line.split_whitespace().next(), ln)?;
                        out[(i, j)] = v;
                        out[(j, i)] = v;
                    }
                }
            } else {
                let slice = out.as_mut_slice();
                for slot in slice.iter_mut().take(total) {
                    let (ln, line) = data.next().ok_or_else(|| parse(size_line, "too few values"))??;
                    *slot = value(line.split_whitespace().next(), ln)?;
                }
            }
            if let Some(extra) = data.next() {
                let (ln, _) = extra?;
                return Err(parse(ln, "more values than declared"));
            }
            Ok(Factor::Dense(out))
        }
    }
}

/// Writes sparse factors in coordinate layout and dense ones in array layout.
pub fn write(path: impl AsRef<Path>, matrix: &Factor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, matrix)?;
    w.flush()?;
    Ok(())
}

pub fn write_to<W: Write>(w: &mut W, matrix: &Factor) -> Result<()> {
    match matrix {
        Factor::Sparse(s) => write_sparse(w, s),
        Factor::Dense(d) => write_dense(w, d),
    }
}

pub fn write_sparse<W: Write>(w: &mut W, s: &SparseMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", s.rows(), s.cols(), s.nnz())?;
    for (i, j, v) in s.triplets() {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn write_dense<W: Write>(w: &mut W, d: &DenseMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} {}", d.nrows(), d.ncols())?;
    for v in d.as_slice() {
        writeln!(w, "{v:.16e}")?;
    }
    Ok(())
}

fn parse(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn index(tok: Option<&str>, bound: usize, line: usize) -> Result<usize> {
    let t = tok.ok_or_else(|| parse(line, "missing index"))?;
    let i: usize = t.parse().map_err(|_| parse(line, format!("bad index '{t}'")))?;
    if i == 0 || i > bound {
        return Err(parse(line, format!("index {i} outside 1..={bound}")));
    }
    Ok(i - 1)
}

fn value(tok: Option<&str>, line: usize) -> Result<f64> {
    let t = tok.ok_or_else(|| parse(line, "missing value"))?;
    let v: f64 = t.parse().map_err(|_| parse(line, format!("bad value '{t}'")))?;
    if !v.is_finite() {
        return Err(parse(line, format!("non-finite value '{t}'")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(f: &Factor) -> Factor {
        let mut buf = Vec::new();
        write_to(&mut buf, f).unwrap();
        read_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let i3 = Factor::identity(3);
        match round_trip(&i3) {
            Factor::Sparse(s) => {
                assert_eq!(s.nnz(), 3);
                assert!(s.values().iter().all(|&v| v == 1.0));
            }
            Factor::Dense(_) => panic!("coordinate file must read as sparse"),
        }
    }

    #[test]
    fn reads_two_entry_coordinate_file() {
        let text = "%%MatrixMarket matrix coordinate real general\n% comment\n3 3 2\n1 1 2.5\n3 2 -1\n";
        let f = read_from(text.as_bytes()).unwrap();
        let s = f.to_sparse();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.get(2, 1), -1.0);
    }

    #[test]
    fn symmetric_coordinate_expands() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n2 1 3\n";
        let d = read_from(text.as_bytes()).unwrap().to_dense();
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(d[(1, 0)], 3.0);
    }

    #[test]
    fn dense_round_trip_is_bitwise() {
        let d = DenseMatrix::from_fn(4, 3, |i, j| ((i * 7 + j) as f64).sin() / 3.0);
        let back = round_trip(&Factor::Dense(d.clone())).to_dense();
        assert_eq!(back, d);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 x 2.0\n";
        match read_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let bad_banner = "%%MatrixMarket vector coordinate real general\n";
        assert!(matches!(read_from(bad_banner.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let out_of_range = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n";
        assert!(matches!(read_from(out_of_range.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn overflowing_dimensions_are_rejected() {
        let text = format!(
            "%%MatrixMarket matrix array real general\n{} {}\n",
            usize::MAX / 2,
            4
        );
        assert!(matches!(read_from(text.as_bytes()), Err(Error::Capacity(_))));
    }
}

//! MatrixMarket reader and writer (coordinate and array layouts, real,
//! complex, integer and pattern fields, general and symmetric variants).

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{c64, re, CMat, Field, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Real,
    Complex,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
    Hermitian,
}

/// A parsed matrix. Coordinate files also keep the positions they listed.
#[derive(Debug, Clone, PartialEq)]
pub struct MmMatrix {
    pub dense: CMat,
    /// Listed positions in file order (mirrored entries included), or `None`
    /// for array files.
    pub pattern: Option<Vec<(usize, usize)>>,
    /// `Complex` iff the file declares a complex field.
    pub field: Field,
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    peeked: Option<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines { path, inner: text.lines().enumerate(), peeked: None }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line, message: message.into() }
    }

    fn next_raw(&mut self) -> Option<(usize, &'a str)> {
        self.peeked.take().or_else(|| self.inner.next().map(|(i, l)| (i + 1, l)))
    }

    /// Next line that is neither blank nor a `%` comment, but stops at a
    /// `%%MatrixMarket` banner.
    fn next_data(&mut self) -> Option<(usize, &'a str)> {
        while let Some((n, l)) = self.next_raw() {
            let t = l.trim();
            if t.starts_with("%%MatrixMarket") {
                self.peeked = Some((n, l));
                return None;
            }
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            return Some((n, t));
        }
        None
    }

    fn next_banner(&mut self) -> Option<(usize, &'a str)> {
        while let Some((n, l)) = self.next_raw() {
            let t = l.trim();
            if t.is_empty() {
                continue;
            }
            return Some((n, t));
        }
        None
    }
}

fn parse_banner(lines: &Lines, n: usize, banner: &str) -> Result<(Layout, ValueKind, Symmetry)> {
    let words: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(lines.err(n, format!("expected '%%MatrixMarket matrix <layout> <field> <symmetry>', got '{banner}'")));
    }
    let layout = match words[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(lines.err(n, format!("unknown layout '{other}'"))),
    };
    let kind = match words[3].as_str() {
        "real" | "integer" | "double" => ValueKind::Real,
        "complex" => ValueKind::Complex,
        "pattern" if layout == Layout::Coordinate => ValueKind::Pattern,
        other => return Err(lines.err(n, format!("unsupported field '{other}'"))),
    };
    let sym = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        "hermitian" if kind == ValueKind::Complex => Symmetry::Hermitian,
        other => return Err(lines.err(n, format!("unsupported symmetry '{other}'"))),
    };
    Ok((layout, kind, sym))
}

fn parse_numbers<T: std::str::FromStr>(lines: &Lines, n: usize, text: &str, what: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|w| w.parse::<T>().map_err(|_| lines.err(n, format!("cannot parse {what} '{w}'"))))
        .collect()
}

fn value_from(lines: &Lines, n: usize, kind: ValueKind, nums: &[f64]) -> Result<C64> {
    let z = match (kind, nums) {
        (ValueKind::Pattern, []) => re(1.0),
        (ValueKind::Real, [x]) => re(*x),
        (ValueKind::Complex, [x, y]) => c64(*x, *y),
        _ => return Err(lines.err(n, format!("wrong number of values for a {kind:?} entry"))),
    };
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(lines.err(n, "non-finite value"));
    }
    Ok(z)
}

fn mirror(sym: Symmetry, z: C64) -> Option<C64> {
    match sym {
        Symmetry::General => None,
        Symmetry::Symmetric => Some(z),
        Symmetry::SkewSymmetric => Some(-z),
        Symmetry::Hermitian => Some(z.conj()),
    }
}

fn parse_one(lines: &mut Lines) -> Result<Option<MmMatrix>> {
    let Some((bn, banner)) = lines.next_banner() else {
        return Ok(None);
    };
    let (layout, kind, sym) = parse_banner(lines, bn, banner)?;
    let (sn, size_line) = lines.next_data().ok_or_else(|| lines.err(bn, "missing size line"))?;
    let size: Vec<usize> = parse_numbers(lines, sn, size_line, "size")?;
    let field = if kind == ValueKind::Complex { Field::Complex } else { Field::Real };
    match layout {
        Layout::Coordinate => {
            let [rows, cols, nnz] = size[..] else {
                return Err(lines.err(sn, "coordinate size line needs 'rows cols entries'"));
            };
            if sym != Symmetry::General && rows != cols {
                return Err(lines.err(sn, "symmetric storage needs a square matrix"));
            }
            let mut dense = CMat::zeros(rows, cols);
            let mut pattern = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let (n, l) = lines.next_data().ok_or_else(|| lines.err(sn, format!("expected {nnz} entries, file ended early")))?;
                let mut words = l.split_whitespace();
                let mut index = |what: &str| -> Result<usize> {
                    let w = words.next().ok_or_else(|| lines.err(n, format!("missing {what} index")))?;
                    w.parse::<usize>().map_err(|_| lines.err(n, format!("cannot parse {what} index '{w}'")))
                };
                let (i, j) = (index("row")?, index("column")?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(lines.err(n, format!("entry ({i}, {j}) outside {rows}x{cols}")));
                }
                let rest: Vec<f64> = parse_numbers(lines, n, &words.collect::<Vec<_>>().join(" "), "value")?;
                let z = value_from(lines, n, kind, &rest)?;
                let (i, j) = (i - 1, j - 1);
                dense[(i, j)] += z;
                pattern.push((i, j));
                if i != j {
                    if let Some(w) = mirror(sym, z) {
                        dense[(j, i)] += w;
                        pattern.push((j, i));
                    }
                }
            }
            Ok(Some(MmMatrix { dense, pattern: Some(pattern), field }))
        }
        Layout::Array => {
            let [rows, cols] = size[..] else {
                return Err(lines.err(sn, "array size line needs 'rows cols'"));
            };
            if sym != Symmetry::General && rows != cols {
                return Err(lines.err(sn, "symmetric storage needs a square matrix"));
            }
            let mut dense = CMat::zeros(rows, cols);
            // column-major; symmetric variants list the lower triangle only
            let positions: Vec<(usize, usize)> = (0..cols)
                .flat_map(|j| (0..rows).map(move |i| (i, j)))
                .filter(|&(i, j)| match sym {
                    Symmetry::General => true,
                    Symmetry::SkewSymmetric => i > j,
                    _ => i >= j,
                })
                .collect();
            let total = positions.len();
            for (count, (i, j)) in positions.into_iter().enumerate() {
                let (n, l) = lines
                    .next_data()
                    .ok_or_else(|| lines.err(sn, format!("expected {total} values, found {count}")))?;
                let nums: Vec<f64> = parse_numbers(lines, n, l, "value")?;
                let z = value_from(lines, n, kind, &nums)?;
                dense[(i, j)] = z;
                if i != j {
                    if let Some(w) = mirror(sym, z) {
                        dense[(j, i)] = w;
                    }
                }
            }
            Ok(Some(MmMatrix { dense, pattern: None, field }))
        }
    }
}

fn ensure_consumed(lines: &mut Lines) -> Result<()> {
    if let Some((n, _)) = lines.next_data() {
        return Err(lines.err(n, "more entries than the size line declares"));
    }
    Ok(())
}

/// Parses a single matrix from `text`; `path` is only used in messages.
pub fn parse_matrix(text: &str, path: &Path) -> Result<MmMatrix> {
    let mut lines = Lines::new(path, text);
    let m = parse_one(&mut lines)?.ok_or_else(|| lines.err(1, "empty file"))?;
    ensure_consumed(&mut lines)?;
    if let Some((n, _)) = lines.next_banner() {
        return Err(lines.err(n, "file holds more than one matrix"));
    }
    Ok(m)
}

/// Parses concatenated matrices, each starting with its own banner.
pub fn parse_matrices(text: &str, path: &Path) -> Result<Vec<MmMatrix>> {
    let mut lines = Lines::new(path, text);
    let mut out = Vec::new();
    while let Some(m) = parse_one(&mut lines)? {
        ensure_consumed(&mut lines)?;
        out.push(m);
    }
    if out.is_empty() {
        return Err(lines.err(1, "no matrices found"));
    }
    Ok(out)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_matrix(path: &Path) -> Result<MmMatrix> {
    parse_matrix(&read_text(path)?, path)
}

fn push_value(out: &mut String, z: C64, field: Field) {
    match field {
        Field::Real => out.push_str(&format!("{:e}", z.re)),
        Field::Complex => out.push_str(&format!("{:e} {:e}", z.re, z.im)),
    }
}

fn field_name(field: Field) -> &'static str {
    match field {
        Field::Real => "real",
        Field::Complex => "complex",
    }
}

/// Dense array layout. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn write_array(m: &CMat, field: Field) -> String {
    let mut out = format!("%%MatrixMarket matrix array {} general\n{} {}\n", field_name(field), m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            push_value(&mut out, m[(i, j)], field);
            out.push('\n');
        }
    }
    out
}

/// Coordinate layout listing the nonzero entries column by column.
pub fn write_coordinate(m: &CMat, field: Field) -> String {
    let entries: Vec<(usize, usize)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter(|&(i, j)| m[(i, j)] != re(0.0))
        .collect();
    let mut out = format!(
        "%%MatrixMarket matrix coordinate {} general\n{} {} {}\n",
        field_name(field),
        m.nrows(),
        m.ncols(),
        entries.len()
    );
    for (i, j) in entries {
        out.push_str(&format!("{} {} ", i + 1, j + 1));
        push_value(&mut out, m[(i, j)], field);
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &CMat, field: Field) -> Result<()> {
    std::fs::write(path, write_array(m, field)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

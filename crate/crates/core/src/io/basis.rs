//! Perturbation bases from files: concatenated MatrixMarket blocks or a JSON
//! array of dense blocks (rows of numbers or `[re, im]` pairs).

use std::path::Path;

use serde_json::Value;

use super::matrix_market::{parse_matrices, read_text};
use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, Field, C64};
use crate::oracle::PerturbationBasis;

fn json_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line: 0, message: message.into() }
}

fn json_scalar(path: &Path, block: usize, v: &Value) -> Result<C64> {
    let num = |x: &Value| x.as_f64().ok_or_else(|| json_err(path, format!("block {block}: expected a number, got {x}")));
    match v {
        Value::Array(pair) if pair.len() == 2 => Ok(c64(num(&pair[0])?, num(&pair[1])?)),
        other => Ok(c64(num(other)?, 0.0)),
    }
}

fn parse_json_blocks(text: &str, path: &Path) -> Result<Vec<CMat>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let blocks = root.as_array().ok_or_else(|| json_err(path, "expected an array of blocks"))?;
    let mut out = Vec::with_capacity(blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        let rows = block.as_array().ok_or_else(|| json_err(path, format!("block {b} is not an array of rows")))?;
        let width = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
        if rows.is_empty() || width == 0 {
            return Err(json_err(path, format!("block {b} is empty")));
        }
        let mut m = CMat::zeros(rows.len(), width);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_array().filter(|r| r.len() == width).ok_or_else(|| {
                json_err(path, format!("block {b}, row {i}: expected {width} entries"))
            })?;
            for (j, x) in row.iter().enumerate() {
                m[(i, j)] = json_scalar(path, b, x)?;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// Reads the blocks without orthonormalizing them.
pub fn read_blocks(path: &Path) -> Result<Vec<CMat>> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        parse_json_blocks(&text, path)
    } else {
        Ok(parse_matrices(&text, path)?.into_iter().map(|m| m.dense).collect())
    }
}

/// Orthonormalizes if needed; [`PerturbationBasis::was_reorthonormalized`]
/// tells whether the given blocks were changed.
pub fn read_basis(path: &Path, field: Field) -> Result<PerturbationBasis> {
    let blocks = read_blocks(path)?;
    let (rows, cols) = blocks[0].shape();
    PerturbationBasis::new(rows, cols, field, &blocks)
}

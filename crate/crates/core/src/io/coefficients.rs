//! Plain-text scalar polynomials.

use std::path::Path;

use super::matrix_market::read_text;
use crate::error::{Error, Result};
use crate::linalg::{c64, CVec};

/// Plain-text coefficient list, lowest degree first: one coefficient per
/// line, either `re` or `re im`. Blank lines and `#` comments are skipped.
pub fn parse_coefficients(text: &str, path: &Path) -> Result<CVec> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        let nums = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| err(format!("cannot parse coefficient '{w}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let z = match nums[..] {
            [x] => c64(x, 0.0),
            [x, y] => c64(x, y),
            _ => return Err(err("expected 're' or 're im'".into())),
        };
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(err("non-finite coefficient".into()));
        }
        out.push(z);
    }
    if out.is_empty() {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, message: "no coefficients".into() });
    }
    Ok(CVec::from_vec(out))
}

pub fn read_coefficients(path: &Path) -> Result<CVec> {
    parse_coefficients(&read_text(path)?, path)
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `log(f / (1 − f))` for a fractional amplitude `f ∈ (0, 1)`.
pub fn logit_falff(f: f64) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(invalid(format!("fALFF value must lie in (0, 1), got {f}")));
    }
    Ok((f / (1.0 - f)).ln())
}

/// Per-column preprocessing of a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnScaling {
    /// Leave untouched (e.g. the intercept or a group indicator).
    None,
    /// Subtract the column mean.
    Center,
    /// Subtract the mean and divide by the sample standard deviation.
    Scale,
}

pub fn standardize(x: &DMatrix<f64>, spec: &[ColumnScaling]) -> Result<DMatrix<f64>> {
    if spec.len() != x.ncols() {
        return Err(invalid(format!(
            "{} scaling entries for {} columns",
            spec.len(),
            x.ncols()
        )));
    }
    let m = x.nrows();
    let mut out = x.clone();
    for (k, s) in spec.iter().enumerate() {
        if *s == ColumnScaling::None {
            continue;
        }
        let mean = x.column(k).sum() / m as f64;
        let mut col = x.column(k).add_scalar(-mean);
        if *s == ColumnScaling::Scale {
            if m < 2 {
                return Err(invalid("scaling needs at least two rows"));
            }
            let sd = (col.norm_squared() / (m - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return Err(invalid(format!("column {k} has zero variance and cannot be scaled")));
            }
            col /= sd;
        }
        out.set_column(k, &col);
    }
    Ok(out)
}

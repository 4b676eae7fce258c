use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A set of `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be positive"));
        }
        if coords.len() % dim != 0 {
            return Err(invalid(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("ragged point rows"));
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Subset of points in the given order.
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Points { dim: self.dim, coords }
    }

    /// Regular grid with `per_side` points per axis spanning `[0, 1]^dim`.
    ///
    /// The first coordinate varies fastest.
    pub fn unit_grid(dim: usize, per_side: usize) -> Result<Self> {
        if dim == 0 || per_side == 0 {
            return Err(invalid("grid dimension and resolution must be positive"));
        }
        let step = if per_side > 1 { 1.0 / (per_side - 1) as f64 } else { 0.0 };
        let n = per_side.pow(dim as u32);
        let mut coords = Vec::with_capacity(n * dim);
        for flat in 0..n {
            let mut rem = flat;
            for _ in 0..dim {
                coords.push((rem % per_side) as f64 * step);
                rem /= per_side;
            }
        }
        Self::new(dim, coords)
    }
}

pub(crate) fn sq_norm(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum()
}

pub(crate) fn sq_dist(s: &[f64], t: &[f64]) -> f64 {
    s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
}

//! Spatial domain, data containers and ground truth, plus synthetic data
//! generation and ingestion transforms.

mod io;
mod simulate;
mod transform;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

pub use io::{read_dataset, write_dataset, DatasetMeta};
pub use simulate::{simulate, CovariateDist, FieldComponent, FieldShape, SimSpec};
pub use transform::{logit_falff, standardize, ColumnScaling};

/// Locations together with a partition into regions `R_1..R_G`.
///
/// Region labels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub locations: Points,
    pub region_labels: Vec<usize>,
    pub n_regions: usize,
}

impl SpatialDomain {
    pub fn new(locations: Points, region_labels: Vec<usize>) -> Result<Self> {
        let n_regions = region_labels.iter().copied().max().unwrap_or(0);
        let dom = Self {
            locations,
            region_labels,
            n_regions,
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.locations.len();
        if n == 0 {
            return Err(Error::Validation("domain has no locations".into()));
        }
        if self.region_labels.len() != n {
            return Err(Error::Shape(format!(
                "{} region labels for {n} locations",
                self.region_labels.len()
            )));
        }
        let mut seen = vec![false; self.n_regions];
        for (i, &g) in self.region_labels.iter().enumerate() {
            if g == 0 || g > self.n_regions {
                return Err(Error::Validation(format!(
                    "location {i} has region label {g} outside 1..={}",
                    self.n_regions
                )));
            }
            seen[g - 1] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("region {} has no locations", g + 1)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            self.locations
                .point(i)
                .partial_cmp(self.locations.point(j))
                .expect("finite coordinates")
        });
        if order
            .windows(2)
            .any(|w| self.locations.point(w[0]) == self.locations.point(w[1]))
        {
            return Err(Error::Validation("duplicate locations".into()));
        }
        Ok(())
    }

    /// Regular grid on `[0,1]^d` split into `splits` equal blocks per axis.
    pub fn unit_grid(dim: usize, per_side: usize, splits: usize) -> Result<Self> {
        if splits == 0 {
            return Err(Error::InvalidArgument("region splits must be positive".into()));
        }
        let locations = Points::unit_grid(dim, per_side)?;
        let labels = locations
            .iter()
            .map(|s| {
                let mut label = 0;
                let mut stride = 1;
                for &x in s {
                    let cell = ((x * splits as f64).floor() as usize).min(splits - 1);
                    label += cell * stride;
                    stride *= splits;
                }
                label + 1
            })
            .collect();
        Self::new(locations, labels)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations.dim()
    }

    /// Member indices of each region, in location order (index `g` is region `g+1`).
    pub fn region_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_regions];
        for (i, &g) in self.region_labels.iter().enumerate() {
            out[g - 1].push(i);
        }
        out
    }

    /// Region label (1-based) of the observed location closest to `s0`.
    pub fn nearest_region(&self, s0: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, s) in self.locations.iter().enumerate() {
            let d = crate::points::sq_dist(s, s0);
            if d < best.0 {
                best = (d, i);
            }
        }
        self.region_labels[best.1]
    }
}

/// Outcomes `Y` (m×n) and design `X` (m×p) observed on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub domain: SpatialDomain,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, domain: SpatialDomain) -> Result<Self> {
        let ds = Self { y, x, domain };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.y.ncols() != self.domain.len() {
            return Err(Error::Shape(format!(
                "Y has {} columns but the domain has {} locations",
                self.y.ncols(),
                self.domain.len()
            )));
        }
        if self.y.nrows() != self.x.nrows() {
            return Err(Error::Shape(format!(
                "Y has {} rows but X has {}",
                self.y.nrows(),
                self.x.nrows()
            )));
        }
        if self.y.iter().chain(self.x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite entry in Y or X".into()));
        }
        Ok(())
    }

    /// Number of subjects `m`.
    pub fn subjects(&self) -> usize {
        self.y.nrows()
    }

    /// Number of locations `n`.
    pub fn locations(&self) -> usize {
        self.y.ncols()
    }

    /// Number of covariates `p`.
    pub fn covariates(&self) -> usize {
        self.x.ncols()
    }
}

/// True coefficient fields used to score fits.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `p × n` matrix of `β_k(s_i)`.
    pub beta: DMatrix<f64>,
    pub sigma2: f64,
    /// Nonzero region labels per covariate.
    pub active_regions: Vec<Vec<usize>>,
    /// Configured lower bound `λ_0` on `|β_k|` over the active regions.
    pub floor: Vec<f64>,
}

impl GroundTruth {
    /// `min |β_k(s_i)|` over the nonzero locations, `None` if `β_k ≡ 0`.
    pub fn min_abs_nonzero(&self, k: usize) -> Option<f64> {
        self.beta
            .row(k)
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| v.abs())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
    }
}

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dataset, SpatialDomain};
use crate::csvio::{read_json, read_matrix, write_json, write_matrix};
use crate::error::{Error, Result};
use crate::points::Points;

/// Contents of `meta.json` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Write `X.csv`, `Y.csv`, `locations.csv`, `regions.csv`, optional
/// `truth.csv` and `meta.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    ds: &Dataset,
    truth: Option<&DMatrix<f64>>,
    sigma2: Option<f64>,
    seed: Option<u64>,
) -> Result<DatasetMeta> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("X.csv"), &ds.x)?;
    write_matrix(&dir.join("Y.csv"), &ds.y)?;
    let locs = &ds.domain.locations;
    let loc_m = DMatrix::from_fn(locs.len(), locs.dim(), |i, j| locs.point(i)[j]);
    write_matrix(&dir.join("locations.csv"), &loc_m)?;
    let mut regions = String::new();
    for g in &ds.domain.region_labels {
        regions.push_str(&g.to_string());
        regions.push('\n');
    }
    std::fs::write(dir.join("regions.csv"), regions)?;
    if let Some(t) = truth {
        if t.nrows() != ds.covariates() || t.ncols() != ds.locations() {
            return Err(Error::Shape("truth must be p × n".into()));
        }
        write_matrix(&dir.join("truth.csv"), t)?;
    }
    let meta = DatasetMeta {
        m: ds.subjects(),
        n: ds.locations(),
        p: ds.covariates(),
        d: ds.domain.dim(),
        g: ds.domain.n_regions,
        sigma2,
        seed,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

/// Load a dataset directory written by [`write_dataset`] (or by hand).
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Option<DMatrix<f64>>, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let x = read_matrix(&dir.join("X.csv"))?;
    let y = read_matrix(&dir.join("Y.csv"))?;
    let loc = read_matrix(&dir.join("locations.csv"))?;
    let reg = read_matrix(&dir.join("regions.csv"))?;
    let expect = |what: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!(
                "{what} is {}×{}, expected {}×{}",
                got.0, got.1, want.0, want.1
            )));
        }
        Ok(())
    };
    expect("X.csv", x.shape(), (meta.m, meta.p))?;
    expect("Y.csv", y.shape(), (meta.m, meta.n))?;
    expect("locations.csv", loc.shape(), (meta.n, meta.d))?;
    expect("regions.csv", reg.shape(), (meta.n, 1))?;
    let mut labels = Vec::with_capacity(meta.n);
    for (i, v) in reg.iter().enumerate() {
        if v.fract() != 0.0 || *v < 1.0 || *v > meta.g as f64 {
            return Err(Error::Validation(format!(
                "regions.csv row {}: label {v} outside 1..={}",
                i + 1,
                meta.g
            )));
        }
        labels.push(*v as usize);
    }
    let rows: Vec<Vec<f64>> = (0..meta.n).map(|i| loc.row(i).iter().copied().collect()).collect();
    let domain = SpatialDomain {
        locations: Points::from_rows(&rows)?,
        region_labels: labels,
        n_regions: meta.g,
    };
    let ds = Dataset::new(y, x, domain)?;
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        let t = read_matrix(&truth_path)?;
        expect("truth.csv", t.shape(), (meta.p, meta.n))?;
        Some(t)
    } else {
        None
    };
    Ok((ds, truth, meta))
}

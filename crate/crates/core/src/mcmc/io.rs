//! Chain directory layout: `manifest.json` plus one CSV per parameter,
//! one row per retained draw.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ChainOutput, ChainState, McmcConfig};
use crate::csvio::{read_json, read_matrix, write_json, write_matrix};
use crate::elicitation::LambdaPrior;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainManifest {
    pub p: usize,
    pub n: usize,
    pub basis_len: usize,
    pub draws: usize,
    pub config: McmcConfig,
    pub priors: Vec<LambdaPrior>,
    pub block_labels: Vec<usize>,
    pub beta_accept: Vec<Vec<f64>>,
    pub lambda_accept: Vec<f64>,
    pub final_sigma2: f64,
    pub final_model: usize,
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = rows.collect();
    DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c])
}

/// Row-major flattening: entry `(k, i)` goes to column `k·ncols + i`.
fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

fn unflatten(row: &[f64], nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(nrows, ncols, row)
}

pub fn write_chain(dir: &Path, out: &ChainOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let st = &out.final_state;
    let (p, n) = st.beta_tilde.shape();
    let l = st.u.ncols();
    let manifest = ChainManifest {
        p,
        n,
        basis_len: l,
        draws: out.n_draws(),
        config: out.config.clone(),
        priors: out.priors.clone(),
        block_labels: out.block_labels.clone(),
        beta_accept: out.beta_accept.clone(),
        lambda_accept: out.lambda_accept.clone(),
        final_sigma2: st.sigma2,
        final_model: st.model,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_matrix(&dir.join("beta_tilde.csv"), &stack(out.beta_tilde.iter().map(flatten), p * n))?;
    write_matrix(&dir.join("u.csv"), &stack(out.u.iter().map(flatten), p * l))?;
    write_matrix(&dir.join("lambda.csv"), &stack(out.lambda.iter().cloned(), p))?;
    write_matrix(&dir.join("sigma2.csv"), &stack(out.sigma2.iter().map(|v| vec![*v]), 1))?;
    write_matrix(&dir.join("tau2.csv"), &stack(out.tau2.iter().cloned(), p))?;
    write_matrix(&dir.join("b.csv"), &stack(out.b.iter().map(|v| vec![*v]), 1))?;
    Ok(())
}

fn rows(path: &Path, width: usize, draws: usize) -> Result<Vec<Vec<f64>>> {
    if draws == 0 {
        return Ok(Vec::new());
    }
    let m = read_matrix(path)?;
    if m.shape() != (draws, width) {
        return Err(Error::Validation(format!(
            "{} has shape {:?}, expected ({draws}, {width})",
            path.display(),
            m.shape()
        )));
    }
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Load a chain directory. The final state carries the last retained draw
/// and empty derived caches.
pub fn read_chain(dir: &Path) -> Result<ChainOutput> {
    let man: ChainManifest = read_json(&dir.join("manifest.json"))?;
    man.config.validate()?;
    let (p, n, l, d) = (man.p, man.n, man.basis_len, man.draws);
    let beta_tilde: Vec<DMatrix<f64>> = rows(&dir.join("beta_tilde.csv"), p * n, d)?
        .iter()
        .map(|r| unflatten(r, p, n))
        .collect();
    let u: Vec<DMatrix<f64>> = rows(&dir.join("u.csv"), p * l, d)?
        .iter()
        .map(|r| unflatten(r, p, l))
        .collect();
    let lambda = rows(&dir.join("lambda.csv"), p, d)?;
    let sigma2: Vec<f64> = rows(&dir.join("sigma2.csv"), 1, d)?.into_iter().map(|r| r[0]).collect();
    let tau2 = rows(&dir.join("tau2.csv"), p, d)?;
    let b: Vec<f64> = rows(&dir.join("b.csv"), 1, d)?.into_iter().map(|r| r[0]).collect();
    let final_state = ChainState {
        beta_tilde: beta_tilde.last().cloned().unwrap_or_else(|| DMatrix::zeros(p, n)),
        u: u.last().cloned().unwrap_or_else(|| DMatrix::zeros(p, l)),
        sigma2: man.final_sigma2,
        tau2: tau2.last().cloned().unwrap_or_else(|| vec![1.0; p]),
        lambda: lambda.last().cloned().unwrap_or_default(),
        model: man.final_model,
        beta: DMatrix::zeros(0, 0),
        global: DMatrix::zeros(0, 0),
    };
    Ok(ChainOutput {
        beta_tilde,
        u,
        lambda,
        sigma2,
        tau2,
        b,
        beta_accept: man.beta_accept,
        lambda_accept: man.lambda_accept,
        config: man.config,
        priors: man.priors,
        block_labels: man.block_labels,
        final_state,
    })
}

pub fn read_manifest(dir: &Path) -> Result<ChainManifest> {
    read_json(&dir.join("manifest.json"))
}

//! Voxelwise GLM competitors: per-location OLS with t-tests, and
//! naive, Benjamini–Hochberg and Bonferroni thresholding of the p-values.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::model::Dataset;

/// Per-location OLS fit, all matrices `p × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta_star: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub pvals: DMatrix<f64>,
    /// Residual degrees of freedom `m − p`.
    pub df: usize,
}

/// Fit `y(s_i) = X β(s_i) + e` independently at every location.
pub fn glm_fit(ds: &Dataset) -> Result<GlmFit> {
    ds.validate()?;
    let (m, p, n) = (ds.subjects(), ds.covariates(), ds.locations());
    if m <= p {
        return Err(Error::SingularDesign(format!("need m > p, got m = {m}, p = {p}")));
    }
    let xtx = ds.x.transpose() * &ds.x;
    let inv = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("XᵀX is not positive definite".into()))?
        .inverse();
    let beta_star = &inv * (ds.x.transpose() * &ds.y);
    let resid = &ds.y - &ds.x * &beta_star;
    let df = m - p;
    let tdist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut se = DMatrix::zeros(p, n);
    let mut t = DMatrix::zeros(p, n);
    let mut pvals = DMatrix::zeros(p, n);
    for i in 0..n {
        let s2 = resid.column(i).norm_squared() / df as f64;
        for k in 0..p {
            let e = (s2 * inv[(k, k)]).sqrt();
            se[(k, i)] = e;
            let b = beta_star[(k, i)];
            let (tv, pv) = if e > 0.0 {
                let tv = b / e;
                (tv, (2.0 * tdist.sf(tv.abs())).min(1.0))
            } else if b == 0.0 {
                (0.0, 1.0)
            } else {
                (b.signum() * f64::INFINITY, 0.0)
            };
            t[(k, i)] = tv;
            pvals[(k, i)] = pv;
        }
    }
    Ok(GlmFit {
        beta_star,
        se,
        t,
        pvals,
        df,
    })
}

/// Select where `p < alpha`.
pub fn threshold_naive_t(pvals: &[f64], alpha: f64) -> Vec<bool> {
    pvals.iter().map(|&p| p < alpha).collect()
}

/// Benjamini–Hochberg step-up selection at FDR `level`.
pub fn bh_fdr(pvals: &[f64], level: f64) -> Result<Vec<bool>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("FDR level must lie in (0, 1), got {level}")));
    }
    let n = pvals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| pvals[i] <= (rank + 1) as f64 * level / n as f64)
        .map(|(_, &i)| pvals[i])
        .last();
    Ok(match cutoff {
        Some(c) => pvals.iter().map(|&p| p <= c).collect(),
        None => vec![false; n],
    })
}

/// Bonferroni FWER control: select where `p ≤ level / n_tests`.
pub fn bonferroni(pvals: &[f64], level: f64) -> Vec<bool> {
    let cut = level / pvals.len().max(1) as f64;
    pvals.iter().map(|&p| p <= cut).collect()
}

/// Which p-value rule thresholds the GLM estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmMethod {
    /// Naive t-test, `p < level`.
    T,
    /// Benjamini–Hochberg.
    Fdr,
    /// Bonferroni (stand-in for random-field FWER control).
    Bonferroni,
}

impl GlmMethod {
    pub fn label(&self) -> &'static str {
        match self {
            GlmMethod::T => "GLM-t",
            GlmMethod::Fdr => "GLM-FDR",
            GlmMethod::Bonferroni => "GLM-Bonferroni",
        }
    }
}

/// `β̂*` on the selected entries and zero elsewhere, plus the `p × n` mask.
///
/// Each covariate map is corrected separately over its `n` tests.
pub fn thresholded_estimate(fit: &GlmFit, method: GlmMethod, level: f64) -> Result<(DMatrix<f64>, DMatrix<bool>)> {
    let (p, n) = fit.pvals.shape();
    let mut mask = DMatrix::from_element(p, n, false);
    for k in 0..p {
        let row: Vec<f64> = fit.pvals.row(k).iter().copied().collect();
        let sel = match method {
            GlmMethod::T => threshold_naive_t(&row, level),
            GlmMethod::Fdr => bh_fdr(&row, level)?,
            GlmMethod::Bonferroni => bonferroni(&row, level),
        };
        for (i, s) in sel.into_iter().enumerate() {
            mask[(k, i)] = s;
        }
    }
    let est = DMatrix::from_fn(p, n, |k, i| if mask[(k, i)] { fit.beta_star[(k, i)] } else { 0.0 });
    Ok((est, mask))
}

//! The thresholded multiscale Gaussian process prior.
//!
//! A draw is `β(s) = β̃(s)·I_λ[β̃(s)]` with `β̃ = γ + ε`, where `γ` is a
//! global GP represented through its truncated Karhunen–Loève expansion and
//! `ε` is a local GP that is independent across regions.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernel::{basis_matrix, gram, EigenSystem};
use crate::linalg::jittered_cholesky;
use crate::model::SpatialDomain;

/// How the threshold indicator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep a whole region iff `min_{s∈R_g} |β̃(s)| > λ`.
    #[default]
    Regional,
    /// Keep each location iff `|β̃(s)| > λ`.
    Voxel,
}

/// Prior parameters of one coefficient field.
#[derive(Debug, Clone, PartialEq)]
pub struct TmgpParams {
    pub tau2: f64,
    pub theta2: f64,
    pub lambda: f64,
    pub eig: EigenSystem,
}

impl TmgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 >= 0.0 && self.theta2 >= 0.0 && self.lambda >= 0.0) {
            return Err(invalid("TMGP variances and threshold must be nonnegative"));
        }
        Ok(())
    }
}

/// One prior draw on the observed locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcfDraw {
    pub beta_tilde: Vec<f64>,
    pub beta: Vec<f64>,
    pub kl_coeffs: Vec<f64>,
}

fn global_with(rng: &mut impl Rng, domain: &SpatialDomain, eig: &EigenSystem, tau2: f64) -> (Vec<f64>, Vec<f64>) {
    let coeffs: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|z| {
            let e: f64 = rng.sample(StandardNormal);
            (tau2 * z).sqrt() * e
        })
        .collect();
    let phi = basis_matrix(&domain.locations, eig);
    let values = phi * DVector::from_column_slice(&coeffs);
    (values.iter().copied().collect(), coeffs)
}

fn local_with(rng: &mut impl Rng, domain: &SpatialDomain, eig: &EigenSystem, theta2: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; domain.len()];
    if theta2 == 0.0 {
        return Ok(out);
    }
    for members in domain.region_members() {
        let k = gram(&domain.locations.select(&members), &eig.params);
        let ch = jittered_cholesky(&k)?;
        let z = DVector::from_fn(members.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = ch.l() * z * theta2.sqrt();
        for (&i, vi) in members.iter().zip(v.iter()) {
            out[i] = *vi;
        }
    }
    Ok(out)
}

/// Global GP at the observed locations via the truncated KL expansion.
///
/// Coefficients are drawn in rank order from one stream, so a longer
/// truncation extends a shorter one under the same seed.
pub fn sample_global(domain: &SpatialDomain, eig: &EigenSystem, tau2: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    global_with(&mut rng, domain, eig, tau2)
}

/// Region-blocked local GP with covariance `θ² K_g` on each region.
pub fn sample_local(domain: &SpatialDomain, params: &TmgpParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    local_with(&mut rng, domain, &params.eig, params.theta2)
}

/// Zero every region whose minimum absolute value does not exceed `lambda`.
pub fn threshold_regional(beta_tilde: &[f64], lambda: f64, domain: &SpatialDomain) -> Vec<f64> {
    let mut out = beta_tilde.to_vec();
    for members in domain.region_members() {
        let min_abs = members.iter().map(|&i| beta_tilde[i].abs()).fold(f64::INFINITY, f64::min);
        if min_abs <= lambda {
            for &i in &members {
                out[i] = 0.0;
            }
        }
    }
    out
}

/// Zero every entry with `|β̃| ≤ lambda`.
pub fn threshold_voxel(beta_tilde: &[f64], lambda: f64) -> Vec<f64> {
    beta_tilde
        .iter()
        .map(|&v| if v.abs() > lambda { v } else { 0.0 })
        .collect()
}

pub fn threshold(mode: ThresholdMode, beta_tilde: &[f64], lambda: f64, domain: &SpatialDomain) -> Vec<f64> {
    match mode {
        ThresholdMode::Regional => threshold_regional(beta_tilde, lambda, domain),
        ThresholdMode::Voxel => threshold_voxel(beta_tilde, lambda),
    }
}

/// Draw `β̃ = γ + ε` and threshold it regionally.
pub fn sample_svcf(domain: &SpatialDomain, params: &TmgpParams, seed: u64) -> Result<SvcfDraw> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (global, kl_coeffs) = global_with(&mut rng, domain, &params.eig, params.tau2);
    let local = local_with(&mut rng, domain, &params.eig, params.theta2)?;
    let beta_tilde: Vec<f64> = global.iter().zip(&local).map(|(g, e)| g + e).collect();
    let beta = threshold_regional(&beta_tilde, params.lambda, domain);
    Ok(SvcfDraw {
        beta_tilde,
        beta,
        kl_coeffs,
    })
}

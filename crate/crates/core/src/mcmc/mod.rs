//! Metropolis-within-Gibbs sampler for the TMGP spatially varying
//! coefficient model.
//!
//! One sweep updates every `β̃` block of every covariate, then `σ²`, each
//! `λ_k`, each `u_k`, each `τ_k²` and finally the kernel bandwidth when a
//! bandwidth grid is configured.

pub mod io;
pub mod kmeans;
pub mod prior;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elicitation::{ols_basis_fit, BasisFit, LambdaPrior};
use crate::error::{invalid, Error, Result};
use crate::kernel::{EigenSystem, KernelParams};
use crate::linalg::thin_mul;
use crate::model::{Dataset, SpatialDomain};
use crate::tmgp::{threshold, ThresholdMode};

pub use kmeans::kmeans_blocks;
pub use prior::{blocks_from_labels, Block, PriorModel};

/// Shape of the random-walk proposal for `β̃` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// `N(0, ς² Q⁻¹)` with `Q` the block prior precision plus the
    /// likelihood precision at the initial noise variance.
    #[default]
    Preconditioned,
    /// `N(0, ς² I)`.
    Isotropic,
}

/// How locations are grouped into `β̃` update blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpec {
    /// One block per region of the partition.
    #[default]
    Regions,
    /// k-means clusters of the voxelwise OLS coefficient vectors.
    Kmeans { k: usize },
    /// Explicit block label per location.
    Labels(Vec<usize>),
}

/// Starting point of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Smoothed OLS fields with their basis coefficients, refined to the
    /// joint mode of the unthresholded Gaussian model.
    #[default]
    Mode,
    /// Smoothed OLS fields with their basis coefficients as they are.
    Ols,
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: ThresholdMode,
    /// Local GP variance `θ²`.
    pub theta2: f64,
    /// Shape and rate of the inverse-gamma priors on `σ²` and `τ_k²`.
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub init_tau2: f64,
    pub proposal: ProposalKind,
    /// Initial `β̃` step size; the default depends on the proposal kind.
    pub beta_scale: Option<f64>,
    /// Initial `λ` step size; defaults to a tenth of each prior half-range.
    pub lambda_scale: Option<f64>,
    /// Robbins–Monro step-size adaptation during burn-in.
    pub adapt: bool,
    pub target_accept: (f64, f64),
    pub blocks: BlockSpec,
    pub shuffle_blocks: bool,
    /// Update blocks of one covariate concurrently. Requires blocks that
    /// never share a region.
    pub parallel_blocks: bool,
    /// Candidate bandwidths `b`; the chain's kernel bandwidth must be one of them.
    pub b_grid: Option<Vec<f64>>,
    /// Posterior probability cut-off used for selection.
    pub q: f64,
    /// Hold `λ` at these values instead of sampling it.
    pub fixed_lambda: Option<Vec<f64>>,
    pub update_sigma2: bool,
    pub update_u: bool,
    pub update_tau2: bool,
    pub init: InitKind,
    /// Coordinate-ascent rounds for `InitKind::Mode`.
    pub init_rounds: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            mode: ThresholdMode::Regional,
            theta2: 1.0,
            prior_shape: 0.001,
            prior_rate: 0.001,
            init_tau2: 1.0,
            proposal: ProposalKind::Preconditioned,
            beta_scale: None,
            lambda_scale: None,
            adapt: true,
            target_accept: (0.2, 0.4),
            blocks: BlockSpec::Regions,
            shuffle_blocks: false,
            parallel_blocks: false,
            b_grid: None,
            q: 0.9,
            fixed_lambda: None,
            update_sigma2: true,
            update_u: true,
            update_tau2: true,
            init: InitKind::Mode,
            init_rounds: 30,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < self.burn_in {
            return Err(invalid("iterations must be at least burn_in"));
        }
        if self.thin == 0 {
            return Err(invalid("thin must be positive"));
        }
        for (name, v) in [
            ("theta2", self.theta2),
            ("prior_shape", self.prior_shape),
            ("prior_rate", self.prior_rate),
            ("init_tau2", self.init_tau2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for s in [self.beta_scale, self.lambda_scale].into_iter().flatten() {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(format!("step sizes must be positive, got {s}")));
            }
        }
        let (lo, hi) = self.target_accept;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(invalid("target_accept must satisfy 0 < lo ≤ hi < 1"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid("q must lie in (0, 1)"));
        }
        if let Some(grid) = &self.b_grid {
            if grid.is_empty() || grid.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                return Err(invalid("b_grid must hold positive bandwidths"));
            }
        }
        if let Some(fixed) = &self.fixed_lambda {
            if fixed.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(invalid("fixed_lambda must be non-negative"));
            }
        }
        if matches!(self.blocks, BlockSpec::Kmeans { k: 0 }) {
            return Err(invalid("k-means needs at least one block"));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn n_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Block label per location.
pub fn block_labels(spec: &BlockSpec, domain: &SpatialDomain, fit: &BasisFit, seed: u64) -> Result<Vec<usize>> {
    match spec {
        BlockSpec::Regions => Ok(domain.region_labels.clone()),
        BlockSpec::Kmeans { k } => {
            let features: Vec<Vec<f64>> = (0..domain.len())
                .map(|i| fit.beta_ols.column(i).iter().copied().collect())
                .collect();
            kmeans_blocks(&features, *k, seed)
        }
        BlockSpec::Labels(labels) => {
            if labels.len() != domain.len() {
                return Err(Error::Shape(format!(
                    "{} block labels for {} locations",
                    labels.len(),
                    domain.len()
                )));
            }
            Ok(labels.clone())
        }
    }
}

/// Kernel-dependent precomputation, shareable across chains on one domain.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub models: Vec<PriorModel>,
    /// `blocks[model][block]`.
    pub blocks: Vec<Vec<Block>>,
    pub labels: Vec<usize>,
    /// Index of the model matching the supplied eigensystem.
    pub initial_model: usize,
    /// Whether every region belongs to at most one block.
    pub disjoint_blocks: bool,
}

impl Precomputed {
    pub fn new(domain: &SpatialDomain, eig: &EigenSystem, b_grid: Option<&[f64]>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != domain.len() {
            return Err(Error::Shape("one block label per location is required".into()));
        }
        let (eigs, initial_model) = match b_grid {
            None => (vec![eig.clone()], 0),
            Some(grid) => {
                let initial = grid
                    .iter()
                    .position(|b| (b - eig.params.b).abs() <= 1e-12 * b.abs().max(1.0))
                    .ok_or_else(|| invalid(format!("kernel bandwidth {} is not in b_grid", eig.params.b)))?;
                let eigs = grid
                    .iter()
                    .map(|&b| {
                        let params = KernelParams::new(eig.params.a, b, eig.params.d)?;
                        EigenSystem::with_max_degree(params, eig.max_degree)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (eigs, initial)
            }
        };
        let models = eigs
            .iter()
            .map(|e| PriorModel::new(domain, e))
            .collect::<Result<Vec<_>>>()?;
        let groups = blocks_from_labels(&labels);
        let blocks = models
            .iter()
            .map(|m| {
                groups
                    .par_iter()
                    .map(|g| Block::new(m, g.clone()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut owner = vec![usize::MAX; domain.n_regions];
        let mut disjoint_blocks = true;
        for (bi, g) in groups.iter().enumerate() {
            for &i in g {
                let r = domain.region_labels[i] - 1;
                if owner[r] != usize::MAX && owner[r] != bi {
                    disjoint_blocks = false;
                }
                owner[r] = bi;
            }
        }
        Ok(Self {
            models,
            blocks,
            labels,
            initial_model,
            disjoint_blocks,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks[0].len()
    }
}

/// Sufficient statistics of the data for the Gaussian likelihood.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub xtx: DMatrix<f64>,
    /// `p × n`.
    pub xty: DMatrix<f64>,
    /// `Σ_j y_j(s_i)²` per location.
    pub yty: Vec<f64>,
    pub m: usize,
}

impl SuffStats {
    pub fn new(ds: &Dataset) -> Self {
        Self {
            xtx: ds.x.transpose() * &ds.x,
            xty: ds.x.transpose() * &ds.y,
            yty: ds.y.column_iter().map(|c| c.norm_squared()).collect(),
            m: ds.subjects(),
        }
    }

    /// Residual sum of squares at location `i` for coefficient column `beta`.
    pub fn rss_at(&self, i: usize, beta: &[f64]) -> f64 {
        let p = beta.len();
        let mut q = 0.0;
        for a in 0..p {
            let mut row = 0.0;
            for b in 0..p {
                row += self.xtx[(a, b)] * beta[b];
            }
            q += beta[a] * (row - 2.0 * self.xty[(a, i)]);
        }
        (self.yty[i] + q).max(0.0)
    }

    /// Total residual sum of squares for a `p × n` coefficient matrix.
    pub fn rss(&self, beta: &DMatrix<f64>) -> f64 {
        (0..beta.ncols())
            .map(|i| {
                let col: Vec<f64> = beta.column(i).iter().copied().collect();
                self.rss_at(i, &col)
            })
            .sum()
    }

    /// Change in RSS at location `i` when coefficient `k` moves from `old` to `new`.
    fn rss_delta(&self, beta: &DMatrix<f64>, k: usize, i: usize, old: f64, new: f64) -> f64 {
        let mut lin = self.xty[(k, i)];
        for t in 0..beta.nrows() {
            if t != k {
                lin -= self.xtx[(k, t)] * beta[(t, i)];
            }
        }
        -2.0 * (new - old) * lin + self.xtx[(k, k)] * (new * new - old * old)
    }
}

/// Current values of all unknowns plus two derived caches.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// `p × n` unthresholded fields.
    pub beta_tilde: DMatrix<f64>,
    /// `p × L` KL coefficients.
    pub u: DMatrix<f64>,
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Index into the candidate bandwidth list.
    pub model: usize,
    /// `p × n` thresholded fields (derived).
    pub beta: DMatrix<f64>,
    /// `p × n` global component `Φ u_k` (derived).
    pub global: DMatrix<f64>,
}

/// Outcome of a single `β̃` block proposal.
#[derive(Debug, Clone)]
struct BlockMove {
    accepted: bool,
    values: Vec<f64>,
    changes: Vec<(usize, f64)>,
}

/// Posterior draws and diagnostics.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub beta_tilde: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub tau2: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Post-burn-in acceptance rate per covariate and block.
    pub beta_accept: Vec<Vec<f64>>,
    pub lambda_accept: Vec<f64>,
    pub config: McmcConfig,
    pub priors: Vec<LambdaPrior>,
    pub block_labels: Vec<usize>,
    pub final_state: ChainState,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.sigma2.len()
    }
}

fn inv_gamma(rng: &mut impl Rng, shape: f64, rate: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(rate / g.sample(rng))
}

fn normals(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// The sampler bound to one dataset and one precomputation.
pub struct Sampler<'a> {
    ds: &'a Dataset,
    pre: &'a Precomputed,
    stats: SuffStats,
    priors: Vec<LambdaPrior>,
    config: McmcConfig,
    /// Likelihood precision per unit coefficient, `XᵀX_kk / σ̂²`.
    lik_prec: Vec<f64>,
    init_sigma2: f64,
}

impl<'a> Sampler<'a> {
    /// `init` supplies the starting fields; its residual variance sets the
    /// initial `σ²` and the proposal preconditioner.
    pub fn new(
        ds: &'a Dataset,
        pre: &'a Precomputed,
        priors: Vec<LambdaPrior>,
        config: McmcConfig,
        init: &BasisFit,
    ) -> Result<Self> {
        ds.validate()?;
        config.validate()?;
        let (p, n) = (ds.covariates(), ds.locations());
        if priors.len() != p {
            return Err(Error::Shape(format!("{} λ priors for {p} covariates", priors.len())));
        }
        for pr in &priors {
            pr.validate()?;
        }
        if let Some(fixed) = &config.fixed_lambda {
            if fixed.len() != p {
                return Err(Error::Shape(format!("{} fixed λ values for {p} covariates", fixed.len())));
            }
        }
        if pre.models[0].phi.nrows() != n {
            return Err(Error::Shape("precomputation was built for another domain".into()));
        }
        if init.beta_hat.shape() != (p, n) || init.coeffs.shape() != (p, pre.models[0].len()) {
            return Err(Error::Shape("initial fit does not match the data and basis".into()));
        }
        if config.parallel_blocks && !pre.disjoint_blocks {
            return Err(invalid("parallel block updates need blocks that do not share regions"));
        }
        let stats = SuffStats::new(ds);
        let init_sigma2 = (stats.rss(&init.beta_hat) / (ds.subjects() * n) as f64).max(1e-12);
        let lik_prec = (0..p).map(|k| stats.xtx[(k, k)] / init_sigma2).collect();
        Ok(Self {
            ds,
            pre,
            stats,
            priors,
            config,
            lik_prec,
            init_sigma2,
        })
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn stats(&self) -> &SuffStats {
        &self.stats
    }

    pub fn model(&self, state: &ChainState) -> &PriorModel {
        &self.pre.models[state.model]
    }

    /// Starting state: smoothed OLS fields and coefficients.
    pub fn initial_state(&self, init: &BasisFit) -> ChainState {
        let p = self.ds.covariates();
        let lambda = match &self.config.fixed_lambda {
            Some(f) => f.clone(),
            None => self.priors.iter().map(|pr| pr.center).collect(),
        };
        let mut st = ChainState {
            beta_tilde: init.beta_hat.clone(),
            u: init.coeffs.clone(),
            sigma2: self.init_sigma2,
            tau2: vec![self.config.init_tau2; p],
            lambda,
            model: self.pre.initial_model,
            beta: DMatrix::zeros(0, 0),
            global: DMatrix::zeros(0, 0),
        };
        self.refresh(&mut st);
        if self.config.init == InitKind::Mode {
            self.gaussian_mode(&mut st, self.config.init_rounds);
        }
        st
    }

    /// Recompute the derived caches of `state`.
    pub fn refresh(&self, st: &mut ChainState) {
        let model = &self.pre.models[st.model];
        st.global = (&model.phi * st.u.transpose()).transpose();
        let p = st.beta_tilde.nrows();
        let mut beta = DMatrix::zeros(p, st.beta_tilde.ncols());
        for k in 0..p {
            let row = self.thresholded_row(st, k, st.lambda[k]);
            for (i, v) in row.into_iter().enumerate() {
                beta[(k, i)] = v;
            }
        }
        st.beta = beta;
    }

    fn thresholded_row(&self, st: &ChainState, k: usize, lambda: f64) -> Vec<f64> {
        let row: Vec<f64> = st.beta_tilde.row(k).iter().copied().collect();
        threshold(self.config.mode, &row, lambda, &self.ds.domain)
    }

    /// Log joint density up to a constant (used by tests and diagnostics).
    pub fn log_posterior(&self, st: &ChainState) -> f64 {
        let model = &self.pre.models[st.model];
        let (a0, b0) = (self.config.prior_shape, self.config.prior_rate);
        let mn = (self.stats.m * self.ds.locations()) as f64;
        let mut lp = -0.5 * self.stats.rss(&st.beta) / st.sigma2 - 0.5 * mn * st.sigma2.ln();
        lp += -(a0 + 1.0) * st.sigma2.ln() - b0 / st.sigma2;
        for k in 0..st.beta_tilde.nrows() {
            let row: Vec<f64> = st.beta_tilde.row(k).iter().copied().collect();
            let u: Vec<f64> = st.u.row(k).iter().copied().collect();
            lp += model.log_prior_beta(&row, &u, self.config.theta2);
            lp += model.log_prior_u(&u, st.tau2[k]);
            lp += -(a0 + 1.0) * st.tau2[k].ln() - b0 / st.tau2[k];
            if !self.priors[k].contains(st.lambda[k]) && self.config.fixed_lambda.is_none() {
                return f64::NEG_INFINITY;
            }
        }
        lp
    }

    fn default_beta_scale(&self, block: &Block) -> f64 {
        let nb = block.len() as f64;
        match self.config.beta_scale {
            Some(s) => s,
            None => match self.config.proposal {
                ProposalKind::Preconditioned => 2.38 / nb.sqrt(),
                ProposalKind::Isotropic => 0.5 * self.init_sigma2.sqrt() / (self.stats.m as f64 * nb).sqrt(),
            },
        }
    }

    fn default_lambda_scale(&self, k: usize) -> f64 {
        self.config
            .lambda_scale
            .unwrap_or_else(|| (self.priors[k].half_range / 10.0).max(1e-6))
    }

    /// Random-walk increments for covariates `ks` on block `bi`, each paired
    /// with `P_B δ` when the block is a whole region (one pass over the
    /// eigenvectors yields both).
    fn block_increments(
        &self,
        model: usize,
        bi: usize,
        ks: &[usize],
        zs: &[DVector<f64>],
        scales: &[f64],
    ) -> Vec<(DVector<f64>, Option<DVector<f64>>)> {
        let block = &self.pre.blocks[model][bi];
        match self.config.proposal {
            ProposalKind::Isotropic => zs.iter().zip(scales).map(|(z, s)| (z * *s, None)).collect(),
            ProposalKind::Preconditioned => {
                let theta2 = self.config.theta2;
                let fast = block.whole_region;
                let per = if fast { 2 } else { 1 };
                let nb = block.len();
                let mut coef = DMatrix::zeros(nb, per * ks.len());
                for (c, ((&k, z), &s)) in ks.iter().zip(zs).zip(scales).enumerate() {
                    for j in 0..nb {
                        let mu = block.prec_values[j];
                        let d = s * z[j] / (mu / theta2 + self.lik_prec[k]).sqrt();
                        coef[(j, per * c)] = d;
                        if fast {
                            coef[(j, per * c + 1)] = mu * d;
                        }
                    }
                }
                let out = thin_mul(&block.prec_vectors, &coef);
                (0..ks.len())
                    .map(|c| {
                        let delta = out.column(per * c).into_owned();
                        (delta, fast.then(|| out.column(per * c + 1).into_owned()))
                    })
                    .collect()
            }
        }
    }

    /// Metropolis decision for `β̃_k ← β̃_k + δ` on block `bi`.
    fn evaluate_block(
        &self,
        st: &ChainState,
        k: usize,
        bi: usize,
        delta: &DVector<f64>,
        prec_delta: Option<&DVector<f64>>,
        log_u: f64,
    ) -> BlockMove {
        let model = &self.pre.models[st.model];
        let block = &self.pre.blocks[st.model][bi];
        let theta2 = self.config.theta2;
        let resid = |i: usize| st.beta_tilde[(k, i)] - st.global[(k, i)];

        let mut log_ratio = 0.0;
        match prec_delta {
            Some(w) => {
                let cross: f64 = block.members.iter().enumerate().map(|(j, &i)| w[j] * resid(i)).sum();
                log_ratio -= (2.0 * cross + w.dot(delta)) / (2.0 * theta2);
            }
            None => {
                for (g, rpos, bpos) in &block.parts {
                    let region = &model.regions[*g];
                    let mut w = DVector::zeros(region.members.len());
                    for (&ra, &ba) in rpos.iter().zip(bpos) {
                        w.axpy(delta[ba], &region.k_inv.column(ra), 1.0);
                    }
                    let cross: f64 = region.members.iter().enumerate().map(|(pos, &i)| w[pos] * resid(i)).sum();
                    let quad: f64 = rpos.iter().zip(bpos).map(|(&ra, &ba)| w[ra] * delta[ba]).sum();
                    log_ratio -= (2.0 * cross + quad) / (2.0 * theta2);
                }
            }
        }

        let values: Vec<f64> = block
            .members
            .iter()
            .enumerate()
            .map(|(j, &i)| st.beta_tilde[(k, i)] + delta[j])
            .collect();
        let lambda = st.lambda[k];
        let mut changes = Vec::new();
        match self.config.mode {
            ThresholdMode::Voxel => {
                for (&i, &v) in block.members.iter().zip(&values) {
                    let new = if v.abs() > lambda { v } else { 0.0 };
                    if new != st.beta[(k, i)] {
                        changes.push((i, new));
                    }
                }
            }
            ThresholdMode::Regional => {
                for (g, rpos, bpos) in &block.parts {
                    let region = &model.regions[*g];
                    let mut vals: Vec<f64> = region.members.iter().map(|&i| st.beta_tilde[(k, i)]).collect();
                    for (&ra, &ba) in rpos.iter().zip(bpos) {
                        vals[ra] = values[ba];
                    }
                    let keep = vals.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min) > lambda;
                    for (&i, &v) in region.members.iter().zip(&vals) {
                        let new = if keep { v } else { 0.0 };
                        if new != st.beta[(k, i)] {
                            changes.push((i, new));
                        }
                    }
                }
            }
        }
        let drss: f64 = changes
            .iter()
            .map(|&(i, new)| self.stats.rss_delta(&st.beta, k, i, st.beta[(k, i)], new))
            .sum();
        log_ratio -= drss / (2.0 * st.sigma2);
        BlockMove {
            accepted: log_ratio.is_finite() && log_u < log_ratio,
            values,
            changes,
        }
    }

    fn apply_block(&self, st: &mut ChainState, k: usize, bi: usize, mv: BlockMove) {
        if !mv.accepted {
            return;
        }
        let block = &self.pre.blocks[st.model][bi];
        for (&i, v) in block.members.iter().zip(mv.values) {
            st.beta_tilde[(k, i)] = v;
        }
        for (i, v) in mv.changes {
            st.beta[(k, i)] = v;
        }
    }

    /// One random-walk Metropolis update of block `bi` of covariate `k`.
    pub fn update_beta_block(&self, st: &mut ChainState, k: usize, bi: usize, scale: f64, rng: &mut impl Rng) -> bool {
        let z = normals(rng, self.pre.blocks[st.model][bi].len());
        let (delta, pd) = self.block_increments(st.model, bi, &[k], &[z], &[scale]).remove(0);
        let log_u = rng.random::<f64>().ln();
        let mv = self.evaluate_block(st, k, bi, &delta, pd.as_ref(), log_u);
        let accepted = mv.accepted;
        self.apply_block(st, k, bi, mv);
        accepted
    }

    /// Update block `bi` for every covariate in turn, returning the moves
    /// (already applied to `st`).
    fn block_round(&self, st: &mut ChainState, bi: usize, scales: &[f64], rng: &mut impl Rng) -> Vec<(usize, BlockMove)> {
        let p = scales.len();
        let nb = self.pre.blocks[st.model][bi].len();
        let ks: Vec<usize> = (0..p).collect();
        let zs: Vec<DVector<f64>> = (0..p).map(|_| normals(rng, nb)).collect();
        let incs = self.block_increments(st.model, bi, &ks, &zs, scales);
        let mut moves = Vec::with_capacity(p);
        for (k, (delta, pd)) in incs.iter().enumerate() {
            let log_u = rng.random::<f64>().ln();
            let mv = self.evaluate_block(st, k, bi, delta, pd.as_ref(), log_u);
            self.apply_block(st, k, bi, mv.clone());
            moves.push((k, mv));
        }
        moves
    }

    /// Gibbs draw of `σ²` from its inverse-gamma full conditional.
    pub fn update_sigma2(&self, st: &mut ChainState, rng: &mut impl Rng) -> Result<()> {
        let mn = (self.stats.m * self.ds.locations()) as f64;
        let rss = self.stats.rss(&st.beta);
        st.sigma2 = inv_gamma(rng, self.config.prior_shape + 0.5 * mn, self.config.prior_rate + 0.5 * rss)?;
        Ok(())
    }

    /// Random-walk Metropolis update of `λ_k` under its uniform prior.
    pub fn update_lambda(&self, st: &mut ChainState, k: usize, scale: f64, rng: &mut impl Rng) -> bool {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = st.lambda[k] + scale * z;
        let u: f64 = rng.random();
        if !self.priors[k].contains(proposal) {
            return false;
        }
        let row = self.thresholded_row(st, k, proposal);
        let mut drss = 0.0;
        for (i, &new) in row.iter().enumerate() {
            let old = st.beta[(k, i)];
            if new != old {
                drss += self.stats.rss_delta(&st.beta, k, i, old, new);
            }
        }
        let log_ratio = -drss / (2.0 * st.sigma2);
        if u.ln() < log_ratio {
            st.lambda[k] = proposal;
            for (i, v) in row.into_iter().enumerate() {
                st.beta[(k, i)] = v;
            }
            true
        } else {
            false
        }
    }

    /// Eigen-coordinates of the `u_k` full conditional: `u = V' (m + √d ∘ z)`
    /// with `V' = Z^{1/2} V`, returning `(m, d)`.
    fn u_eigen_conditional(&self, st: &ChainState, k: usize) -> (Vec<f64>, Vec<f64>) {
        let model = &self.pre.models[st.model];
        let theta2 = self.config.theta2;
        let mut rhs = DVector::zeros(model.len());
        for r in &model.regions {
            let bt = DVector::from_iterator(r.members.len(), r.members.iter().map(|&i| st.beta_tilde[(k, i)]));
            rhs.gemv(1.0, &r.phi_t_kinv, &bt, 1.0);
        }
        let proj = model.u_basis.tr_mul(&rhs);
        let d: Vec<f64> = model
            .u_eigenvalues
            .iter()
            .map(|lam| 1.0 / (lam / theta2 + 1.0 / st.tau2[k]))
            .collect();
        let m = proj.iter().zip(&d).map(|(p, d)| p * d / theta2).collect();
        (m, d)
    }

    /// Full-conditional mean and covariance factor of `u_k`:
    /// `u = mean + factor · z` with `z ~ N(0, I)`.
    pub fn u_conditional(&self, st: &ChainState, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        let basis = &self.pre.models[st.model].u_basis;
        let (m, d) = self.u_eigen_conditional(st, k);
        let mean = basis * DVector::from_vec(m);
        let factor = DMatrix::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] * d[j].sqrt());
        (mean, factor)
    }

    fn set_u(&self, st: &mut ChainState, k: usize, u: &DVector<f64>) {
        let g = &self.pre.models[st.model].phi * u;
        for (j, v) in u.iter().enumerate() {
            st.u[(k, j)] = *v;
        }
        for (i, v) in g.iter().enumerate() {
            st.global[(k, i)] = *v;
        }
    }

    /// Gibbs draw of `u_k` from its Gaussian full conditional.
    pub fn update_u(&self, st: &mut ChainState, k: usize, rng: &mut impl Rng) {
        let (m, d) = self.u_eigen_conditional(st, k);
        let coords = DVector::from_iterator(
            m.len(),
            m.iter().zip(&d).map(|(m, d)| m + d.sqrt() * rng.sample::<f64, _>(StandardNormal)),
        );
        let u = &self.pre.models[st.model].u_basis * coords;
        self.set_u(st, k, &u);
    }

    /// Conditional mode of `β̃_k` on block `bi` under the unthresholded
    /// Gaussian likelihood.
    fn block_mode(&self, st: &ChainState, k: usize, bi: usize, sigma2: f64) -> Vec<f64> {
        let model = &self.pre.models[st.model];
        let block = &self.pre.blocks[st.model][bi];
        let theta2 = self.config.theta2;
        let c = self.stats.xtx[(k, k)] / sigma2;
        let nb = block.len();
        let mut rhs = DVector::zeros(nb);
        for (j, &i) in block.members.iter().enumerate() {
            let mut lin = self.stats.xty[(k, i)];
            for t in 0..st.beta_tilde.nrows() {
                if t != k {
                    lin -= self.stats.xtx[(k, t)] * st.beta_tilde[(t, i)];
                }
            }
            rhs[j] = lin / sigma2;
        }
        for (g, rpos, bpos) in &block.parts {
            let region = &model.regions[*g];
            let mut inside = vec![false; region.members.len()];
            for &ra in rpos {
                inside[ra] = true;
            }
            let offset = DVector::from_iterator(
                region.members.len(),
                region.members.iter().enumerate().map(|(pos, &i)| {
                    if inside[pos] {
                        st.global[(k, i)]
                    } else {
                        st.global[(k, i)] - st.beta_tilde[(k, i)]
                    }
                }),
            );
            let pulled = &region.k_inv * offset;
            for (&ra, &ba) in rpos.iter().zip(bpos) {
                rhs[ba] += pulled[ra] / theta2;
            }
        }
        let proj = block.prec_vectors.tr_mul(&rhs);
        let scaled = DVector::from_fn(nb, |j, _| proj[j] / (block.prec_values[j] / theta2 + c));
        (&block.prec_vectors * scaled).iter().copied().collect()
    }

    /// Joint mode of the unthresholded Gaussian model by coordinate ascent
    /// over `u_k` and the `β̃` blocks, starting from `state`.
    pub fn gaussian_mode(&self, st: &mut ChainState, rounds: usize) {
        let p = st.beta_tilde.nrows();
        let sigma2 = st.sigma2;
        for _ in 0..rounds {
            for k in 0..p {
                let (m, _) = self.u_eigen_conditional(st, k);
                let u = &self.pre.models[st.model].u_basis * DVector::from_vec(m);
                self.set_u(st, k, &u);
                for bi in 0..self.pre.blocks[st.model].len() {
                    let vals = self.block_mode(st, k, bi, sigma2);
                    for (&i, v) in self.pre.blocks[st.model][bi].members.iter().zip(vals) {
                        st.beta_tilde[(k, i)] = v;
                    }
                }
            }
        }
        self.refresh(st);
    }

    /// Gibbs draw of `τ_k²` from its inverse-gamma full conditional.
    pub fn update_tau2(&self, st: &mut ChainState, k: usize, rng: &mut impl Rng) -> Result<()> {
        let zeta = &self.pre.models[st.model].eig.eigenvalues;
        let q: f64 = st.u.row(k).iter().zip(zeta).map(|(u, z)| u * u / z).sum();
        let l = zeta.len() as f64;
        st.tau2[k] = inv_gamma(rng, self.config.prior_shape + 0.5 * l, self.config.prior_rate + 0.5 * q)?;
        Ok(())
    }

    /// Log weight of each candidate bandwidth given the current fields.
    pub fn bandwidth_log_weights(&self, st: &ChainState) -> Vec<f64> {
        self.pre
            .models
            .iter()
            .map(|m| {
                (0..st.beta_tilde.nrows())
                    .map(|k| {
                        let row: Vec<f64> = st.beta_tilde.row(k).iter().copied().collect();
                        let u: Vec<f64> = st.u.row(k).iter().copied().collect();
                        m.log_prior_beta(&row, &u, self.config.theta2) + m.log_prior_u(&u, st.tau2[k])
                    })
                    .sum()
            })
            .collect()
    }

    /// Gibbs draw of the bandwidth over the discrete grid (uniform prior).
    pub fn update_b(&self, st: &mut ChainState, rng: &mut impl Rng) {
        if self.pre.models.len() < 2 {
            return;
        }
        let lw = self.bandwidth_log_weights(st);
        let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = w.len() - 1;
        for (c, wc) in w.iter().enumerate() {
            if target < *wc {
                pick = c;
                break;
            }
            target -= wc;
        }
        if pick != st.model {
            st.model = pick;
            self.refresh(st);
        }
    }

    /// Update every block once. Returns acceptance flags indexed `[k][block]`.
    fn sweep_blocks(&self, st: &mut ChainState, scales: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
        let p = scales.len();
        let nb = self.pre.blocks[st.model].len();
        let mut order: Vec<usize> = (0..nb).collect();
        if self.config.shuffle_blocks {
            order.shuffle(rng);
        }
        let seeds: Vec<u64> = (0..nb).map(|_| rng.next_u64()).collect();
        let block_scales = |bi: usize| -> Vec<f64> { (0..p).map(|k| scales[k][bi]).collect() };
        let mut accepted = vec![vec![false; nb]; p];
        if self.config.parallel_blocks {
            let snapshot: &ChainState = st;
            let rounds: Vec<(usize, Vec<(usize, BlockMove)>)> = order
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&bi, &seed)| {
                    let mut child = ChaCha8Rng::seed_from_u64(seed);
                    let mut local = snapshot.clone();
                    (bi, self.block_round(&mut local, bi, &block_scales(bi), &mut child))
                })
                .collect();
            for (bi, moves) in rounds {
                for (k, mv) in moves {
                    accepted[k][bi] = mv.accepted;
                    self.apply_block(st, k, bi, mv);
                }
            }
        } else {
            for (&bi, &seed) in order.iter().zip(&seeds) {
                let mut child = ChaCha8Rng::seed_from_u64(seed);
                for (k, mv) in self.block_round(st, bi, &block_scales(bi), &mut child) {
                    accepted[k][bi] = mv.accepted;
                }
            }
        }
        accepted
    }

    /// Gibbs draws of every `u_k`, sharing one pass over the basis matrices.
    pub fn update_u_all(&self, st: &mut ChainState, rng: &mut impl Rng) {
        let model = &self.pre.models[st.model];
        let theta2 = self.config.theta2;
        let (p, l) = (st.u.nrows(), model.len());
        let mut rhs = DMatrix::zeros(l, p);
        for r in &model.regions {
            let bt = DMatrix::from_fn(r.members.len(), p, |a, k| st.beta_tilde[(k, r.members[a])]);
            rhs += thin_mul(&r.phi_t_kinv, &bt);
        }
        let proj = model.u_basis.tr_mul(&rhs);
        let mut coords = DMatrix::zeros(l, p);
        for k in 0..p {
            for j in 0..l {
                let d = 1.0 / (model.u_eigenvalues[j] / theta2 + 1.0 / st.tau2[k]);
                let z: f64 = rng.sample(StandardNormal);
                coords[(j, k)] = proj[(j, k)] * d / theta2 + d.sqrt() * z;
            }
        }
        let u = thin_mul(&model.u_basis, &coords);
        st.global = thin_mul(&model.phi, &u).transpose();
        st.u = u.transpose();
    }

    /// Run the chain from `state`.
    pub fn run_from(&self, mut st: ChainState) -> Result<ChainOutput> {
        let cfg = &self.config;
        let p = self.ds.covariates();
        let nb = self.pre.n_blocks();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut log_beta_scale: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                self.pre.blocks[st.model]
                    .iter()
                    .map(|b| self.default_beta_scale(b).ln())
                    .collect()
            })
            .collect();
        let mut log_lambda_scale: Vec<f64> = (0..p).map(|k| self.default_lambda_scale(k).ln()).collect();
        let target = 0.5 * (cfg.target_accept.0 + cfg.target_accept.1);
        let mut beta_hits = vec![vec![0usize; nb]; p];
        let mut lambda_hits = vec![0usize; p];
        let sample_lambda = cfg.fixed_lambda.is_none();
        let n_draws = cfg.n_draws();
        let mut out = ChainOutput {
            beta_tilde: Vec::with_capacity(n_draws),
            u: Vec::with_capacity(n_draws),
            lambda: Vec::with_capacity(n_draws),
            sigma2: Vec::with_capacity(n_draws),
            tau2: Vec::with_capacity(n_draws),
            b: Vec::with_capacity(n_draws),
            beta_accept: Vec::new(),
            lambda_accept: Vec::new(),
            config: cfg.clone(),
            priors: self.priors.clone(),
            block_labels: self.pre.labels.clone(),
            final_state: st.clone(),
        };

        for t in 0..cfg.iterations {
            let burning = t < cfg.burn_in;
            let gain = (t as f64 + 1.0).powf(-0.6);
            let scales: Vec<Vec<f64>> = log_beta_scale
                .iter()
                .map(|row| row.iter().map(|v| v.exp()).collect())
                .collect();
            let acc = self.sweep_blocks(&mut st, &scales, &mut rng);
            for (k, row) in acc.into_iter().enumerate() {
                for (bi, a) in row.into_iter().enumerate() {
                    if burning && cfg.adapt {
                        log_beta_scale[k][bi] += gain * (f64::from(u8::from(a)) - target);
                    }
                    if !burning {
                        beta_hits[k][bi] += usize::from(a);
                    }
                }
            }
            if cfg.update_sigma2 {
                self.update_sigma2(&mut st, &mut rng)?;
            }
            if sample_lambda {
                for k in 0..p {
                    let a = self.update_lambda(&mut st, k, log_lambda_scale[k].exp(), &mut rng);
                    if burning && cfg.adapt {
                        log_lambda_scale[k] += gain * (f64::from(u8::from(a)) - target);
                    }
                    if !burning {
                        lambda_hits[k] += usize::from(a);
                    }
                }
            }
            if cfg.update_u {
                self.update_u_all(&mut st, &mut rng);
            }
            if cfg.update_tau2 {
                for k in 0..p {
                    self.update_tau2(&mut st, k, &mut rng)?;
                }
            }
            self.update_b(&mut st, &mut rng);

            if !burning && (t - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
                out.beta_tilde.push(st.beta_tilde.clone());
                out.u.push(st.u.clone());
                out.lambda.push(st.lambda.clone());
                out.sigma2.push(st.sigma2);
                out.tau2.push(st.tau2.clone());
                out.b.push(self.pre.models[st.model].eig.params.b);
            }
        }
        let kept = (cfg.iterations - cfg.burn_in).max(1) as f64;
        out.beta_accept = beta_hits
            .iter()
            .map(|row| row.iter().map(|&h| h as f64 / kept).collect())
            .collect();
        out.lambda_accept = lambda_hits.iter().map(|&h| h as f64 / kept).collect();
        out.final_state = st;
        Ok(out)
    }

    pub fn run(&self, init: &BasisFit) -> Result<ChainOutput> {
        self.run_from(self.initial_state(init))
    }
}

/// Fit the model end to end: OLS initialization, blocking, precomputation
/// and sampling.
pub fn run_chain(ds: &Dataset, priors: Vec<LambdaPrior>, eig: &EigenSystem, config: &McmcConfig) -> Result<ChainOutput> {
    config.validate()?;
    let fit = ols_basis_fit(ds, eig)?;
    let labels = block_labels(&config.blocks, &ds.domain, &fit, config.seed)?;
    let pre = Precomputed::new(&ds.domain, eig, config.b_grid.as_deref(), labels)?;
    Sampler::new(ds, &pre, priors, config.clone(), &fit)?.run(&fit)
}

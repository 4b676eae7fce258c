//! Synthetic benchmark harness: truth presets, per-replicate pipeline,
//! scoring against the GLM baselines and fixed-threshold ROC sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{glm_fit, thresholded_estimate, GlmFit, GlmMethod};
use crate::elicitation::{elicit_all, ols_basis_fit, BasisFit, ElicitOptions, LambdaPrior};
use crate::error::{invalid, Result};
use crate::inference::estimate_for_mode;
use crate::kernel::{truncation_level, EigenSystem, KernelParams};
use crate::mcmc::{block_labels, BlockSpec, ChainOutput, McmcConfig, Precomputed, Sampler};
use crate::metrics::{aggregate, confusion_rates, partial_auc, AggregateRow, RocCurve, RocPoint, ScoreReport};
use crate::model::{simulate, FieldComponent, FieldShape, SimSpec};
use crate::model::{Dataset, GroundTruth, SpatialDomain};

pub const TMGP_LABEL: &str = "SVCM-TMGP";

fn comp(region: usize, floor: f64, shape: FieldShape) -> FieldComponent {
    FieldComponent {
        region,
        floor,
        sign: 1.0,
        shape,
    }
}

fn bump(amplitude: f64) -> FieldShape {
    FieldShape::Bump {
        amplitude,
        width: 0.15,
        center: None,
    }
}

fn plane(gradient: Vec<f64>) -> FieldShape {
    FieldShape::Plane { gradient }
}

fn validate_side(per_side: usize) -> Result<()> {
    if per_side < 2 {
        return Err(invalid("grid needs at least 2 points per side"));
    }
    Ok(())
}

/// Three-covariate truth on a 2×2-region square grid. Covariate `k` is
/// active on two regions with floor `floors[k]`.
fn two_region_truth(per_side: usize, floors: [f64; 3], bumps: [f64; 3]) -> Result<SimSpec> {
    validate_side(per_side)?;
    Ok(SimSpec {
        dim: 2,
        per_side,
        region_splits: 2,
        covariates: SimSpec::default_covariates(),
        fields: vec![
            vec![comp(1, floors[0], bump(bumps[0])), comp(4, floors[0], plane(vec![2.0, 0.0]))],
            vec![comp(2, floors[1], bump(bumps[1])), comp(3, floors[1], FieldShape::Flat)],
            vec![comp(3, floors[2], plane(vec![0.0, 2.0])), comp(1, floors[2], bump(bumps[2]))],
        ],
    })
}

/// Truth whose threshold floors are the illustrative `λ_k = k + 1`.
pub fn staircase_spec(per_side: usize) -> Result<SimSpec> {
    two_region_truth(per_side, [2.0, 3.0, 4.0], [2.0, 2.0, 1.0])
}

/// Truth for the scoring study: covariate `k` is active on region `k + 1`
/// only and region 4 is null for all, so about a quarter of each map carries
/// signal. Floors sit above the `[0.3, 1.25]` threshold prior and give
/// voxelwise t-statistics of roughly 4 or more at `m = 50`, `σ² = 4`.
pub fn sparse_spec(per_side: usize) -> Result<SimSpec> {
    validate_side(per_side)?;
    Ok(SimSpec {
        dim: 2,
        per_side,
        region_splits: 2,
        covariates: SimSpec::default_covariates(),
        fields: vec![
            vec![comp(1, 1.5, bump(1.5))],
            vec![comp(2, 2.0, plane(vec![2.0, 0.0]))],
            vec![comp(3, 2.5, bump(1.0))],
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthPreset {
    #[default]
    Sparse,
    Staircase,
}

impl TruthPreset {
    pub fn spec(self, per_side: usize) -> Result<SimSpec> {
        match self {
            TruthPreset::Sparse => sparse_spec(per_side),
            TruthPreset::Staircase => staircase_spec(per_side),
        }
    }
}

/// One benchmark cell and how to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub preset: TruthPreset,
    pub per_side: usize,
    pub m: usize,
    pub sigma2: f64,
    pub replicates: usize,
    /// Replicate `r` simulates with seed `seed + r`.
    pub seed: u64,
    pub kernel_a: f64,
    pub kernel_b: f64,
    /// Smallest recovery ratio of the truncated eigensystem.
    pub recovery_ratio: f64,
    /// Fixed uniform threshold prior `(lo, hi)` for every covariate; elicited
    /// from the data when absent.
    pub lambda_prior: Option<(f64, f64)>,
    pub elicit: ElicitOptions,
    pub mcmc: McmcConfig,
    /// Level of the GLM p-value rules.
    pub glm_level: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            preset: TruthPreset::Sparse,
            per_side: 30,
            m: 50,
            sigma2: 4.0,
            replicates: 5,
            seed: 0,
            kernel_a: 0.25,
            kernel_b: 30.0,
            recovery_ratio: 0.9,
            lambda_prior: Some((0.3, 1.25)),
            elicit: ElicitOptions::default(),
            mcmc: McmcConfig::default(),
            glm_level: 0.05,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        validate_side(self.per_side)?;
        if self.m == 0 || self.replicates == 0 {
            return Err(invalid("bench needs m > 0 and at least one replicate"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(invalid("bench noise variance must be positive"));
        }
        if let Some((lo, hi)) = self.lambda_prior {
            LambdaPrior::from_bounds(lo, hi)?;
        }
        if !(self.glm_level > 0.0 && self.glm_level < 1.0) {
            return Err(invalid("GLM level must lie in (0, 1)"));
        }
        self.elicit.validate()?;
        self.mcmc.validate()
    }

    pub fn n(&self) -> usize {
        self.per_side * self.per_side
    }
}

/// Shared per-cell state: eigensystem, domain and, for data-independent
/// blocking, the sampler precomputation.
pub struct BenchContext {
    pub config: BenchConfig,
    pub eig: EigenSystem,
    pub domain: SpatialDomain,
    shared: Option<Precomputed>,
}

/// Everything produced for one replicate.
pub struct ReplicateFit {
    pub replicate: u64,
    pub data: Dataset,
    pub truth: GroundTruth,
    pub fit: BasisFit,
    pub priors: Vec<LambdaPrior>,
    pub chain: ChainOutput,
    pub glm: GlmFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaLearning {
    pub replicate: u64,
    pub covariate: usize,
    pub prior_sd: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
}

impl BenchContext {
    pub fn new(config: BenchConfig) -> Result<Self> {
        config.validate()?;
        let params = KernelParams::new(config.kernel_a, config.kernel_b, 2)?;
        let eig = truncation_level(config.recovery_ratio, params)?;
        let domain = config.preset.spec(config.per_side)?.domain()?;
        let shared = match config.mcmc.blocks {
            BlockSpec::Kmeans { .. } => None,
            _ => {
                let placeholder = BasisFit {
                    coeffs: DMatrix::zeros(0, 0),
                    beta_hat: DMatrix::zeros(0, 0),
                    beta_ols: DMatrix::zeros(0, 0),
                    rank: 0,
                };
                let labels = block_labels(&config.mcmc.blocks, &domain, &placeholder, config.mcmc.seed)?;
                Some(Precomputed::new(&domain, &eig, config.mcmc.b_grid.as_deref(), labels)?)
            }
        };
        Ok(Self {
            config,
            eig,
            domain,
            shared,
        })
    }

    pub fn simulate(&self, replicate: u64) -> Result<(Dataset, GroundTruth)> {
        let spec = self.config.preset.spec(self.config.per_side)?;
        simulate(&spec, self.config.m, self.config.sigma2, self.config.seed.wrapping_add(replicate))
    }

    fn priors(&self, ds: &Dataset) -> Result<(BasisFit, Vec<LambdaPrior>)> {
        match self.config.lambda_prior {
            Some((lo, hi)) => Ok((ols_basis_fit(ds, &self.eig)?, vec![LambdaPrior::from_bounds(lo, hi)?; ds.covariates()])),
            None => {
                let el = elicit_all(ds, &self.eig, Default::default(), &self.config.elicit)?;
                Ok((el.fit, el.priors))
            }
        }
    }

    /// Run a chain with `config` on `ds`, reusing the shared precomputation
    /// when blocks do not depend on the data.
    pub fn run_chain(&self, ds: &Dataset, fit: &BasisFit, priors: &[LambdaPrior], config: &McmcConfig) -> Result<ChainOutput> {
        let owned;
        let pre = match &self.shared {
            Some(p) => p,
            None => {
                let labels = block_labels(&config.blocks, &ds.domain, fit, config.seed)?;
                owned = Precomputed::new(&ds.domain, &self.eig, config.b_grid.as_deref(), labels)?;
                &owned
            }
        };
        Sampler::new(ds, pre, priors.to_vec(), config.clone(), fit)?.run(fit)
    }

    fn replicate_mcmc(&self, replicate: u64) -> McmcConfig {
        McmcConfig {
            seed: self.config.mcmc.seed.wrapping_add(replicate),
            ..self.config.mcmc.clone()
        }
    }

    pub fn fit_replicate(&self, replicate: u64) -> Result<ReplicateFit> {
        let (data, truth) = self.simulate(replicate)?;
        let (fit, priors) = self.priors(&data)?;
        let chain = self.run_chain(&data, &fit, &priors, &self.replicate_mcmc(replicate))?;
        let glm = glm_fit(&data)?;
        Ok(ReplicateFit {
            replicate,
            data,
            truth,
            fit,
            priors,
            chain,
            glm,
        })
    }

    /// Scores of the TMGP estimate and the three GLM rules.
    pub fn score(&self, rf: &ReplicateFit) -> Result<Vec<ScoreReport>> {
        let cfg = &self.config;
        let est = estimate_for_mode(&rf.chain, &rf.data.domain, cfg.mcmc.mode, cfg.mcmc.q)?;
        let mut out = vec![ScoreReport::score(TMGP_LABEL, rf.replicate, &est.beta_hat, &rf.glm.beta_star, &rf.truth.beta)?];
        for method in [GlmMethod::Fdr, GlmMethod::T, GlmMethod::Bonferroni] {
            let (e, _) = thresholded_estimate(&rf.glm, method, cfg.glm_level)?;
            out.push(ScoreReport::score(method.label(), rf.replicate, &e, &rf.glm.beta_star, &rf.truth.beta)?);
        }
        Ok(out)
    }

    pub fn lambda_learning(&self, rf: &ReplicateFit) -> Vec<LambdaLearning> {
        let draws = rf.chain.n_draws() as f64;
        (0..rf.priors.len())
            .map(|k| {
                let mean = rf.chain.lambda.iter().map(|l| l[k]).sum::<f64>() / draws;
                let var = rf.chain.lambda.iter().map(|l| (l[k] - mean).powi(2)).sum::<f64>() / (draws - 1.0).max(1.0);
                LambdaLearning {
                    replicate: rf.replicate,
                    covariate: k,
                    prior_sd: rf.priors[k].sd(),
                    posterior_mean: mean,
                    posterior_sd: var.sqrt(),
                }
            })
            .collect()
    }

    /// ROC curves for TMGP (all thresholds fixed at `c · prior center` for
    /// each multiplier `c`, chains of `iterations` steps) and for the GLM
    /// rules (level sweep).
    pub fn roc(&self, replicate: u64, multipliers: &[f64], levels: &[f64], iterations: usize) -> Result<Vec<MethodRoc>> {
        if multipliers.is_empty() || levels.is_empty() {
            return Err(invalid("ROC sweep needs multipliers and levels"));
        }
        let (data, truth) = self.simulate(replicate)?;
        let (fit, priors) = self.priors(&data)?;
        let base = McmcConfig {
            iterations,
            burn_in: iterations / 2,
            ..self.replicate_mcmc(replicate)
        };
        base.validate()?;
        let mut tmgp = Vec::with_capacity(multipliers.len());
        for &c in multipliers {
            let cfg = McmcConfig {
                fixed_lambda: Some(priors.iter().map(|p| c * p.center).collect()),
                ..base.clone()
            };
            let chain = self.run_chain(&data, &fit, &priors, &cfg)?;
            let est = estimate_for_mode(&chain, &data.domain, cfg.mode, cfg.q)?;
            let (fpr, tpr) = confusion_rates(&est.support(), &truth.beta)?;
            tmgp.push(RocPoint { param: c, fpr, tpr });
        }
        let mut out = vec![MethodRoc::new(TMGP_LABEL, replicate, RocCurve::from_points(tmgp))?];
        let glm = glm_fit(&data)?;
        for method in [GlmMethod::Fdr, GlmMethod::T, GlmMethod::Bonferroni] {
            let mut pts = Vec::with_capacity(levels.len());
            for &lv in levels {
                let (_, mask) = thresholded_estimate(&glm, method, lv)?;
                let (fpr, tpr) = confusion_rates(&mask, &truth.beta)?;
                pts.push(RocPoint { param: lv, fpr, tpr });
            }
            out.push(MethodRoc::new(method.label(), replicate, RocCurve::from_points(pts))?);
        }
        Ok(out)
    }
}

/// ROC curve of one method on one replicate with its partial AUC over
/// `FPR ≤ 0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRoc {
    pub method: String,
    pub replicate: u64,
    pub curve: RocCurve,
    pub pauc_raw: f64,
    pub pauc_normalized: f64,
}

impl MethodRoc {
    fn new(method: &str, replicate: u64, curve: RocCurve) -> Result<Self> {
        let (raw, norm) = partial_auc(&curve, 0.1)?;
        Ok(Self {
            method: method.to_string(),
            replicate,
            curve,
            pauc_raw: raw,
            pauc_normalized: norm,
        })
    }
}

/// Default multiplier grid for the shared-threshold ROC sweep.
pub fn default_multipliers() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 1e6]
}

/// Log-spaced p-value levels from `1e-8` to `0.5`, plus `1`.
pub fn default_levels() -> Vec<f64> {
    let mut v: Vec<f64> = (0..=40).map(|i| 10f64.powf(-8.0 + 7.69897 * i as f64 / 40.0)).collect();
    v.push(1.0 - 1e-12);
    v
}

/// Scores and threshold learning for every replicate of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub config: BenchConfig,
    pub scores: Vec<ScoreReport>,
    pub table: Vec<AggregateRow>,
    pub lambda: Vec<LambdaLearning>,
}

/// Run every replicate of a cell, `workers` replicates at a time.
pub fn run_cell(config: BenchConfig, workers: usize) -> Result<CellReport> {
    let ctx = BenchContext::new(config)?;
    let reps: Vec<u64> = (0..ctx.config.replicates as u64).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    let results: Vec<Result<(Vec<ScoreReport>, Vec<LambdaLearning>)>> = pool.install(|| {
        reps.par_iter()
            .map(|&r| {
                let rf = ctx.fit_replicate(r)?;
                Ok((ctx.score(&rf)?, ctx.lambda_learning(&rf)))
            })
            .collect()
    });
    let mut scores = Vec::new();
    let mut lambda = Vec::new();
    for r in results {
        let (s, l) = r?;
        scores.extend(s);
        lambda.extend(l);
    }
    Ok(CellReport {
        table: aggregate(&scores),
        config: ctx.config,
        scores,
        lambda,
    })
}

/// The simulation grid over `n`, `m` and `σ²`.
pub fn grid_cells(base: &BenchConfig, ns: &[usize], ms: &[usize], sigma2s: &[f64]) -> Result<Vec<BenchConfig>> {
    let mut out = Vec::new();
    for &n in ns {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(invalid(format!("grid size {n} is not a perfect square")));
        }
        for &m in ms {
            for &s2 in sigma2s {
                out.push(BenchConfig {
                    per_side: side,
                    m,
                    sigma2: s2,
                    ..base.clone()
                });
            }
        }
    }
    Ok(out)
}

/// Location counts, subject counts and noise levels of the full study grid.
pub const STUDY_N: [usize; 3] = [900, 2500, 3600];
pub const STUDY_M: [usize; 2] = [50, 100];
pub const STUDY_SIGMA2: [f64; 2] = [2.0, 4.0];

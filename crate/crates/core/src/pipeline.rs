//! File-to-file pipeline stages. Each stage reads JSON configuration and
//! input directories, writes CSV/JSON artifacts into an output directory and
//! echoes its configuration into `run.json` there.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{glm_fit, thresholded_estimate, GlmMethod};
use crate::bench::{default_levels, default_multipliers, grid_cells, run_cell, BenchConfig, BenchContext, MethodRoc, TruthPreset};
use crate::csvio::{fmt_f64, read_json, write_json, write_matrix, write_matrix_with_header};
use crate::elicitation::{elicit_all, ols_basis_fit, BasisSolve, ElicitOptions, LambdaPrior};
use crate::error::{invalid, Error, Result};
use crate::inference::{estimate_for_mode, PredictOptions, Predictor};
use crate::kernel::{recovery_ratio, truncation_level, EigenSystem, KernelParams};
use crate::mcmc::io::{read_chain, write_chain};
use crate::mcmc::{block_labels, McmcConfig, Precomputed, Sampler};
use crate::metrics::{aggregate, write_rows, AggregateRow, ScoreReport};
use crate::model::{read_dataset, simulate, write_dataset, SimSpec};
use crate::Points;

/// File holding the configuration echo of the stage that wrote a directory.
pub const RUN_FILE: &str = "run.json";
/// Kernel settings stored next to a chain so later stages can rebuild the basis.
pub const KERNEL_FILE: &str = "kernel.json";

#[derive(Serialize)]
struct RunEcho<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
}

fn echo<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join(RUN_FILE),
        &RunEcho {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Kernel and truncation shared by every stage that touches the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub a: f64,
    pub b: f64,
    /// Truncate at the smallest degree reaching this recovery ratio.
    pub recovery_ratio: f64,
    /// Explicit maximum total degree; overrides `recovery_ratio`.
    pub max_degree: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            a: 0.25,
            b: 30.0,
            recovery_ratio: 0.9,
            max_degree: None,
        }
    }
}

impl KernelConfig {
    pub fn eigensystem(&self, dim: usize) -> Result<EigenSystem> {
        let params = KernelParams::new(self.a, self.b, dim)?;
        match self.max_degree {
            Some(m) => EigenSystem::with_max_degree(params, m),
            None => truncation_level(self.recovery_ratio, params),
        }
    }
}

// ---------------------------------------------------------------- kernel-info

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelInfoConfig {
    pub dim: usize,
    pub kernel: KernelConfig,
}

impl Default for KernelInfoConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            kernel: KernelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelInfoManifest {
    pub a: f64,
    pub b: f64,
    pub d: usize,
    pub m_deg: usize,
    #[serde(rename = "L")]
    pub len: usize,
    pub ratio: f64,
    pub decay: f64,
    pub zeta_1: f64,
    pub config: KernelInfoConfig,
}

/// Writes `eigen.csv` (one row per eigenpair), `ratios.csv` (recovery ratio
/// per maximum degree) and `manifest.json`.
pub fn kernel_info(config: &KernelInfoConfig, out: &Path) -> Result<KernelInfoManifest> {
    let eig = config.kernel.eigensystem(config.dim)?;
    echo(out, "kernel-info", config)?;
    let mut buf = Vec::new();
    eig.write_csv(&mut buf)?;
    std::fs::write(out.join("eigen.csv"), buf)?;
    let mut ratios = String::from("m_deg,L,ratio\n");
    for m in 0..=eig.max_degree {
        let len = crate::kernel::binom((m + config.dim) as u64, config.dim as u64);
        ratios.push_str(&format!("{m},{len},{}\n", fmt_f64(recovery_ratio(&eig.params, m))));
    }
    write_text(&out.join("ratios.csv"), &ratios)?;
    let base = eig.manifest();
    let manifest = KernelInfoManifest {
        a: base.a,
        b: base.b,
        d: base.d,
        m_deg: base.m_deg,
        len: base.len,
        ratio: base.ratio,
        decay: eig.params.decay(),
        zeta_1: eig.eigenvalues[0],
        config: config.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ------------------------------------------------------------------- simulate

/// Where the synthetic truth comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TruthSource {
    Preset { preset: TruthPreset, per_side: usize },
    Custom { spec: SimSpec },
}

impl TruthSource {
    pub fn spec(&self) -> Result<SimSpec> {
        match self {
            TruthSource::Preset { preset, per_side } => preset.spec(*per_side),
            TruthSource::Custom { spec } => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub truth: TruthSource,
    pub m: usize,
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            truth: TruthSource::Preset {
                preset: TruthPreset::Sparse,
                per_side: 30,
            },
            m: 50,
            sigma2: 4.0,
            seed: 0,
        }
    }
}

/// Writes a dataset directory including `truth.csv`.
pub fn simulate_stage(config: &SimulateConfig, out: &Path) -> Result<()> {
    let spec = config.truth.spec()?;
    let (ds, truth) = simulate(&spec, config.m, config.sigma2, config.seed)?;
    echo(out, "simulate", config)?;
    write_dataset(out, &ds, Some(&truth.beta), Some(config.sigma2), Some(config.seed))?;
    write_json(&out.join("truth_meta.json"), &TruthMeta {
        active_regions: truth.active_regions,
        floor: truth.floor,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub active_regions: Vec<Vec<usize>>,
    pub floor: Vec<f64>,
}

// --------------------------------------------------------------------- elicit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElicitConfig {
    pub data: PathBuf,
    pub kernel: KernelConfig,
    pub solve: BasisSolve,
    pub options: ElicitOptions,
}

impl Default for ElicitConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            kernel: KernelConfig::default(),
            solve: BasisSolve::default(),
            options: ElicitOptions::default(),
        }
    }
}

/// Writes `priors.json`, `profile_<k>.csv` per covariate and the smoothed
/// pre-fit images `beta_hat.csv`.
pub fn elicit_stage(config: &ElicitConfig, out: &Path) -> Result<Vec<LambdaPrior>> {
    let (ds, _, _) = read_dataset(&config.data)?;
    let eig = config.kernel.eigensystem(ds.domain.dim())?;
    let el = elicit_all(&ds, &eig, config.solve, &config.options)?;
    echo(out, "elicit", config)?;
    write_json(&out.join("priors.json"), &el.priors)?;
    for (k, prof) in el.profiles.iter().enumerate() {
        let mut text = String::from("lambda,value\n");
        for (g, v) in prof.grid.iter().zip(&prof.values) {
            text.push_str(&format!("{},{}\n", fmt_f64(*g), fmt_f64(*v)));
        }
        write_text(&out.join(format!("profile_{k}.csv")), &text)?;
    }
    write_matrix(&out.join("beta_hat.csv"), &el.fit.beta_hat)?;
    Ok(el.priors)
}

// ------------------------------------------------------------------------ fit

/// How the threshold priors of a fit are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PriorSource {
    /// `priors.json` written by the elicit stage.
    File { path: PathBuf },
    /// The same uniform prior on `[lo, hi]` for every covariate.
    Uniform { lo: f64, hi: f64 },
    /// Elicit from the data with these options.
    Elicit {
        #[serde(default)]
        options: ElicitOptions,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub data: PathBuf,
    pub kernel: KernelConfig,
    pub priors: PriorSource,
    pub mcmc: McmcConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            kernel: KernelConfig::default(),
            priors: PriorSource::Uniform { lo: 0.3, hi: 1.25 },
            mcmc: McmcConfig::default(),
        }
    }
}

/// Runs the sampler and writes a chain directory plus `kernel.json`.
/// `workers > 1` updates the blocks of each covariate concurrently.
pub fn fit_stage(config: &FitConfig, workers: usize, out: &Path) -> Result<()> {
    let (ds, _, _) = read_dataset(&config.data)?;
    let eig = config.kernel.eigensystem(ds.domain.dim())?;
    let (fit, priors) = match &config.priors {
        PriorSource::File { path } => {
            let priors: Vec<LambdaPrior> = read_json(path)?;
            (ols_basis_fit(&ds, &eig)?, priors)
        }
        PriorSource::Uniform { lo, hi } => (ols_basis_fit(&ds, &eig)?, vec![LambdaPrior::from_bounds(*lo, *hi)?; ds.covariates()]),
        PriorSource::Elicit { options } => {
            let el = elicit_all(&ds, &eig, BasisSolve::default(), options)?;
            (el.fit, el.priors)
        }
    };
    let mcmc = McmcConfig {
        parallel_blocks: config.mcmc.parallel_blocks || workers > 1,
        ..config.mcmc.clone()
    };
    mcmc.validate()?;
    let labels = block_labels(&mcmc.blocks, &ds.domain, &fit, mcmc.seed)?;
    let pre = Precomputed::new(&ds.domain, &eig, mcmc.b_grid.as_deref(), labels)?;
    let sampler = Sampler::new(&ds, &pre, priors, mcmc, &fit)?;
    let chain = with_pool(workers, || sampler.run(&fit))?;
    write_chain(out, &chain)?;
    write_json(&out.join(KERNEL_FILE), &config.kernel)?;
    echo(out, "fit", config)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    pool.install(f)
}

// ---------------------------------------------------------------------- infer

/// Prediction targets for the infer stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PredictTargets {
    None,
    Points { points: Vec<Vec<f64>> },
    /// Regular grid with this many points per side over the unit cube.
    Grid { per_side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub data: PathBuf,
    pub chain: PathBuf,
    pub q: f64,
    /// Regional or voxel selection; defaults to the mode of the chain.
    pub granularity: Option<crate::tmgp::ThresholdMode>,
    pub predict: PredictTargets,
    pub literal: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            chain: PathBuf::from("chain"),
            q: 0.9,
            granularity: None,
            predict: PredictTargets::None,
            literal: false,
        }
    }
}

/// Writes `estimate.csv`, `selection.csv`, `summary.json` and, when
/// requested, `predictions.csv` (one row per target: coordinates then `p`
/// predicted coefficients).
pub fn infer_stage(config: &InferConfig, workers: usize, out: &Path) -> Result<()> {
    let (ds, _, _) = read_dataset(&config.data)?;
    let chain = read_chain(&config.chain)?;
    let mode = config.granularity.unwrap_or(chain.config.mode);
    let est = estimate_for_mode(&chain, &ds.domain, mode, config.q)?;
    echo(out, "infer", config)?;
    est.write(out, chain.n_draws())?;
    let targets = match &config.predict {
        PredictTargets::None => None,
        PredictTargets::Points { points } => Some(Points::from_rows(points)?),
        PredictTargets::Grid { per_side } => Some(Points::unit_grid(ds.domain.dim(), *per_side)?),
    };
    if let Some(targets) = targets {
        let kernel: KernelConfig = read_json(&config.chain.join(KERNEL_FILE))?;
        let eig = kernel.eigensystem(ds.domain.dim())?;
        let opts = PredictOptions {
            q: config.q,
            granularity: mode,
            literal: config.literal,
        };
        let predictor = Predictor::new(&chain, &ds.domain, &eig, opts)?;
        let pred = with_pool(workers, || predictor.predict_many(&targets))?;
        let d = targets.dim();
        let mut header: Vec<String> = (1..=d).map(|j| format!("s{j}")).collect();
        header.extend((0..ds.covariates()).map(|k| format!("beta{k}")));
        let table = DMatrix::from_fn(targets.len(), d + pred.ncols(), |i, j| {
            if j < d {
                targets.point(i)[j]
            } else {
                pred[(i, j - d)]
            }
        });
        write_matrix_with_header(&out.join("predictions.csv"), &header, &table)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub data: PathBuf,
    pub level: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            level: 0.05,
        }
    }
}

const GLM_METHODS: [GlmMethod; 3] = [GlmMethod::T, GlmMethod::Fdr, GlmMethod::Bonferroni];

fn method_slug(m: GlmMethod) -> &'static str {
    match m {
        GlmMethod::T => "t",
        GlmMethod::Fdr => "fdr",
        GlmMethod::Bonferroni => "bonferroni",
    }
}

fn mask_to_f64(mask: &DMatrix<bool>) -> DMatrix<f64> {
    mask.map(|b| if b { 1.0 } else { 0.0 })
}

/// Writes the voxelwise fit (`glm_beta.csv`, `glm_se.csv`, `glm_t.csv`,
/// `glm_p.csv`) and, per rule, `estimate_<rule>.csv` and `mask_<rule>.csv`.
pub fn baseline_stage(config: &BaselineConfig, out: &Path) -> Result<()> {
    let (ds, _, _) = read_dataset(&config.data)?;
    let fit = glm_fit(&ds)?;
    echo(out, "baseline", config)?;
    write_matrix(&out.join("glm_beta.csv"), &fit.beta_star)?;
    write_matrix(&out.join("glm_se.csv"), &fit.se)?;
    write_matrix(&out.join("glm_t.csv"), &fit.t)?;
    write_matrix(&out.join("glm_p.csv"), &fit.pvals)?;
    for method in GLM_METHODS {
        let (est, mask) = thresholded_estimate(&fit, method, config.level)?;
        write_matrix(&out.join(format!("estimate_{}.csv", method_slug(method))), &est)?;
        write_matrix(&out.join(format!("mask_{}.csv", method_slug(method))), &mask_to_f64(&mask))?;
    }
    Ok(())
}

// ------------------------------------------------------------------- evaluate

/// One fitted replicate: a dataset with `truth.csv` and its chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub data: PathBuf,
    pub chain: Option<PathBuf>,
    #[serde(default)]
    pub replicate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub runs: Vec<EvalRun>,
    pub q: f64,
    pub glm_level: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            runs: vec![EvalRun {
                data: PathBuf::from("data"),
                chain: Some(PathBuf::from("chain")),
                replicate: 0,
            }],
            q: 0.9,
            glm_level: 0.05,
        }
    }
}

/// Writes `scores.csv` (one row per method and replicate) and `table.csv`
/// (mean and standard deviation per method).
pub fn evaluate_stage(config: &EvaluateConfig, out: &Path) -> Result<Vec<AggregateRow>> {
    if config.runs.is_empty() {
        return Err(invalid("evaluate needs at least one run"));
    }
    let mut scores = Vec::new();
    for run in &config.runs {
        let (ds, truth, _) = read_dataset(&run.data)?;
        let truth = truth.ok_or_else(|| Error::Validation(format!("{} has no truth.csv", run.data.display())))?;
        let glm = glm_fit(&ds)?;
        if let Some(dir) = &run.chain {
            let chain = read_chain(dir)?;
            let est = estimate_for_mode(&chain, &ds.domain, chain.config.mode, config.q)?;
            scores.push(ScoreReport::score(crate::bench::TMGP_LABEL, run.replicate, &est.beta_hat, &glm.beta_star, &truth)?);
        }
        for method in [GlmMethod::Fdr, GlmMethod::T, GlmMethod::Bonferroni] {
            let (e, _) = thresholded_estimate(&glm, method, config.glm_level)?;
            scores.push(ScoreReport::score(method.label(), run.replicate, &e, &glm.beta_star, &truth)?);
        }
    }
    let table = aggregate(&scores);
    echo(out, "evaluate", config)?;
    write_rows(&scores, std::fs::File::create(out.join("scores.csv"))?)?;
    write_rows(&table, std::fs::File::create(out.join("table.csv"))?)?;
    Ok(table)
}

// ------------------------------------------------------------------------ roc

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RocConfig {
    pub bench: BenchConfig,
    /// Shared multipliers applied to every prior center.
    pub multipliers: Vec<f64>,
    /// p-value levels swept for the GLM rules.
    pub levels: Vec<f64>,
    /// Chain length per multiplier; half is burn-in.
    pub iterations: usize,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            bench: BenchConfig::default(),
            multipliers: default_multipliers(),
            levels: default_levels(),
            iterations: 2000,
        }
    }
}

/// Per method and replicate partial AUC over `FPR ≤ 0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaucRow {
    pub method: String,
    pub replicate: u64,
    pub pauc_raw: f64,
    pub pauc_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaucSummary {
    pub method: String,
    pub replicates: usize,
    pub mean_normalized: f64,
    pub sd_normalized: f64,
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace(|c: char| !c.is_ascii_alphanumeric(), "_")
}

/// Runs the ROC sweep on every replicate of `config.bench` and writes
/// `roc_<method>_<rep>.csv`, `pauc.csv` and `pauc_table.csv`.
pub fn roc_stage(config: &RocConfig, workers: usize, out: &Path) -> Result<Vec<MethodRoc>> {
    let ctx = BenchContext::new(config.bench.clone())?;
    let reps: Vec<u64> = (0..config.bench.replicates as u64).collect();
    let results: Vec<Result<Vec<MethodRoc>>> = with_pool(workers, || {
        Ok(reps
            .par_iter()
            .map(|&r| ctx.roc(r, &config.multipliers, &config.levels, config.iterations))
            .collect())
    })?;
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    echo(out, "roc", config)?;
    let mut rows = Vec::with_capacity(all.len());
    for mr in &all {
        let mut buf = Vec::new();
        mr.curve.write_csv(&mut buf)?;
        std::fs::write(out.join(format!("roc_{}_{}.csv", slug(&mr.method), mr.replicate)), buf)?;
        rows.push(PaucRow {
            method: mr.method.clone(),
            replicate: mr.replicate,
            pauc_raw: mr.pauc_raw,
            pauc_normalized: mr.pauc_normalized,
        });
    }
    write_rows(&rows, std::fs::File::create(out.join("pauc.csv"))?)?;
    write_rows(&pauc_summary(&rows), std::fs::File::create(out.join("pauc_table.csv"))?)?;
    Ok(all)
}

fn pauc_summary(rows: &[PaucRow]) -> Vec<PaucSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.pauc_normalized).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            PaucSummary {
                method: m.to_string(),
                replicates: v.len(),
                mean_normalized: mean,
                sd_normalized: sd,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchStageConfig {
    /// Settings shared by every cell; `per_side`, `m` and `sigma2` are
    /// replaced by the grid values.
    pub base: BenchConfig,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub sigma2: Vec<f64>,
}

impl Default for BenchStageConfig {
    fn default() -> Self {
        Self {
            base: BenchConfig::default(),
            n: crate::bench::STUDY_N.to_vec(),
            m: crate::bench::STUDY_M.to_vec(),
            sigma2: crate::bench::STUDY_SIGMA2.to_vec(),
        }
    }
}

/// Runs every cell of the grid and writes per-cell directories plus a
/// combined `table.csv`.
pub fn bench_stage(config: &BenchStageConfig, workers: usize, out: &Path) -> Result<()> {
    let cells = grid_cells(&config.base, &config.n, &config.m, &config.sigma2)?;
    echo(out, "bench", config)?;
    let mut combined = Vec::new();
    for cell in cells {
        let (n, m, s2) = (cell.n(), cell.m, cell.sigma2);
        let report = run_cell(cell, workers)?;
        let dir = out.join(format!("n{n}_m{m}_s{}", fmt_f64(s2)));
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("cell.json"), &report.config)?;
        write_rows(&report.scores, std::fs::File::create(dir.join("scores.csv"))?)?;
        write_rows(&report.table, std::fs::File::create(dir.join("table.csv"))?)?;
        write_rows(&report.lambda, std::fs::File::create(dir.join("lambda.csv"))?)?;
        combined.extend(report.table.into_iter().map(|row| (n, m, s2, row)));
    }
    let mut w = csv::Writer::from_writer(std::fs::File::create(out.join("table.csv"))?);
    w.write_record(["n", "m", "sigma2", "method", "replicates", "remse_mean", "remse_sd", "fdr_mean", "fdr_sd", "fnr_mean", "fnr_sd"])?;
    for (n, m, s2, r) in &combined {
        let mut rec = vec![n.to_string(), m.to_string(), fmt_f64(*s2), r.method.clone(), r.replicates.to_string()];
        rec.extend([r.remse_mean, r.remse_sd, r.fdr_mean, r.fdr_sd, r.fnr_mean, r.fnr_sd].iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

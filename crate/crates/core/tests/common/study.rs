//! Simulation-study checks: benchmark ordering, ROC, elicitation coverage,
//! infill trend, threshold learning and pipeline determinism.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tmgp_svcm::bench::{default_levels, default_multipliers, run_cell, staircase_spec, BenchConfig, BenchContext, CellReport, TruthPreset, TMGP_LABEL};
use tmgp_svcm::elicitation::{elicit_all, BasisSolve, ElicitOptions};
use tmgp_svcm::kernel::{truncation_level, KernelParams};
use tmgp_svcm::mcmc::McmcConfig;
use tmgp_svcm::metrics::AggregateRow;
use tmgp_svcm::model::simulate;
use tmgp_svcm::pipeline::{
    baseline_stage, bench_stage, elicit_stage, evaluate_stage, fit_stage, infer_stage, kernel_info, roc_stage, simulate_stage,
    BaselineConfig, BenchStageConfig, ElicitConfig, EvalRun, EvaluateConfig, FitConfig, InferConfig, KernelConfig,
    KernelInfoConfig, PredictTargets, PriorSource, RocConfig, SimulateConfig, TruthSource,
};

use super::Outcome;

fn row<'a>(table: &'a [AggregateRow], method: &str) -> &'a AggregateRow {
    table.iter().find(|r| r.method == method).expect("method row")
}

/// Five replicates of the scoring preset at `n = 900`, `m = 50`, `σ² = 4`
/// with 10,000 iterations per fit.
pub fn scoring_cell() -> CellReport {
    run_cell(BenchConfig::default(), 1).expect("scoring cell")
}

pub fn benchmark_reproduction(cell: &CellReport) -> Outcome {
    let t = &cell.table;
    let (tm, fdr, naive, bonf) = (row(t, TMGP_LABEL), row(t, "GLM-FDR"), row(t, "GLM-t"), row(t, "GLM-Bonferroni"));
    let a = tm.remse_mean < fdr.remse_mean;
    let b = tm.fdr_mean <= 0.10 && tm.fnr_mean <= 0.05;
    let c = tm.remse_mean < fdr.remse_mean && fdr.remse_mean < naive.remse_mean;
    let fmt = |r: &AggregateRow| format!("{} {:.3}/{:.1}%/{:.1}%", r.method, r.remse_mean, 100.0 * r.fdr_mean, 100.0 * r.fnr_mean);
    Outcome::new(
        a && b && c,
        format!("(a) {a} (b) {b} (c) {c}; {}; {}; {}; {}", fmt(tm), fmt(fdr), fmt(naive), fmt(bonf)),
    )
}

/// Normalized pAUC of TMGP against GLM-FDR on five replicates, with
/// 2,000-iteration chains per threshold multiplier.
pub fn roc_ordering() -> Outcome {
    let ctx = BenchContext::new(BenchConfig::default()).expect("context");
    let (mults, levels) = (default_multipliers(), default_levels());
    let mut wins = 0;
    let mut pairs = Vec::new();
    for rep in 0..5 {
        let rocs = ctx.roc(rep, &mults, &levels, 2000).expect("roc");
        let get = |m: &str| rocs.iter().find(|r| r.method == m).expect("method").pauc_normalized;
        let (tm, fdr) = (get(TMGP_LABEL), get("GLM-FDR"));
        if tm >= fdr {
            wins += 1;
        }
        pairs.push(format!("{tm:.3}/{fdr:.3}"));
    }
    Outcome::new(wins >= 4, format!("TMGP >= GLM-FDR on {wins}/5 replicates (TMGP/GLM-FDR: {})", pairs.join(", ")))
}

/// Coverage of the true thresholds `2, 3, 4` by the elicited intervals over
/// 50 replicates.
pub fn elicitation_coverage() -> Outcome {
    let spec = staircase_spec(30).expect("spec");
    let eig = truncation_level(0.9, KernelParams::new(0.25, 30.0, 2).expect("params")).expect("eigensystem");
    let reps = 50;
    let mut covered = [0usize; 3];
    for seed in 0..reps {
        let (ds, truth) = simulate(&spec, 50, 4.0, seed).expect("simulate");
        if let Ok(el) = elicit_all(&ds, &eig, BasisSolve::default(), &ElicitOptions::default()) {
            for (k, hit) in covered.iter_mut().enumerate() {
                if el.priors[k].contains(truth.floor[k]) {
                    *hit += 1;
                }
            }
        }
    }
    let rates: Vec<f64> = covered.iter().map(|c| *c as f64 / reps as f64).collect();
    Outcome::new(rates.iter().all(|r| *r >= 0.8), format!("coverage of lambda = 2, 3, 4: {rates:?}"))
}

/// Mean TMGP ReMSE at `n = 3600` against `n = 900` for the same truth with
/// `m = 50`, `σ² = 2`, three replicates and 5,000-iteration chains.
pub fn infill_trend() -> Outcome {
    let at = |per_side| {
        let cfg = BenchConfig {
            per_side,
            sigma2: 2.0,
            replicates: 3,
            mcmc: McmcConfig {
                iterations: 5000,
                burn_in: 2500,
                ..Default::default()
            },
            ..Default::default()
        };
        row(&run_cell(cfg, 1).expect("cell").table, TMGP_LABEL).remse_mean
    };
    let (coarse, fine) = (at(30), at(60));
    Outcome::new(fine <= coarse, format!("mean ReMSE n=900 {coarse:.4}, n=3600 {fine:.4}"))
}

/// Posterior against prior sd of every threshold on staircase-preset fits with
/// elicited priors; the fixed-prior scoring cell is reported alongside.
pub fn lambda_learning(fixed_prior: &CellReport) -> Outcome {
    let cell = run_cell(
        BenchConfig {
            preset: TruthPreset::Staircase,
            lambda_prior: None,
            ..Default::default()
        },
        1,
    )
    .expect("staircase cell");
    let shrink = |c: &CellReport| c.lambda.iter().map(|l| l.posterior_sd / l.prior_sd).fold(0.0f64, f64::max);
    let strict = |c: &CellReport| c.lambda.iter().filter(|l| l.posterior_sd < l.prior_sd).count();
    let pass = strict(&cell) == cell.lambda.len();
    Outcome::new(
        pass,
        format!(
            "elicited priors: {}/{} posterior sd < prior sd (max ratio {:.3}); uniform [0.3, 1.25] prior: {}/{} (max ratio {:.3})",
            strict(&cell),
            cell.lambda.len(),
            shrink(&cell),
            strict(fixed_prior),
            fixed_prior.lambda.len(),
            shrink(fixed_prior)
        ),
    )
}

/// Every stage on a small problem, writing into `root`.
pub fn run_pipeline(root: &Path) -> tmgp_svcm::Result<()> {
    let short = McmcConfig {
        iterations: 300,
        burn_in: 150,
        ..Default::default()
    };
    let data = root.join("data");
    let chain = root.join("chain");
    let priors = root.join("elicit");
    kernel_info(&KernelInfoConfig::default(), &root.join("kernel"))?;
    simulate_stage(
        &SimulateConfig {
            truth: TruthSource::Preset {
                preset: TruthPreset::Staircase,
                per_side: 16,
            },
            seed: 7,
            ..Default::default()
        },
        &data,
    )?;
    elicit_stage(
        &ElicitConfig {
            data: data.clone(),
            ..Default::default()
        },
        &priors,
    )?;
    fit_stage(
        &FitConfig {
            data: data.clone(),
            kernel: KernelConfig::default(),
            priors: PriorSource::File {
                path: priors.join("priors.json"),
            },
            mcmc: short.clone(),
        },
        1,
        &chain,
    )?;
    infer_stage(
        &InferConfig {
            data: data.clone(),
            chain: chain.clone(),
            predict: PredictTargets::Grid { per_side: 5 },
            ..Default::default()
        },
        1,
        &root.join("infer"),
    )?;
    baseline_stage(
        &BaselineConfig {
            data: data.clone(),
            ..Default::default()
        },
        &root.join("baseline"),
    )?;
    evaluate_stage(
        &EvaluateConfig {
            runs: vec![EvalRun {
                data: data.clone(),
                chain: Some(chain.clone()),
                replicate: 0,
            }],
            ..Default::default()
        },
        &root.join("evaluate"),
    )?;
    let small = BenchConfig {
        per_side: 12,
        m: 30,
        replicates: 2,
        mcmc: short,
        ..Default::default()
    };
    roc_stage(
        &RocConfig {
            bench: BenchConfig {
                replicates: 1,
                ..small.clone()
            },
            multipliers: vec![0.0, 1.0, 4.0],
            iterations: 200,
            ..Default::default()
        },
        1,
        &root.join("roc"),
    )?;
    bench_stage(
        &BenchStageConfig {
            base: small,
            n: vec![144],
            m: vec![30],
            sigma2: vec![4.0],
        },
        1,
        &root.join("bench"),
    )
}

/// Relative path to file contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("prefix").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    out
}

/// Runs the pipeline twice at the same paths and compares every output byte.
pub fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path().join("run");
    if let Err(e) = run_pipeline(&root) {
        return Outcome::new(false, format!("first run failed: {e}"));
    }
    let first = snapshot(&root);
    std::fs::remove_dir_all(&root).expect("clear");
    if let Err(e) = run_pipeline(&root) {
        return Outcome::new(false, format!("second run failed: {e}"));
    }
    let second = snapshot(&root);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let stages = first.keys().filter_map(|k| k.components().next()).collect::<std::collections::BTreeSet<_>>().len();
    Outcome::new(
        differing.is_empty(),
        format!("{} files across {stages} stage directories; differing: {differing:?}", first.len()),
    )
}

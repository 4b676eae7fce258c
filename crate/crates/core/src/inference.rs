//! Posterior summaries: selection probabilities, thresholded estimates and
//! kriging prediction at new locations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, write_json, write_matrix};
use crate::error::{invalid, Result};
use crate::kernel::{cross_kernel, gram, EigenSystem, KernelParams};
use crate::linalg::jittered_cholesky;
use crate::mcmc::ChainOutput;
use crate::model::SpatialDomain;
use crate::tmgp::ThresholdMode;

fn check_chain(chain: &ChainOutput) -> Result<()> {
    if chain.n_draws() == 0 {
        return Err(invalid("chain has no retained draws"));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.5 && q < 1.0) {
        return Err(invalid(format!("decision threshold q must lie in (0.5, 1), got {q}")));
    }
    Ok(())
}

/// Per-draw indicator that every member of `members` exceeds the threshold.
fn events(chain: &ChainOutput, k: usize, members: &[usize]) -> Vec<bool> {
    chain
        .beta_tilde
        .iter()
        .zip(&chain.lambda)
        .map(|(bt, lam)| members.iter().all(|&i| bt[(k, i)].abs() > lam[k]))
        .collect()
}

fn fraction(ev: &[bool]) -> f64 {
    ev.iter().filter(|e| **e).count() as f64 / ev.len() as f64
}

/// Share of draws in which region `region` (1-based) of covariate `k` survives
/// the threshold.
pub fn selection_prob(chain: &ChainOutput, domain: &SpatialDomain, k: usize, region: usize) -> Result<f64> {
    check_chain(chain)?;
    if region == 0 || region > domain.n_regions {
        return Err(invalid(format!("region {region} outside 1..={}", domain.n_regions)));
    }
    if k >= chain.beta_tilde[0].nrows() {
        return Err(invalid(format!("covariate index {k} out of range")));
    }
    Ok(fraction(&events(chain, k, &domain.region_members()[region - 1])))
}

/// Thresholded coefficient estimate with its selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcfEstimate {
    pub granularity: ThresholdMode,
    /// `p × G` for regional estimates, `p × n` for voxel estimates.
    pub selection_prob: DMatrix<f64>,
    /// `p × n`, zero wherever the governing probability is at most `q`.
    pub beta_hat: DMatrix<f64>,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub granularity: ThresholdMode,
    pub q: f64,
    pub draws: usize,
    /// Number of selected units per covariate.
    pub selected_units: Vec<usize>,
    pub nonzero_locations: Vec<usize>,
}

impl SvcfEstimate {
    pub fn summary(&self, draws: usize) -> EstimateSummary {
        let sel = self
            .selection_prob
            .row_iter()
            .map(|r| r.iter().filter(|p| **p > self.q).count())
            .collect();
        let nz = self
            .beta_hat
            .row_iter()
            .map(|r| r.iter().filter(|v| **v != 0.0).count())
            .collect();
        EstimateSummary {
            granularity: self.granularity,
            q: self.q,
            draws,
            selected_units: sel,
            nonzero_locations: nz,
        }
    }

    /// Selection mask `β̂ ≠ 0`.
    pub fn support(&self) -> DMatrix<bool> {
        self.beta_hat.map(|v| v != 0.0)
    }

    /// Write `estimate.csv` (p × n), `selection.csv` (long format keyed by
    /// covariate and unit) and `summary.json`.
    pub fn write(&self, dir: &Path, draws: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix(&dir.join("estimate.csv"), &self.beta_hat)?;
        let unit = match self.granularity {
            ThresholdMode::Regional => "region",
            ThresholdMode::Voxel => "location",
        };
        let mut w = BufWriter::new(File::create(dir.join("selection.csv"))?);
        writeln!(w, "covariate,{unit},prob")?;
        for k in 0..self.selection_prob.nrows() {
            for j in 0..self.selection_prob.ncols() {
                let id = match self.granularity {
                    ThresholdMode::Regional => j + 1,
                    ThresholdMode::Voxel => j,
                };
                writeln!(w, "{k},{id},{}", fmt_f64(self.selection_prob[(k, j)]))?;
            }
        }
        w.flush()?;
        write_json(&dir.join("summary.json"), &self.summary(draws))
    }
}

/// Regional estimate: a region is kept when its selection probability
/// exceeds `q`, and then carries the mean of `β̃` over the draws in which it
/// survives.
pub fn estimate(chain: &ChainOutput, domain: &SpatialDomain, q: f64) -> Result<SvcfEstimate> {
    check_chain(chain)?;
    check_q(q)?;
    let (p, n) = chain.beta_tilde[0].shape();
    let members = domain.region_members();
    let mut prob = DMatrix::zeros(p, members.len());
    let mut beta_hat = DMatrix::zeros(p, n);
    for k in 0..p {
        for (g, idx) in members.iter().enumerate() {
            let ev = events(chain, k, idx);
            let pr = fraction(&ev);
            prob[(k, g)] = pr;
            if pr > q {
                let hits = ev.iter().filter(|e| **e).count() as f64;
                for &i in idx {
                    let sum: f64 = chain
                        .beta_tilde
                        .iter()
                        .zip(&ev)
                        .filter(|(_, e)| **e)
                        .map(|(bt, _)| bt[(k, i)])
                        .sum();
                    beta_hat[(k, i)] = sum / hits;
                }
            }
        }
    }
    Ok(SvcfEstimate {
        granularity: ThresholdMode::Regional,
        selection_prob: prob,
        beta_hat,
        q,
    })
}

/// Voxel estimate: each location is its own region.
pub fn estimate_voxel(chain: &ChainOutput, q: f64) -> Result<SvcfEstimate> {
    check_chain(chain)?;
    check_q(q)?;
    let (p, n) = chain.beta_tilde[0].shape();
    let mut prob = DMatrix::zeros(p, n);
    let mut beta_hat = DMatrix::zeros(p, n);
    let draws = chain.n_draws() as f64;
    for k in 0..p {
        for i in 0..n {
            let (mut hits, mut sum) = (0usize, 0.0);
            for (bt, lam) in chain.beta_tilde.iter().zip(&chain.lambda) {
                let v = bt[(k, i)];
                if v.abs() > lam[k] {
                    hits += 1;
                    sum += v;
                }
            }
            let pr = hits as f64 / draws;
            prob[(k, i)] = pr;
            if pr > q {
                beta_hat[(k, i)] = sum / hits as f64;
            }
        }
    }
    Ok(SvcfEstimate {
        granularity: ThresholdMode::Voxel,
        selection_prob: prob,
        beta_hat,
        q,
    })
}

/// Estimate at the granularity the chain was run with.
pub fn estimate_for_mode(chain: &ChainOutput, domain: &SpatialDomain, mode: ThresholdMode, q: f64) -> Result<SvcfEstimate> {
    match mode {
        ThresholdMode::Regional => estimate(chain, domain, q),
        ThresholdMode::Voxel => estimate_voxel(chain, q),
    }
}

/// Kriging predictor options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictOptions {
    pub q: f64,
    /// Which selection event gates the prediction.
    pub granularity: ThresholdMode,
    /// Multiply each per-draw conditional mean by that draw's `β̃` at the
    /// nearest observed location of the region.
    pub literal: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            q: 0.9,
            granularity: ThresholdMode::Regional,
            literal: false,
        }
    }
}

/// Reusable kriging predictor over a fitted chain.
pub struct Predictor<'a> {
    chain: &'a ChainOutput,
    domain: &'a SpatialDomain,
    eig: &'a EigenSystem,
    opts: PredictOptions,
    members: Vec<Vec<usize>>,
    /// Per bandwidth (keyed by bit pattern): factorized region Grams.
    factors: BTreeMap<u64, Vec<Cholesky<f64, Dyn>>>,
    /// `p × units` selection probabilities at the gating granularity.
    prob: DMatrix<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(chain: &'a ChainOutput, domain: &'a SpatialDomain, eig: &'a EigenSystem, opts: PredictOptions) -> Result<Self> {
        check_chain(chain)?;
        check_q(opts.q)?;
        if chain.u[0].ncols() != eig.len() {
            return Err(invalid(format!(
                "chain has {} basis coefficients, eigensystem has {}",
                chain.u[0].ncols(),
                eig.len()
            )));
        }
        if chain.beta_tilde[0].ncols() != domain.len() {
            return Err(invalid("chain and domain disagree on the number of locations"));
        }
        let members = domain.region_members();
        let mut factors = BTreeMap::new();
        for &b in &chain.b {
            if factors.contains_key(&b.to_bits()) {
                continue;
            }
            let params = KernelParams::new(eig.params.a, b, eig.params.d)?;
            let regions = members
                .iter()
                .map(|idx| {
                    let pts = domain.locations.select(idx);
                    jittered_cholesky(&gram(&pts, &params))
                })
                .collect::<Result<Vec<_>>>()?;
            factors.insert(b.to_bits(), regions);
        }
        let prob = match opts.granularity {
            ThresholdMode::Regional => estimate(chain, domain, opts.q)?.selection_prob,
            ThresholdMode::Voxel => estimate_voxel(chain, opts.q)?.selection_prob,
        };
        Ok(Self {
            chain,
            domain,
            eig,
            opts,
            members,
            factors,
            prob,
        })
    }

    /// Predicted `β̂_k(s0)` for every covariate.
    pub fn predict(&self, s0: &[f64]) -> Result<Vec<f64>> {
        if s0.len() != self.domain.dim() {
            return Err(invalid(format!("point has dimension {}, domain has {}", s0.len(), self.domain.dim())));
        }
        let g = self.domain.nearest_region(s0) - 1;
        let idx = &self.members[g];
        let pts = self.domain.locations.select(idx);
        let nearest = pts
            .iter()
            .enumerate()
            .map(|(j, s)| (j, crate::points::sq_dist(s, s0)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .expect("regions are nonempty");
        let phi0 = DVector::from_vec(self.eig.features(s0));
        let phi_g: Vec<DVector<f64>> = pts.iter().map(|s| DVector::from_vec(self.eig.features(s))).collect();
        let p = self.chain.beta_tilde[0].nrows();
        let mut weights: BTreeMap<u64, DVector<f64>> = BTreeMap::new();
        for (bits, regions) in &self.factors {
            let params = KernelParams::new(self.eig.params.a, f64::from_bits(*bits), self.eig.params.d)?;
            let kg = DVector::from_vec(cross_kernel(s0, &pts, &params));
            weights.insert(*bits, regions[g].solve(&kg));
        }
        let mut out = vec![0.0; p];
        for (k, slot) in out.iter_mut().enumerate() {
            let selected = match self.opts.granularity {
                ThresholdMode::Regional => self.prob[(k, g)] > self.opts.q,
                ThresholdMode::Voxel => self.prob[(k, idx[nearest])] > self.opts.q,
            };
            if !selected {
                continue;
            }
            let mut sum = 0.0;
            for t in 0..self.chain.n_draws() {
                let bt = &self.chain.beta_tilde[t];
                let u = self.chain.u[t].row(k);
                let w = &weights[&self.chain.b[t].to_bits()];
                let mut mean = phi0.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>();
                for (j, &i) in idx.iter().enumerate() {
                    let global: f64 = phi_g[j].iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    mean += w[j] * (bt[(k, i)] - global);
                }
                if self.opts.literal {
                    mean *= bt[(k, idx[nearest])];
                }
                sum += mean;
            }
            *slot = sum / self.chain.n_draws() as f64;
        }
        Ok(out)
    }

    /// Predictions at many points, `points.len() × p`.
    pub fn predict_many(&self, points: &crate::Points) -> Result<DMatrix<f64>> {
        let p = self.chain.beta_tilde[0].nrows();
        let mut out = DMatrix::zeros(points.len(), p);
        for (r, s) in points.iter().enumerate() {
            for (k, v) in self.predict(s)?.into_iter().enumerate() {
                out[(r, k)] = v;
            }
        }
        Ok(out)
    }

    /// Region (1-based) that governs predictions at `s0`.
    pub fn region_of(&self, s0: &[f64]) -> usize {
        self.domain.nearest_region(s0)
    }
}

/// One-shot prediction at a single location.
pub fn predict(chain: &ChainOutput, s0: &[f64], eig: &EigenSystem, domain: &SpatialDomain, opts: PredictOptions) -> Result<Vec<f64>> {
    Predictor::new(chain, domain, eig, opts)?.predict(s0)
}

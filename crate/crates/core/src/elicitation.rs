//! Data-driven uniform priors for the thresholds `λ_k`.
//!
//! A smoothed OLS pre-fit on the KL basis gives rough coefficient images.
//! For each covariate the profile `ℓ̂(λ)` of the thresholded log-likelihood
//! is scanned with windowed Pearson correlations to locate its turning point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{invalid, Error, Result};
use crate::kernel::{basis_matrix, EigenSystem};
use crate::linalg::lstsq_svd;
use crate::model::{Dataset, SpatialDomain};
use crate::tmgp::ThresholdMode;

/// Relative singular-value cutoff of the default basis projection.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// `ℓ̂` tabulated on an increasing grid of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl LambdaProfile {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let p = Self { grid, values };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.len() != self.values.len() {
            return Err(invalid("profile grid and values must be nonempty and of equal length"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("profile grid must be strictly increasing"));
        }
        if self.values.iter().chain(&self.grid).any(|v| !v.is_finite()) {
            return Err(invalid("profile contains non-finite entries"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Uniform prior on `[center − half_range, center + half_range]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaPrior {
    pub center: f64,
    pub half_range: f64,
}

impl LambdaPrior {
    pub fn new(center: f64, half_range: f64) -> Result<Self> {
        let p = Self { center, half_range };
        p.validate()?;
        Ok(p)
    }

    /// Uniform prior on `[lo, hi]`.
    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self> {
        Self::new(0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_range > 0.0 && self.half_range.is_finite() && self.center.is_finite()) {
            return Err(invalid("lambda prior needs a finite center and positive half-range"));
        }
        if self.center - self.half_range < -1e-12 {
            return Err(invalid("lambda prior support must be nonnegative"));
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        (self.center - self.half_range).max(0.0)
    }

    pub fn hi(&self) -> f64 {
        self.center + self.half_range
    }

    /// Membership with a relative tolerance of `1e-12` for bounds that went
    /// through the center/half-range representation.
    pub fn contains(&self, lambda: f64) -> bool {
        let tol = 1e-12 * self.hi().abs().max(1.0);
        lambda >= self.lo() - tol && lambda <= self.hi() + tol
    }

    /// Standard deviation of the uniform law.
    pub fn sd(&self) -> f64 {
        (self.hi() - self.lo()) / 12f64.sqrt()
    }
}

/// How the basis projection treats a rank-deficient basis matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BasisSolve {
    /// Truncated-SVD pseudo-inverse with relative cutoff `rcond`.
    Pseudo { rcond: f64 },
    /// Fail with a singular-design error unless the basis has full column rank.
    Strict,
}

impl Default for BasisSolve {
    fn default() -> Self {
        BasisSolve::Pseudo { rcond: DEFAULT_RCOND }
    }
}

/// Result of the KL-basis OLS pre-fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFit {
    /// `p × L` basis coefficients.
    pub coeffs: DMatrix<f64>,
    /// `p × n` smoothed coefficient images `Φ w_k`.
    pub beta_hat: DMatrix<f64>,
    /// `p × n` unsmoothed voxelwise OLS estimates.
    pub beta_ols: DMatrix<f64>,
    /// Numerical rank of the basis matrix.
    pub rank: usize,
}

/// Voxelwise OLS `(XᵀX)⁻¹XᵀY` as a `p × n` matrix.
pub fn voxel_ols(ds: &Dataset) -> Result<DMatrix<f64>> {
    let xtx = ds.x.transpose() * &ds.x;
    let ch = xtx
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("XᵀX is not positive definite".into()))?;
    let xty = ds.x.transpose() * &ds.y;
    Ok(ch.solve(&xty))
}

/// OLS fit of every coefficient image on the truncated KL basis.
pub fn ols_basis_fit(ds: &Dataset, eig: &EigenSystem) -> Result<BasisFit> {
    ols_basis_fit_with(ds, eig, BasisSolve::default())
}

pub fn ols_basis_fit_with(ds: &Dataset, eig: &EigenSystem, solve: BasisSolve) -> Result<BasisFit> {
    ds.validate()?;
    if ds.subjects() < ds.covariates() {
        return Err(Error::SingularDesign(format!(
            "{} subjects cannot identify {} covariates",
            ds.subjects(),
            ds.covariates()
        )));
    }
    let beta_ols = voxel_ols(ds)?;
    let phi = basis_matrix(&ds.domain.locations, eig);
    let rcond = match solve {
        BasisSolve::Pseudo { rcond } => rcond,
        BasisSolve::Strict => {
            if phi.nrows() < phi.ncols() {
                return Err(Error::SingularDesign(format!(
                    "{} basis functions exceed {} locations",
                    phi.ncols(),
                    phi.nrows()
                )));
            }
            f64::EPSILON * phi.nrows() as f64
        }
    };
    let (w, rank) = lstsq_svd(&phi, &beta_ols.transpose(), rcond);
    if matches!(solve, BasisSolve::Strict) && rank < phi.ncols() {
        return Err(Error::SingularDesign(format!(
            "basis matrix has numerical rank {rank} < {}",
            phi.ncols()
        )));
    }
    let beta_hat = (&phi * &w).transpose();
    Ok(BasisFit {
        coeffs: w.transpose(),
        beta_hat,
        beta_ols,
        rank,
    })
}

/// Per-location weights `ω_k(s_i) = Σ_j β_k x_jk [2 y_{j,−k} − β_k x_jk]`.
pub fn omega(ds: &Dataset, beta_hat: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let p = ds.covariates();
    if beta_hat.nrows() != p || beta_hat.ncols() != ds.locations() {
        return Err(Error::Shape(format!(
            "coefficient matrix is {}×{}, expected {}×{}",
            beta_hat.nrows(),
            beta_hat.ncols(),
            p,
            ds.locations()
        )));
    }
    if k >= p {
        return Err(invalid(format!("covariate index {k} out of range for p = {p}")));
    }
    let xtx = ds.x.transpose() * &ds.x;
    let xk = ds.x.column(k);
    let xty_k = xk.transpose() * &ds.y;
    Ok((0..ds.locations())
        .map(|i| {
            let others: f64 = (0..p).filter(|&t| t != k).map(|t| xtx[(k, t)] * beta_hat[(t, i)]).sum();
            let cross = xty_k[i] - others;
            let b = beta_hat[(k, i)];
            2.0 * b * cross - b * b * xtx[(k, k)]
        })
        .collect())
}

/// Thresholds `0 = λ⁽¹⁾ < … < λ⁽ᴳ⁾ = quantile(|β̂_k|)` at equal spacing.
pub fn default_grid(beta_k: &[f64], points: usize, quantile: f64) -> Result<Vec<f64>> {
    if points < 2 || !(quantile > 0.0 && quantile <= 1.0) || beta_k.is_empty() {
        return Err(invalid("grid needs ≥ 2 points, a quantile in (0,1] and nonempty data"));
    }
    let mut data = Data::new(beta_k.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let top = data.quantile(quantile);
    if !(top > 0.0) {
        return Err(invalid("coefficient image is identically zero"));
    }
    let step = top / (points - 1) as f64;
    Ok((0..points).map(|g| g as f64 * step).collect())
}

/// `ℓ̂_k(λ)` on `grid` with voxelwise indicators.
pub fn profile(ds: &Dataset, beta_hat: &DMatrix<f64>, k: usize, grid: &[f64]) -> Result<LambdaProfile> {
    profile_with(ds, beta_hat, k, grid, ThresholdMode::Voxel)
}

/// `ℓ̂_k(λ)` with either voxelwise or regional indicators.
pub fn profile_with(
    ds: &Dataset,
    beta_hat: &DMatrix<f64>,
    k: usize,
    grid: &[f64],
    mode: ThresholdMode,
) -> Result<LambdaProfile> {
    let w = omega(ds, beta_hat, k)?;
    let level = indicator_levels(beta_hat, k, &ds.domain, mode);
    let values = grid
        .iter()
        .map(|&lam| w.iter().zip(&level).filter(|(_, l)| **l > lam).map(|(v, _)| *v).sum())
        .collect();
    LambdaProfile::new(grid.to_vec(), values)
}

fn indicator_levels(beta_hat: &DMatrix<f64>, k: usize, domain: &SpatialDomain, mode: ThresholdMode) -> Vec<f64> {
    let abs: Vec<f64> = beta_hat.row(k).iter().map(|v| v.abs()).collect();
    match mode {
        ThresholdMode::Voxel => abs,
        ThresholdMode::Regional => {
            let mut out = vec![0.0; abs.len()];
            for members in domain.region_members() {
                let m = members.iter().map(|&i| abs[i]).fold(f64::INFINITY, f64::min);
                for &i in &members {
                    out[i] = m;
                }
            }
            out
        }
    }
}

fn window_tolerance(grid: &[f64]) -> f64 {
    1e-9 * grid.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

fn window_indices(profile: &LambdaProfile, a: f64, b: f64) -> Vec<usize> {
    let eps = window_tolerance(&profile.grid);
    (0..profile.len())
        .filter(|&g| profile.grid[g] > a + eps && profile.grid[g] < b - eps)
        .collect()
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    if sxx <= 0.0 || syy <= (1e-24 * scale * scale * n) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of `(λ, ℓ̂)` over grid points strictly inside `(a, b)`.
///
/// `None` when fewer than three points fall inside or either coordinate is constant.
pub fn windowed_corr(profile: &LambdaProfile, a: f64, b: f64) -> Option<f64> {
    let idx = window_indices(profile, a, b);
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&g| (profile.grid[g], profile.values[g])).collect();
    pearson(&pairs)
}

/// Two-sided critical value of the Pearson test with `points − 2` degrees of freedom.
pub fn pearson_critical(points: usize, alpha: f64) -> Option<f64> {
    if points < 3 {
        return None;
    }
    let df = (points - 2) as f64;
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(1.0 - alpha / 2.0);
    Some(t / (df + t * t).sqrt())
}

/// Which windows define the turning point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurningRule {
    /// Spans from the first significantly declining window beyond the profile
    /// maximum to the steepest windowed decline after it. A profile already
    /// declining at its maximum has no turning point; one that never declines
    /// yields a prior at its maximum.
    #[default]
    Onset,
    /// First window without significant correlation.
    Insignificant,
    /// First window with significant correlation.
    Significant,
}

/// Tuning of the turning-point search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElicitOptions {
    pub alpha: f64,
    /// Smallest half-width of the ladder, in grid steps.
    pub min_steps: usize,
    /// Largest half-width of the ladder, in grid steps.
    pub max_steps: usize,
    pub rule: TurningRule,
    pub grid_points: usize,
    pub grid_quantile: f64,
    pub indicator: ThresholdMode,
}

impl Default for ElicitOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_steps: 3,
            max_steps: 25,
            rule: TurningRule::Onset,
            grid_points: 100,
            grid_quantile: 0.995,
            indicator: ThresholdMode::Voxel,
        }
    }
}

impl ElicitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return Err(invalid("ladder needs 0 < min_steps ≤ max_steps"));
        }
        if self.grid_points < 2 || !(self.grid_quantile > 0.0 && self.grid_quantile <= 1.0) {
            return Err(invalid("grid needs ≥ 2 points and a quantile in (0, 1]"));
        }
        Ok(())
    }
}

fn significant(profile: &LambdaProfile, center: f64, h: f64, alpha: f64) -> bool {
    let idx = window_indices(profile, center - h, center + h);
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&g| (profile.grid[g], profile.values[g])).collect();
    match (pearson(&pairs), pearson_critical(pairs.len(), alpha)) {
        (Some(r), Some(crit)) => r.abs() > crit,
        _ => false,
    }
}

fn declining(profile: &LambdaProfile, center: f64, h: f64, alpha: f64) -> bool {
    let idx = window_indices(profile, center - h, center + h);
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&g| (profile.grid[g], profile.values[g])).collect();
    match (pearson(&pairs), pearson_critical(pairs.len(), alpha)) {
        (Some(r), Some(crit)) => r < -crit,
        _ => false,
    }
}

/// Locate the turning point of `profile` and return the clamped uniform prior.
pub fn elicit(profile: &LambdaProfile, opts: &ElicitOptions) -> Result<LambdaPrior> {
    profile.validate()?;
    opts.validate()?;
    if profile.len() < 2 {
        return Err(Error::ElicitationFailure("profile needs at least two grid points".into()));
    }
    let step = (profile.grid[profile.len() - 1] - profile.grid[0]) / (profile.len() - 1) as f64;
    let peak = profile
        .values
        .iter()
        .enumerate()
        .fold(0, |best, (g, v)| if *v > profile.values[best] { g } else { best });
    let mut fallback: Option<(f64, f64)> = None;
    for steps in opts.min_steps..=opts.max_steps {
        let h = steps as f64 * step;
        let sig: Vec<bool> = profile
            .grid
            .iter()
            .map(|&c| significant(profile, c, h, opts.alpha))
            .collect();
        let found = match opts.rule {
            TurningRule::Significant => sig.iter().position(|s| *s),
            TurningRule::Insignificant => sig.iter().position(|s| !*s),
            TurningRule::Onset => {
                let falling: Vec<bool> = profile
                    .grid
                    .iter()
                    .map(|&c| declining(profile, c, h, opts.alpha))
                    .collect();
                match falling[peak..].iter().position(|s| *s) {
                    Some(0) => None,
                    Some(off) => Some(peak + off),
                    None => {
                        fallback.get_or_insert((profile.grid[peak], h));
                        None
                    }
                }
            }
        };
        if let Some(g) = found {
            if opts.rule == TurningRule::Onset {
                return Ok(span_to_steepest(profile, g, h));
            }
            return Ok(clamp_prior(profile.grid[g], h));
        }
    }
    match fallback {
        Some((c, h)) => Ok(clamp_prior(c, h)),
        None => Err(Error::ElicitationFailure(
            "no window in the ladder satisfies the turning-point rule".into(),
        )),
    }
}

fn window_slope(profile: &LambdaProfile, center: f64, h: f64) -> Option<f64> {
    let idx = window_indices(profile, center - h, center + h);
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let mx = idx.iter().map(|&g| profile.grid[g]).sum::<f64>() / n;
    let my = idx.iter().map(|&g| profile.values[g]).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &g in &idx {
        sxy += (profile.grid[g] - mx) * (profile.values[g] - my);
        sxx += (profile.grid[g] - mx).powi(2);
    }
    Some(sxy / sxx)
}

/// Interval from the detected onset to the steepest windowed decline beyond it.
/// Spans narrower than the window are centered on the steepest decline.
fn span_to_steepest(profile: &LambdaProfile, onset: usize, h: f64) -> LambdaPrior {
    let lo = profile.grid[onset];
    let mut steepest = (lo, f64::INFINITY);
    for &c in &profile.grid[onset..] {
        if let Some(slope) = window_slope(profile, c, h) {
            if slope < steepest.1 {
                steepest = (c, slope);
            }
        }
    }
    let hi = steepest.0;
    if hi - lo < 2.0 * h {
        clamp_prior(hi, h.max(hi - lo))
    } else {
        clamp_prior(0.5 * (lo + hi), 0.5 * (hi - lo))
    }
}

fn clamp_prior(center: f64, h: f64) -> LambdaPrior {
    if center - h >= 0.0 {
        LambdaPrior { center, half_range: h }
    } else {
        let hi = center + h;
        LambdaPrior {
            center: 0.5 * hi,
            half_range: 0.5 * hi,
        }
    }
}

/// Profiles and priors for every covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Elicitation {
    pub fit: BasisFit,
    pub profiles: Vec<LambdaProfile>,
    pub priors: Vec<LambdaPrior>,
}

/// Pre-fit, tabulate and elicit all `p` thresholds.
pub fn elicit_all(ds: &Dataset, eig: &EigenSystem, solve: BasisSolve, opts: &ElicitOptions) -> Result<Elicitation> {
    opts.validate()?;
    let fit = ols_basis_fit_with(ds, eig, solve)?;
    let mut profiles = Vec::with_capacity(ds.covariates());
    let mut priors = Vec::with_capacity(ds.covariates());
    for k in 0..ds.covariates() {
        let row: Vec<f64> = fit.beta_hat.row(k).iter().copied().collect();
        let grid = default_grid(&row, opts.grid_points, opts.grid_quantile)?;
        let prof = profile_with(ds, &fit.beta_hat, k, &grid, opts.indicator)?;
        let prior = elicit(&prof, opts).map_err(|e| match e {
            Error::ElicitationFailure(msg) => Error::ElicitationFailure(format!("covariate {k}: {msg}")),
            other => other,
        })?;
        priors.push(prior);
        profiles.push(prof);
    }
    Ok(Elicitation { fit, profiles, priors })
}

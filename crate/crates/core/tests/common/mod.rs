#![allow(dead_code)]

pub mod criteria;
pub mod oracle;
pub mod study;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::ContinuousCDF;
use statrs::stats_tests::ks_test::{ks_onesample, KSOneSampleAlternativeMethod};
use statrs::stats_tests::NaNPolicy;

use tmgp_svcm::elicitation::{ols_basis_fit, BasisFit};
use tmgp_svcm::kernel::{EigenSystem, KernelParams};
use tmgp_svcm::mcmc::Precomputed;
use tmgp_svcm::model::{Dataset, SpatialDomain};
use tmgp_svcm::Points;

/// One pass/fail line of the acceptance report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Two-sided asymptotic KS p-value of `samples` against `dist`.
pub fn ks_pvalue<D: ContinuousCDF<f64, f64>>(samples: &[f64], dist: &D) -> f64 {
    ks_onesample(
        samples.to_vec(),
        dist,
        KSOneSampleAlternativeMethod::TwoSidedAsymptotic,
        NaNPolicy::Error,
    )
    .expect("finite samples")
    .1
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_mean(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    let size = n / batches;
    let mean = series.iter().sum::<f64>() / n as f64;
    let bm: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Sample variance and its batch-means standard error.
pub fn batch_variance(series: &[f64], batches: usize) -> (f64, f64) {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let sq: Vec<f64> = series.iter().map(|v| (v - mean).powi(2)).collect();
    batch_mean(&sq, batches)
}

/// Whether `|estimate − target| ≤ 3 se`.
pub fn within_3se(estimate: f64, se: f64, target: f64) -> bool {
    (estimate - target).abs() <= 3.0 * se
}

/// A small dataset on one-dimensional locations with everything the
/// sampler needs.
pub struct Toy {
    pub ds: Dataset,
    pub eig: EigenSystem,
    pub pre: Precomputed,
    pub fit: BasisFit,
}

impl Toy {
    pub fn new(locs: &[f64], labels: Vec<usize>, x: DMatrix<f64>, y: DMatrix<f64>, b: f64, max_degree: usize) -> Self {
        let rows: Vec<Vec<f64>> = locs.iter().map(|v| vec![*v]).collect();
        let domain = SpatialDomain::new(Points::from_rows(&rows).unwrap(), labels).unwrap();
        let ds = Dataset::new(y, x, domain).unwrap();
        let eig = EigenSystem::with_max_degree(KernelParams::new(0.25, b, 1).unwrap(), max_degree).unwrap();
        let fit = ols_basis_fit(&ds, &eig).unwrap();
        let pre = Precomputed::new(&ds.domain, &eig, None, ds.domain.region_labels.clone()).unwrap();
        Self { ds, eig, pre, fit }
    }

    /// Gaussian data `y_j(s_i) = x_jᵀ β(s_i) + e` with `x` standard normal.
    pub fn simulated(locs: &[f64], labels: Vec<usize>, beta: &DMatrix<f64>, m: usize, sigma2: f64, seed: u64, b: f64, max_degree: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.nrows();
        let x = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = DMatrix::from_fn(m, locs.len(), |_, _| sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + noise;
        Self::new(locs, labels, x, y, b, max_degree)
    }
}

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, SpatialDomain};
use crate::error::{invalid, Result};

/// Distribution of one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateDist {
    Normal { mean: f64, var: f64 },
    Uniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
    Constant { value: f64 },
}

impl CovariateDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CovariateDist::Normal { mean, var } => mean.is_finite() && var >= 0.0 && var.is_finite(),
            CovariateDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
            CovariateDist::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid covariate distribution {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovariateDist::Normal { mean, var } => Normal::new(mean, var.sqrt()).expect("validated").sample(rng),
            CovariateDist::Uniform { lo, hi } => Uniform::new(lo, hi).expect("validated").sample(rng),
            CovariateDist::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateDist::Constant { value } => value,
        }
    }
}

/// Nonnegative shape added on top of the floor inside one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldShape {
    /// Constant at the floor.
    Flat,
    /// `amplitude · exp(−‖s − center‖² / (2 width²))`; center defaults to the region centroid.
    Bump {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Tilted plane `Σ_j |g_j| · |s_j − e_j|`, anchored at the region corner
    /// `e` where it vanishes.
    Plane { gradient: Vec<f64> },
}

/// `β_k(s) = sign · (floor + shape(s))` on one region, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldComponent {
    pub region: usize,
    pub floor: f64,
    #[serde(default = "positive")]
    pub sign: f64,
    pub shape: FieldShape,
}

fn positive() -> f64 {
    1.0
}

/// Synthetic study: grid domain, covariate laws and sparse truth fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dim: usize,
    pub per_side: usize,
    #[serde(default = "two")]
    pub region_splits: usize,
    pub covariates: Vec<CovariateDist>,
    /// One list of region components per covariate.
    pub fields: Vec<Vec<FieldComponent>>,
}

fn two() -> usize {
    2
}

impl SimSpec {
    /// Covariate laws used in the synthetic 2D study for `p = 3`.
    pub fn default_covariates() -> Vec<CovariateDist> {
        vec![
            CovariateDist::Normal { mean: 0.0, var: 4.0 },
            CovariateDist::Uniform { lo: -1.0, hi: 1.0 },
            CovariateDist::Bernoulli { p: 0.5 },
        ]
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        SpatialDomain::unit_grid(self.dim, self.per_side, self.region_splits)
    }

    /// Evaluate the truth fields on the grid domain (`p × n`).
    pub fn truth(&self, domain: &SpatialDomain) -> Result<(DMatrix<f64>, Vec<Vec<usize>>, Vec<f64>)> {
        let p = self.fields.len();
        if p != self.covariates.len() {
            return Err(invalid(format!(
                "{} truth fields for {} covariates",
                p,
                self.covariates.len()
            )));
        }
        let members = domain.region_members();
        let mut beta = DMatrix::zeros(p, domain.len());
        let mut active = Vec::with_capacity(p);
        let mut floors = Vec::with_capacity(p);
        for (k, comps) in self.fields.iter().enumerate() {
            let mut regions = Vec::new();
            let mut floor = f64::INFINITY;
            for c in comps {
                if c.region == 0 || c.region > domain.n_regions {
                    return Err(invalid(format!("truth component references region {}", c.region)));
                }
                if regions.contains(&c.region) {
                    return Err(invalid(format!("covariate {k} has two components on region {}", c.region)));
                }
                if !(c.floor > 0.0) || c.sign.abs() != 1.0 {
                    return Err(invalid("truth components need a positive floor and sign ±1"));
                }
                regions.push(c.region);
                floor = floor.min(c.floor);
                let idx = &members[c.region - 1];
                let pts = domain.locations.select(idx);
                let d = domain.dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for s in pts.iter() {
                    for j in 0..d {
                        lo[j] = lo[j].min(s[j]);
                        hi[j] = hi[j].max(s[j]);
                    }
                }
                for (&i, s) in idx.iter().zip(pts.iter()) {
                    let shape = match &c.shape {
                        FieldShape::Flat => 0.0,
                        FieldShape::Bump { amplitude, width, center } => {
                            let ctr: Vec<f64> = match center {
                                Some(v) => v.clone(),
                                None => lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
                            };
                            if ctr.len() != d || !(*width > 0.0) || *amplitude < 0.0 {
                                return Err(invalid("bump needs nonnegative amplitude, positive width and a d-dim center"));
                            }
                            amplitude * (-crate::points::sq_dist(s, &ctr) / (2.0 * width * width)).exp()
                        }
                        FieldShape::Plane { gradient } => {
                            if gradient.len() != d {
                                return Err(invalid("plane gradient must have d entries"));
                            }
                            gradient
                                .iter()
                                .enumerate()
                                .map(|(j, g)| {
                                    let anchor = if *g >= 0.0 { lo[j] } else { hi[j] };
                                    g.abs() * (s[j] - anchor).abs()
                                })
                                .sum()
                        }
                    };
                    beta[(k, i)] = c.sign * (c.floor + shape);
                }
            }
            regions.sort_unstable();
            active.push(regions);
            floors.push(if floor.is_finite() { floor } else { 0.0 });
        }
        Ok((beta, active, floors))
    }
}

/// Draw a synthetic dataset `y_j(s_i) = Σ_k β_k(s_i) x_jk + e_j(s_i)`.
///
/// `sigma2 = 0` produces noiseless outcomes.
pub fn simulate(spec: &SimSpec, m: usize, sigma2: f64, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if m == 0 {
        return Err(invalid("subject count m must be positive"));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(invalid(format!("noise variance must be nonnegative, got {sigma2}")));
    }
    for c in &spec.covariates {
        c.validate()?;
    }
    let domain = spec.domain()?;
    let (beta, active, floor) = spec.truth(&domain)?;
    let p = spec.covariates.len();
    let n = domain.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(m, p);
    for j in 0..m {
        for (k, dist) in spec.covariates.iter().enumerate() {
            x[(j, k)] = dist.draw(&mut rng);
        }
    }
    let mut y = &x * &beta;
    if sigma2 > 0.0 {
        let noise = Normal::new(0.0, sigma2.sqrt()).expect("positive sd");
        for j in 0..m {
            for i in 0..n {
                y[(j, i)] += noise.sample(&mut rng);
            }
        }
    }
    let ds = Dataset::new(y, x, domain)?;
    let truth = GroundTruth {
        beta,
        sigma2,
        active_regions: active,
        floor,
    };
    Ok((ds, truth))
}

//! Data-independent precomputation for the sampler: per-region Gram
//! inverses, the KL-coefficient posterior factorization and per-block
//! proposal factors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::{basis_matrix, gram, EigenSystem};
use crate::linalg::{jittered_cholesky, symmetrize};
use crate::model::SpatialDomain;

/// Gram factor of one region.
#[derive(Debug, Clone)]
pub struct RegionFactor {
    pub members: Vec<usize>,
    /// Inverse of the jittered region Gram matrix.
    pub k_inv: DMatrix<f64>,
    /// `log det` of the jittered region Gram matrix.
    pub log_det: f64,
    /// `Φ_gᵀ K_g⁻¹` (`L × n_g`).
    pub phi_t_kinv: DMatrix<f64>,
}

/// Everything that depends on the kernel but not on the data.
#[derive(Debug, Clone)]
pub struct PriorModel {
    pub eig: EigenSystem,
    /// `n × L` basis matrix.
    pub phi: DMatrix<f64>,
    pub regions: Vec<RegionFactor>,
    /// For each location, its region index and position within the region.
    pub slot: Vec<(usize, usize)>,
    /// `Z^{1/2} V` where `V Λ Vᵀ = Z^{1/2} (Σ_g Φ_gᵀ K_g⁻¹ Φ_g) Z^{1/2}`.
    pub u_basis: DMatrix<f64>,
    pub u_eigenvalues: Vec<f64>,
}

impl PriorModel {
    pub fn new(domain: &SpatialDomain, eig: &EigenSystem) -> Result<Self> {
        domain.validate()?;
        if domain.dim() != eig.params.d {
            return Err(invalid("kernel dimension does not match the domain"));
        }
        let phi = basis_matrix(&domain.locations, eig);
        let members = domain.region_members();
        let regions: Vec<RegionFactor> = members
            .into_par_iter()
            .map(|idx| -> Result<RegionFactor> {
                let k = gram(&domain.locations.select(&idx), &eig.params);
                let ch = jittered_cholesky(&k)?;
                let log_det = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let mut k_inv = ch.inverse();
                symmetrize(&mut k_inv);
                let phi_g = phi.select_rows(idx.iter());
                let phi_t_kinv = phi_g.transpose() * &k_inv;
                Ok(RegionFactor {
                    members: idx,
                    k_inv,
                    log_det,
                    phi_t_kinv,
                })
            })
            .collect::<Result<_>>()?;
        let mut slot = vec![(0, 0); domain.len()];
        for (g, r) in regions.iter().enumerate() {
            for (pos, &i) in r.members.iter().enumerate() {
                slot[i] = (g, pos);
            }
        }
        let l = eig.len();
        let mut a = DMatrix::zeros(l, l);
        for r in &regions {
            let phi_g = phi.select_rows(r.members.iter());
            a += &r.phi_t_kinv * phi_g;
        }
        let w: Vec<f64> = eig.eigenvalues.iter().map(|z| z.sqrt()).collect();
        let mut waw = DMatrix::from_fn(l, l, |i, j| w[i] * a[(i, j)] * w[j]);
        symmetrize(&mut waw);
        let se = SymmetricEigen::new(waw);
        let u_basis = DMatrix::from_fn(l, l, |i, j| w[i] * se.eigenvectors[(i, j)]);
        let u_eigenvalues = se.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        Ok(Self {
            eig: eig.clone(),
            phi,
            regions,
            slot,
            u_basis,
            u_eigenvalues,
        })
    }

    pub fn len(&self) -> usize {
        self.eig.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eig.is_empty()
    }

    /// `log N(values_g; Φ_g u, θ² K_g)` summed over regions, for one covariate.
    pub fn log_prior_beta(&self, beta_tilde: &[f64], u: &[f64], theta2: f64) -> f64 {
        let uv = DVector::from_column_slice(u);
        let global = &self.phi * uv;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.regions
            .iter()
            .map(|r| {
                let ng = r.members.len() as f64;
                let res = DVector::from_iterator(r.members.len(), r.members.iter().map(|&i| beta_tilde[i] - global[i]));
                let q = res.dot(&(&r.k_inv * &res));
                -0.5 * (q / theta2 + r.log_det + ng * theta2.ln() + ng * ln2pi)
            })
            .sum()
    }

    /// `log N(u; 0, τ² Z)`.
    pub fn log_prior_u(&self, u: &[f64], tau2: f64) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        u.iter()
            .zip(&self.eig.eigenvalues)
            .map(|(v, z)| -0.5 * (v * v / (tau2 * z) + (tau2 * z).ln() + ln2pi))
            .sum()
    }
}

/// One update block and its proposal factor.
#[derive(Debug, Clone)]
pub struct Block {
    pub members: Vec<usize>,
    /// Regions touched by the block, each with (positions in region, positions in block).
    pub parts: Vec<(usize, Vec<usize>, Vec<usize>)>,
    /// Eigenvectors and eigenvalues of the conditional prior precision of the block.
    pub prec_vectors: DMatrix<f64>,
    pub prec_values: Vec<f64>,
    /// The block is exactly one region, so its precision is the full `K_g⁻¹`.
    pub whole_region: bool,
}

impl Block {
    pub fn new(model: &PriorModel, members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("empty update block"));
        }
        let mut parts: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
        for (bpos, &i) in members.iter().enumerate() {
            let (g, rpos) = *model
                .slot
                .get(i)
                .ok_or_else(|| invalid(format!("block location {i} out of range")))?;
            match parts.iter_mut().find(|p| p.0 == g) {
                Some(p) => {
                    p.1.push(rpos);
                    p.2.push(bpos);
                }
                None => parts.push((g, vec![rpos], vec![bpos])),
            }
        }
        let nb = members.len();
        let mut prec = DMatrix::zeros(nb, nb);
        for (g, rpos, bpos) in &parts {
            let kinv = &model.regions[*g].k_inv;
            for (a, &ra) in rpos.iter().enumerate() {
                for (b, &rb) in rpos.iter().enumerate() {
                    prec[(bpos[a], bpos[b])] = kinv[(ra, rb)];
                }
            }
        }
        let whole_region = parts.len() == 1 && parts[0].1.len() == model.regions[parts[0].0].members.len();
        let se = SymmetricEigen::new(prec);
        if se.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("block precision has non-finite eigenvalues".into()));
        }
        Ok(Self {
            members,
            parts,
            prec_vectors: se.eigenvectors,
            prec_values: se.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            whole_region,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Group locations by block label, in order of first label value.
pub fn blocks_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|id| (0..labels.len()).filter(|&i| labels[i] == *id).collect())
        .collect()
}

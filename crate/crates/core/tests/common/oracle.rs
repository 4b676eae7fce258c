//! Independent reference computations for sampler tests. Nothing here goes
//! through the sampler's own precomputation.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use tmgp_svcm::kernel::{eigenfunction, eigenvalue, kernel_eval, EigenSystem};
use tmgp_svcm::linalg::JITTER;
use tmgp_svcm::model::Dataset;

/// `Σ_{i,j} (y_j(s_i) − x_jᵀ β(s_i))²` computed from the raw data.
pub fn direct_rss(ds: &Dataset, beta: &DMatrix<f64>) -> f64 {
    (&ds.y - &ds.x * beta).norm_squared()
}

/// Voxel or regional threshold written out directly.
pub fn threshold_row(row: &[f64], lambda: f64, labels: &[usize], regional: bool) -> Vec<f64> {
    if !regional {
        return row.iter().map(|&v| if v.abs() > lambda { v } else { 0.0 }).collect();
    }
    row.iter()
        .zip(labels)
        .map(|(&v, &g)| {
            let min = row
                .iter()
                .zip(labels)
                .filter(|(_, &h)| h == g)
                .map(|(w, _)| w.abs())
                .fold(f64::INFINITY, f64::min);
            if min > lambda {
                v
            } else {
                0.0
            }
        })
        .collect()
}

/// Jittered Gram matrix of the given 1-D locations.
fn region_gram(locs: &[f64], eig: &EigenSystem) -> DMatrix<f64> {
    DMatrix::from_fn(locs.len(), locs.len(), |a, b| {
        kernel_eval(&[locs[a]], &[locs[b]], &eig.params) + if a == b { JITTER } else { 0.0 }
    })
}

/// Mean and covariance of `u | β̃, τ²` by dense inversion.
pub fn u_conditional(
    locs: &[f64],
    labels: &[usize],
    eig: &EigenSystem,
    beta_tilde: &[f64],
    tau2: f64,
    theta2: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let l = eig.len();
    let mut prec = DMatrix::from_fn(l, l, |a, b| {
        if a == b {
            1.0 / (tau2 * eigenvalue(a + 1, &eig.params))
        } else {
            0.0
        }
    });
    let mut rhs = DVector::zeros(l);
    let mut groups: Vec<usize> = labels.to_vec();
    groups.sort_unstable();
    groups.dedup();
    for g in groups {
        let idx: Vec<usize> = (0..locs.len()).filter(|&i| labels[i] == g).collect();
        let pts: Vec<f64> = idx.iter().map(|&i| locs[i]).collect();
        let kinv = region_gram(&pts, eig).try_inverse().unwrap();
        let phi = DMatrix::from_fn(idx.len(), l, |a, j| eigenfunction(j + 1, &[pts[a]], &eig.params));
        prec += phi.transpose() * &kinv * &phi / theta2;
        let bt = DVector::from_iterator(idx.len(), idx.iter().map(|&i| beta_tilde[i]));
        rhs += phi.transpose() * &kinv * bt / theta2;
    }
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * rhs;
    (mean, cov)
}

/// Midpoints and widths of about `n` cells covering `[lo, hi]`, with cell
/// edges at every breakpoint inside the interval.
pub fn midpoint_cells(lo: f64, hi: f64, breaks: &[f64], n: usize) -> Vec<(f64, f64)> {
    let mut edges = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(hi);
    let h = (hi - lo) / n as f64;
    let mut out = Vec::with_capacity(n + edges.len());
    for w in edges.windows(2) {
        let cells = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
        let width = (w[1] - w[0]) / cells as f64;
        out.extend((0..cells).map(|c| (w[0] + (c as f64 + 0.5) * width, width)));
    }
    out
}

/// Log target of one `β̃` block (two locations, one covariate) on a grid:
/// Gaussian likelihood of the thresholded values times the local GP prior.
#[allow(clippy::too_many_arguments)]
pub fn block_grid_moments(
    ds: &Dataset,
    eig: &EigenSystem,
    locs: &[f64],
    global: &[f64],
    sigma2: f64,
    lambda: f64,
    regional: bool,
    theta2: f64,
) -> [f64; 3] {
    let k = region_gram(locs, eig) * theta2;
    let kinv = k.clone().try_inverse().unwrap();
    let sd: Vec<f64> = (0..2).map(|i| k[(i, i)].sqrt()).collect();
    let labels = [1, 1];
    let n = 801;
    let mut acc = [0.0; 4];
    let mut logs = Vec::with_capacity(n * n);
    let axis = |i: usize| midpoint_cells(global[i] - 8.0 * sd[i], global[i] + 8.0 * sd[i], &[-lambda, lambda], n);
    let (ax0, ax1) = (axis(0), axis(1));
    for &(x0, w0) in &ax0 {
        for &(x1, w1) in &ax1 {
            let b = [x0, x1];
            let thr = threshold_row(&b, lambda, &labels, regional);
            let beta = DMatrix::from_row_slice(1, 2, &thr);
            let res = DVector::from_vec(vec![b[0] - global[0], b[1] - global[1]]);
            let lp = -0.5 * direct_rss(ds, &beta) / sigma2 - 0.5 * res.dot(&(&kinv * &res)) + (w0 * w1).ln();
            logs.push((b, lp));
        }
    }
    let top = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    for (b, lp) in logs {
        let w = (lp - top).exp();
        acc[0] += w;
        acc[1] += w * b[0];
        acc[2] += w * b[1];
        acc[3] += w * f64::from(u8::from(b[0].abs() > lambda));
    }
    [acc[1] / acc[0], acc[2] / acc[0], acc[3] / acc[0]]
}

/// Mean of `λ` and `P(λ < cut)` under `ħ(λ) ∝ exp(−RSS(λ)/2σ²)` on `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_grid_moments(
    ds: &Dataset,
    beta_tilde: &[f64],
    labels: &[usize],
    regional: bool,
    sigma2: f64,
    lo: f64,
    hi: f64,
    cut: f64,
) -> (f64, f64) {
    let n = 200_001;
    let h = (hi - lo) / (n - 1) as f64;
    let lps: Vec<(f64, f64)> = (0..n)
        .map(|g| {
            let lam = lo + h * g as f64;
            let thr = threshold_row(beta_tilde, lam, labels, regional);
            let beta = DMatrix::from_row_slice(1, thr.len(), &thr);
            (lam, -0.5 * direct_rss(ds, &beta) / sigma2)
        })
        .collect();
    let top = lps.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m, mut below) = (0.0, 0.0, 0.0);
    for (lam, lp) in lps {
        let w = (lp - top).exp();
        z += w;
        m += w * lam;
        if lam < cut {
            below += w;
        }
    }
    (m / z, below / z)
}

/// Partial moments `(∫ f, ∫ x f, ∫ x² f)` of `N(mean, sd²)` over `(a, b)`.
fn partial_moments(mean: f64, sd: f64, a: f64, b: f64) -> [f64; 3] {
    let std = Normal::new(0.0, 1.0).unwrap();
    let za = (a - mean) / sd;
    let zb = (b - mean) / sd;
    let (pa, pb) = (if za.is_finite() { std.pdf(za) } else { 0.0 }, if zb.is_finite() { std.pdf(zb) } else { 0.0 });
    let (ta, tb) = (if za.is_finite() { za * pa } else { 0.0 }, if zb.is_finite() { zb * pb } else { 0.0 });
    let mass = std.cdf(zb) - std.cdf(za);
    let m1 = mean * mass + sd * (pa - pb);
    let m2 = (mean * mean + sd * sd) * mass + 2.0 * mean * sd * (pa - pb) + sd * sd * (ta - tb);
    [mass, m1, m2]
}

/// Exact posterior moments for one covariate, one location per region, a
/// single basis function, fixed `τ²` and fixed voxel threshold `λ`.
///
/// Given `(u, σ²)` every `β̃(s_i)` integrates in closed form as a sum of
/// truncated normal pieces; the outer 2-D integral over `(u, log σ²)` is a
/// tensor midpoint rule.
pub struct BruteForce {
    pub sigma2_mean: f64,
    pub sigma2_var: f64,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn brute_force(
    ds: &Dataset,
    eig: &EigenSystem,
    locs: &[f64],
    lambda: f64,
    tau2: f64,
    theta2: f64,
    shape: f64,
    rate: f64,
) -> BruteForce {
    assert_eq!(eig.len(), 1);
    let n = locs.len();
    let m = ds.subjects() as f64;
    let x: Vec<f64> = ds.x.column(0).iter().copied().collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: Vec<f64> = (0..n).map(|i| x.iter().zip(ds.y.column(i).iter()).map(|(a, b)| a * b).sum()).collect();
    let syy: Vec<f64> = (0..n).map(|i| ds.y.column(i).norm_squared()).collect();
    let phi: Vec<f64> = locs.iter().map(|s| eigenfunction(1, &[*s], &eig.params)).collect();
    let var_local: Vec<f64> = locs
        .iter()
        .map(|s| theta2 * (kernel_eval(&[*s], &[*s], &eig.params) + JITTER))
        .collect();
    let u_var = tau2 * eigenvalue(1, &eig.params);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    // Per-location log normalizer and conditional moments given (u, σ²).
    let local = |u: f64, s2: f64, i: usize| -> (f64, f64, f64) {
        let mu = phi[i] * u;
        let v = var_local[i];
        let base = -0.5 * m * (ln2pi + s2.ln());
        // inside the threshold band the likelihood sees β = 0
        let inner = partial_moments(mu, v.sqrt(), -lambda, lambda);
        let log_in = base - 0.5 * syy[i] / s2;
        // outside, prior × likelihood is a scaled Gaussian
        let p = 1.0 / v + sxx / s2;
        let mm = (mu / v + sxy[i] / s2) / p;
        let log_c = -0.5 * (ln2pi + v.ln()) - 0.5 * mu * mu / v - 0.5 * syy[i] / s2 + 0.5 * mm * mm * p
            + 0.5 * (ln2pi - p.ln())
            + base;
        let sd = (1.0 / p).sqrt();
        let lo = partial_moments(mm, sd, f64::NEG_INFINITY, -lambda);
        let hi = partial_moments(mm, sd, lambda, f64::INFINITY);
        let top = log_in.max(log_c);
        let (wi, wo) = ((log_in - top).exp(), (log_c - top).exp());
        let z = wi * inner[0] + wo * (lo[0] + hi[0]);
        let e1 = (wi * inner[1] + wo * (lo[1] + hi[1])) / z;
        let e2 = (wi * inner[2] + wo * (lo[2] + hi[2])) / z;
        (top + z.ln(), e1, e2)
    };
    let log_weight = |u: f64, t: f64| -> f64 {
        let s2 = t.exp();
        let mut lw = -0.5 * u * u / u_var;
        lw += -(shape + 1.0) * t - rate / s2 + t;
        for i in 0..n {
            lw += local(u, s2, i).0;
        }
        lw
    };

    // locate the bulk on a coarse grid, then integrate finely
    let u_sd = u_var.sqrt();
    let coarse = 400;
    let (u0, u1) = (-30.0 * u_sd, 30.0 * u_sd);
    let (t0, t1) = (-8.0_f64, 8.0_f64);
    let mut pts = Vec::new();
    for a in 0..coarse {
        for b in 0..coarse {
            let u = u0 + (u1 - u0) * (a as f64 + 0.5) / coarse as f64;
            let t = t0 + (t1 - t0) * (b as f64 + 0.5) / coarse as f64;
            pts.push((u, t, log_weight(u, t)));
        }
    }
    let top = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let live: Vec<&(f64, f64, f64)> = pts.iter().filter(|p| p.2 > top - 40.0).collect();
    let du = (u1 - u0) / coarse as f64;
    let dt = (t1 - t0) / coarse as f64;
    let ulo = live.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 2.0 * du;
    let uhi = live.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 2.0 * du;
    let tlo = live.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 2.0 * dt;
    let thi = live.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 2.0 * dt;

    let fine = 700;
    let mut sums = vec![0.0; 3 + 2 * n];
    for a in 0..fine {
        let u = ulo + (uhi - ulo) * (a as f64 + 0.5) / fine as f64;
        for b in 0..fine {
            let t = tlo + (thi - tlo) * (b as f64 + 0.5) / fine as f64;
            let s2 = t.exp();
            let w = (log_weight(u, t) - top).exp();
            if w == 0.0 {
                continue;
            }
            sums[0] += w;
            sums[1] += w * s2;
            sums[2] += w * s2 * s2;
            for i in 0..n {
                let (_, e1, e2) = local(u, s2, i);
                sums[3 + i] += w * e1;
                sums[3 + n + i] += w * e2;
            }
        }
    }
    let z = sums[0];
    let sigma2_mean = sums[1] / z;
    let beta_mean: Vec<f64> = (0..n).map(|i| sums[3 + i] / z).collect();
    BruteForce {
        sigma2_mean,
        sigma2_var: sums[2] / z - sigma2_mean * sigma2_mean,
        beta_var: (0..n).map(|i| sums[3 + n + i] / z - beta_mean[i] * beta_mean[i]).collect(),
        beta_mean,
    }
}

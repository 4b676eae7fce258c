//! Sampler correctness checks shared by the acceptance target.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{InverseGamma, Normal};

use tmgp_svcm::elicitation::LambdaPrior;
use tmgp_svcm::kernel::{eigenfunction, eigenvalue};
use tmgp_svcm::mcmc::{ChainState, InitKind, McmcConfig, Sampler};
use tmgp_svcm::tmgp::ThresholdMode;

use super::oracle::{block_grid_moments, brute_force, direct_rss, lambda_grid_moments, threshold_row, u_conditional};
use super::{batch_mean, batch_variance, ks_pvalue, within_3se, Outcome, Toy};

const KS_LEVEL: f64 = 0.01;

fn config(mode: ThresholdMode) -> McmcConfig {
    McmcConfig {
        mode,
        init: InitKind::Ols,
        ..Default::default()
    }
}

fn set_state(s: &Sampler, st: &mut ChainState, beta_tilde: DMatrix<f64>, u: DMatrix<f64>, sigma2: f64, tau2: Vec<f64>, lambda: Vec<f64>) {
    st.beta_tilde = beta_tilde;
    st.u = u;
    st.sigma2 = sigma2;
    st.tau2 = tau2;
    st.lambda = lambda;
    s.refresh(st);
}

/// Single-step KS tests of the σ², τ_k² and u_k draws.
fn conjugate_ks() -> (bool, Vec<String>) {
    let locs = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let labels = vec![1, 1, 1, 2, 2, 2];
    let truth = DMatrix::from_row_slice(2, 6, &[1.5, 1.2, 0.0, 0.0, -1.0, -2.0, 0.0, 0.5, 1.0, 1.5, 0.0, 0.3]);
    let toy = Toy::simulated(&locs, labels.clone(), &truth, 8, 0.5, 11, 3.0, 2);
    let priors = vec![LambdaPrior::from_bounds(0.1, 1.0).unwrap(); 2];
    let cfg = config(ThresholdMode::Voxel);
    let (a0, b0, theta2) = (cfg.prior_shape, cfg.prior_rate, cfg.theta2);
    let s = Sampler::new(&toy.ds, &toy.pre, priors, cfg, &toy.fit).unwrap();
    let mut st = s.initial_state(&toy.fit);
    let bt = DMatrix::from_fn(2, 6, |k, i| truth[(k, i)] + 0.1 * ((k * 6 + i) as f64).sin());
    let u = DMatrix::from_row_slice(2, 3, &[0.8, -0.3, 0.2, 0.5, 0.4, -0.6]);
    let tau2 = vec![0.7, 2.0];
    set_state(&s, &mut st, bt.clone(), u.clone(), 0.6, tau2.clone(), vec![0.4, 0.4]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 4000;
    let mut pvals: Vec<(String, f64)> = Vec::new();

    // σ²
    let thr = DMatrix::from_fn(2, 6, |k, i| {
        let row: Vec<f64> = bt.row(k).iter().copied().collect();
        threshold_row(&row, 0.4, &labels, false)[i]
    });
    let mn = (toy.ds.subjects() * toy.ds.locations()) as f64;
    let ig = InverseGamma::new(a0 + 0.5 * mn, b0 + 0.5 * direct_rss(&toy.ds, &thr)).unwrap();
    let sample: Vec<f64> = (0..draws)
        .map(|_| {
            s.update_sigma2(&mut st, &mut rng).unwrap();
            st.sigma2
        })
        .collect();
    pvals.push(("sigma2".into(), ks_pvalue(&sample, &ig)));
    st.sigma2 = 0.6;

    // τ_k²
    let l = toy.eig.len();
    for k in 0..2 {
        let q: f64 = (0..l).map(|j| u[(k, j)].powi(2) / eigenvalue(j + 1, &toy.eig.params)).sum();
        let ig = InverseGamma::new(a0 + 0.5 * l as f64, b0 + 0.5 * q).unwrap();
        let sample: Vec<f64> = (0..draws)
            .map(|_| {
                s.update_tau2(&mut st, k, &mut rng).unwrap();
                st.tau2[k]
            })
            .collect();
        pvals.push((format!("tau2[{k}]"), ks_pvalue(&sample, &ig)));
    }
    st.tau2 = tau2.clone();

    // u_k, through the single and the batched update
    for k in 0..2 {
        let row: Vec<f64> = bt.row(k).iter().copied().collect();
        let (mean, cov) = u_conditional(&locs, &labels, &toy.eig, &row, tau2[k], theta2);
        let chol = cov.clone().cholesky().unwrap();
        let mut coords = vec![Vec::new(); l];
        let mut white = vec![Vec::new(); l];
        for t in 0..draws {
            if t % 2 == 0 {
                s.update_u(&mut st, k, &mut rng);
            } else {
                s.update_u_all(&mut st, &mut rng);
            }
            let v = DVector::from_iterator(l, st.u.row(k).iter().copied());
            let z = chol.l().solve_lower_triangular(&(&v - &mean)).unwrap();
            for j in 0..l {
                coords[j].push(v[j]);
                white[j].push(z[j]);
            }
        }
        for j in 0..l {
            let marg = Normal::new(mean[j], cov[(j, j)].sqrt()).unwrap();
            pvals.push((format!("u[{k}][{j}]"), ks_pvalue(&coords[j], &marg)));
            pvals.push((format!("u[{k}] whitened {j}"), ks_pvalue(&white[j], &Normal::new(0.0, 1.0).unwrap())));
        }
    }
    let ok = pvals.iter().all(|(_, p)| *p > KS_LEVEL);
    let worst = pvals.iter().cloned().fold(("".to_string(), 1.0), |a, b| if b.1 < a.1 { b } else { a });
    (ok, vec![format!("{} KS tests, min p = {:.3} ({})", pvals.len(), worst.1, worst.0)])
}

/// Stationary law of the β̃ block update on a two-location region.
fn block_stationary(mode: ThresholdMode) -> (bool, String) {
    let locs = [0.2, 0.6];
    let truth = DMatrix::from_row_slice(1, 2, &[0.3, 1.0]);
    let toy = Toy::simulated(&locs, vec![1, 1], &truth, 5, 0.5, 21, 1.0, 0);
    let cfg = config(mode);
    let theta2 = cfg.theta2;
    let s = Sampler::new(&toy.ds, &toy.pre, vec![LambdaPrior::from_bounds(0.1, 1.0).unwrap()], cfg, &toy.fit).unwrap();
    let mut st = s.initial_state(&toy.fit);
    let (lambda, sigma2, u) = (0.5, 0.5, 0.4);
    set_state(&s, &mut st, DMatrix::from_row_slice(1, 2, &[0.6, 0.9]), DMatrix::from_element(1, 1, u), sigma2, vec![1.0], vec![lambda]);
    let global: Vec<f64> = locs.iter().map(|x| eigenfunction(1, &[*x], &toy.eig.params) * u).collect();
    let target = block_grid_moments(&toy.ds, &toy.eig, &locs, &global, sigma2, lambda, mode == ThresholdMode::Regional, theta2);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let steps = 300_000;
    let mut series = [Vec::with_capacity(steps), Vec::with_capacity(steps), Vec::with_capacity(steps)];
    for _ in 0..steps {
        s.update_beta_block(&mut st, 0, 0, 1.0, &mut rng);
        let (b0, b1) = (st.beta_tilde[(0, 0)], st.beta_tilde[(0, 1)]);
        series[0].push(b0);
        series[1].push(b1);
        series[2].push(f64::from(u8::from(b0.abs() > lambda)));
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, (ser, t)) in ["E b1", "E b2", "P(|b1|>λ)"].iter().zip(series.iter().zip(target)) {
        let (m, se) = batch_mean(ser, 100);
        ok &= within_3se(m, se, t);
        parts.push(format!("{name} {m:.4}±{se:.4} vs {t:.4}"));
    }
    (ok, format!("{mode:?} block: {}", parts.join(", ")))
}

/// Stationary law of the λ update with β̃ held fixed.
fn lambda_stationary(mode: ThresholdMode) -> (bool, String) {
    let locs = [0.2, 0.6];
    let bt = [0.8, 1.6];
    let truth = DMatrix::from_row_slice(1, 2, &bt);
    let toy = Toy::simulated(&locs, vec![1, 1], &truth, 5, 2.0, 31, 1.0, 0);
    let (lo, hi) = (0.3, 2.0);
    let s = Sampler::new(&toy.ds, &toy.pre, vec![LambdaPrior::from_bounds(lo, hi).unwrap()], config(mode), &toy.fit).unwrap();
    let mut st = s.initial_state(&toy.fit);
    let sigma2 = 2.0;
    set_state(&s, &mut st, DMatrix::from_row_slice(1, 2, &bt), DMatrix::zeros(1, 1), sigma2, vec![1.0], vec![1.0]);
    let (tm, tp) = lambda_grid_moments(&toy.ds, &bt, &[1, 1], mode == ThresholdMode::Regional, sigma2, lo, hi, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = 300_000;
    let mut lam = Vec::with_capacity(steps);
    let mut below = Vec::with_capacity(steps);
    for _ in 0..steps {
        s.update_lambda(&mut st, 0, 0.3, &mut rng);
        lam.push(st.lambda[0]);
        below.push(f64::from(u8::from(st.lambda[0] < 0.8)));
    }
    let (m, se) = batch_mean(&lam, 100);
    let (pb, sb) = batch_mean(&below, 100);
    let ok = within_3se(m, se, tm) && within_3se(pb, sb, tp);
    (ok, format!("{mode:?} λ: E {m:.4}±{se:.4} vs {tm:.4}, P(λ<0.8) {pb:.4}±{sb:.4} vs {tp:.4}"))
}

/// Criterion 3: conjugate draws and Metropolis stationary laws.
pub fn conjugate_updates() -> Outcome {
    let (mut ok, mut detail) = conjugate_ks();
    for mode in [ThresholdMode::Voxel, ThresholdMode::Regional] {
        let (a, d) = block_stationary(mode);
        ok &= a;
        detail.push(d);
        let (a, d) = lambda_stationary(mode);
        ok &= a;
        detail.push(d);
    }
    Outcome::new(ok, detail.join("; "))
}

/// Criterion 4: full chain against exact quadrature on a four-location toy.
pub fn brute_force_posterior() -> Outcome {
    let locs = [0.1, 0.35, 0.6, 0.85];
    let x = DMatrix::from_column_slice(3, 1, &[1.0, -0.5, 2.0]);
    let beta = [0.0, 0.4, 1.2, 2.0];
    let noise = [[0.3, -0.6, 0.2], [-0.4, 0.5, 0.1], [0.7, -0.2, -0.5], [-0.1, 0.6, 0.4]];
    let y = DMatrix::from_fn(3, 4, |j, i| x[(j, 0)] * beta[i] + noise[i][j]);
    let toy = Toy::new(&locs, vec![1, 2, 3, 4], x, y, 1.0, 0);
    let (lambda, tau2) = (0.5, 1.0);
    let cfg = McmcConfig {
        iterations: 2_000_000,
        burn_in: 50_000,
        seed: 7,
        mode: ThresholdMode::Voxel,
        fixed_lambda: Some(vec![lambda]),
        update_tau2: false,
        init_tau2: tau2,
        init: InitKind::Ols,
        ..Default::default()
    };
    let oracle = brute_force(&toy.ds, &toy.eig, &locs, lambda, tau2, cfg.theta2, cfg.prior_shape, cfg.prior_rate);
    let s = Sampler::new(&toy.ds, &toy.pre, vec![LambdaPrior::from_bounds(0.3, 0.7).unwrap()], cfg, &toy.fit).unwrap();
    let out = s.run(&toy.fit).unwrap();

    let mut ok = true;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut check = |name: String, series: &[f64], mean_t: f64, var_t: f64| {
        let (m, se) = batch_mean(series, 100);
        let (v, sv) = batch_variance(series, 100);
        for (what, est, s, t) in [("mean", m, se, mean_t), ("var", v, sv, var_t)] {
            let z = (est - t).abs() / s;
            ok &= within_3se(est, s, t);
            if z > worst.0 {
                worst = (z, format!("{name} {what} {est:.4} vs {t:.4}"));
            }
        }
    };
    check("sigma2".into(), &out.sigma2, oracle.sigma2_mean, oracle.sigma2_var);
    for i in 0..4 {
        let series: Vec<f64> = out.beta_tilde.iter().map(|b| b[(0, i)]).collect();
        check(format!("beta[{i}]"), &series, oracle.beta_mean[i], oracle.beta_var[i]);
    }
    Outcome::new(ok, format!("12 moments, largest deviation {:.2} se ({})", worst.0, worst.1))
}

/// Criterion 1: truncated Mercer Gram against the exact Gram on random
/// points in the unit square, plus the Nyström decay rate.
pub fn kernel_oracle() -> Outcome {
    use rand::Rng;
    use tmgp_svcm::kernel::{basis_matrix, gram, truncation_level, KernelParams};
    use tmgp_svcm::Points;

    let params = KernelParams::new(0.25, 30.0, 2).unwrap();
    let eig = truncation_level(0.999, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let pts = Points::from_rows(&rows).unwrap();
    let phi = basis_matrix(&pts, &eig);
    let zeta = DVector::from_vec(eig.eigenvalues.clone());
    let approx = &phi * DMatrix::from_diagonal(&zeta) * phi.transpose();
    let exact = gram(&pts, &params);
    let rel = (&approx - &exact).norm() / exact.norm();

    let (ratios, decay) = nystrom_decay(0.25, 30.0, 6);
    let worst = ratios.iter().map(|r| (r / decay - 1.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        rel <= 1e-2 && worst <= 0.05,
        format!(
            "L = {}, ratio {:.5}, Mercer rel. Frobenius error {rel:.2e}; Nyström decay ratios {:?} vs B = {decay:.4} (max rel. dev. {worst:.3})",
            eig.len(),
            eig.ratio,
            ratios.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

/// Successive eigenvalue ratios of the scaled 1-D Gram on a fine grid over
/// `[−3, 3]`, with the analytic decay `B`.
pub fn nystrom_decay(a: f64, b: f64, count: usize) -> (Vec<f64>, f64) {
    use tmgp_svcm::kernel::{gram, KernelParams};
    use tmgp_svcm::Points;

    let params = KernelParams::new(a, b, 1).unwrap();
    let n = 1200;
    let h = 6.0 / n as f64;
    let pts = Points::new(1, (0..n).map(|i| -3.0 + (i as f64 + 0.5) * h).collect()).unwrap();
    let mut vals: Vec<f64> = (gram(&pts, &params) * h).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    let ratios = (0..count).map(|l| vals[l + 1] / vals[l]).collect();
    let c = (a * a + 2.0 * a * b).sqrt();
    (ratios, b / (a + b + c))
}

/// Criterion 2: Hermite orthonormality and the rank ↔ multi-index bijection.
pub fn hermite_and_index() -> Outcome {
    use gauss_quad::GaussHermite;
    use std::collections::BTreeSet;
    use tmgp_svcm::kernel::{binom, hermite, multi_index};

    let order = 40;
    // polish the eigen-solver nodes by Newton on the orthonormal recurrence, then use Christoffel weights
    let rule: Vec<(f64, f64)> = GaussHermite::new(order)
        .unwrap()
        .nodes()
        .map(|&x0| {
            let mut x = x0;
            for _ in 0..4 {
                x -= hermite(order, x) / ((2.0 * order as f64).sqrt() * hermite(order - 1, x));
            }
            (x, 1.0 / (0..order).map(|k| hermite(k, x).powi(2)).sum::<f64>())
        })
        .collect();
    let mut worst = 0.0f64;
    for j in 0..=20 {
        for k in 0..=20 {
            let v: f64 = rule.iter().map(|(x, w)| w * hermite(j, *x) * hermite(k, *x)).sum();
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }

    let mut index_ok = true;
    for d in 1..=3usize {
        // graded enumeration of every multi-index up to the degree reached by rank 500
        let mut seen = BTreeSet::new();
        let mut last_total = 0;
        for l in 1..=500 {
            let mi = multi_index(l, d);
            index_ok &= mi.degrees.len() == d && mi.degrees.iter().sum::<usize>() == mi.total;
            index_ok &= mi.total >= last_total;
            last_total = mi.total;
            index_ok &= seen.insert(mi.degrees.clone());
        }
        for total in 0..last_total {
            let count = seen.iter().filter(|m| m.iter().sum::<usize>() == total).count() as u64;
            index_ok &= count == binom((total + d - 1) as u64, (d - 1) as u64);
        }
        let all: BTreeSet<Vec<usize>> = enumerate_graded(d, last_total.saturating_sub(1));
        index_ok &= all.iter().all(|m| seen.contains(m));
    }
    Outcome::new(
        worst <= 1e-8 && index_ok,
        format!("max orthonormality error {worst:.2e} for orders ≤ 20; multi-index bijection {}", if index_ok { "holds" } else { "violated" }),
    )
}

/// Every multi-index in `d` dimensions with total degree at most `max_total`.
pub fn enumerate_graded(d: usize, max_total: usize) -> std::collections::BTreeSet<Vec<usize>> {
    let mut out = std::collections::BTreeSet::new();
    let mut cur = vec![0usize; d];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut std::collections::BTreeSet<Vec<usize>>) {
        if pos == cur.len() {
            out.insert(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(pos + 1, left - v, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, max_total, &mut cur, &mut out);
    out
}

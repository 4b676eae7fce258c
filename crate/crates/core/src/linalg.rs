//! Small dense linear-algebra helpers shared by the fitting code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal jitter added before every Gram factorization.
pub const JITTER: f64 = 1e-8;
/// Jitter used for the single retry when the first factorization fails.
pub const RETRY_JITTER: f64 = 1e-6;

/// Cholesky factorization of `m + JITTER·I`, retried once with `RETRY_JITTER`.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    for jitter in [JITTER, RETRY_JITTER] {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(a) {
            return Ok(ch);
        }
    }
    Err(Error::Numerical(format!(
        "matrix of order {} is not positive definite after jitter {RETRY_JITTER}",
        m.nrows()
    )))
}

/// Cholesky factorization without jitter; fails on non-PD input.
pub fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("matrix of order {n} is not positive definite")))
}

/// Symmetrize in place, `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log density of `N(mean, cov)` at `x`, given the Cholesky factor of `cov`.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let r = x - mean;
    let w = chol.l().solve_lower_triangular(&r).expect("triangular factor is nonsingular");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (w.norm_squared() + log_det + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Least-squares solution of `a·x ≈ b` through a truncated SVD.
///
/// Singular values below `rel_tol · σ_max` are discarded. Returns the
/// solution together with the numerical rank.
pub fn lstsq_svd(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    for &i in &keep {
        let coef = u.column(i).transpose() * b / svd.singular_values[i];
        x += vt.row(i).transpose() * coef;
    }
    (x, keep.len())
}

/// `a · b` for a `b` with few columns, streaming `a` once column by column.
pub fn thin_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for j in 0..a.ncols() {
        let col = a.column(j);
        for c in 0..b.ncols() {
            let w = b[(j, c)];
            if w != 0.0 {
                out.column_mut(c).axpy(w, &col, 1.0);
            }
        }
    }
    out
}

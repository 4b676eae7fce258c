//! Closed-form Mercer eigensystem of the modified squared-exponential kernel
//!
//! ```text
//! κ(s, s') = exp(−a‖s‖² − a‖s'‖² − b‖s − s'‖²),   a, b > 0
//! ```
//!
//! With `c = √(a² + 2ab)`, `A = a + b + c` and `B = b/A`, the kernel admits the
//! expansion `κ(s, s') = Σ_l ζ_l φ_l(s) φ_l(s')` where the eigenfunctions are
//! tensor products of normalized Hermite functions,
//!
//! ```text
//! φ_l(s) = (2c)^{d/4} exp(−c‖s‖²) Π_i H_{m_i}(√(2c) s_i)
//! ζ_l    = (π/A)^{d/2} B^{k_0},   k_0 = m_1 + … + m_d
//! ```
//!
//! and the rank `l` runs over multi-indices in graded order. The eigenfunctions
//! are orthonormal in `L²(R^d)` with respect to Lebesgue measure.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::points::{sq_dist, sq_norm, Points};

/// Default envelope decay when the kernel stands in for a plain squared exponential.
pub const DEFAULT_ENVELOPE_DECAY: f64 = 0.25;

/// Parameters of the modified squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Envelope decay `a`.
    pub a: f64,
    /// Inverse squared range `b`.
    pub b: f64,
    /// Spatial dimension.
    pub d: usize,
}

impl KernelParams {
    pub fn new(a: f64, b: f64, d: usize) -> Result<Self> {
        let p = Self { a, b, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(invalid(format!("kernel envelope decay a must be positive, got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(invalid(format!("kernel range parameter b must be positive, got {}", self.b)));
        }
        if self.d == 0 {
            return Err(invalid("kernel dimension must be positive"));
        }
        Ok(())
    }

    /// `c = √(a² + 2ab)`.
    pub fn c(&self) -> f64 {
        (self.a * self.a + 2.0 * self.a * self.b).sqrt()
    }

    /// `A = a + b + c`.
    pub fn big_a(&self) -> f64 {
        self.a + self.b + self.c()
    }

    /// Geometric decay rate of the eigenvalues, `B = b/A ∈ (0, 1)`.
    pub fn decay(&self) -> f64 {
        self.b / self.big_a()
    }

    /// Leading eigenvalue `ζ_1 = (π/A)^{d/2}`.
    pub fn leading_eigenvalue(&self) -> f64 {
        (PI / self.big_a()).powf(self.d as f64 / 2.0)
    }
}

/// Multi-index attached to a rank `l` of the eigen-expansion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    pub rank: usize,
    pub degrees: Vec<usize>,
    pub total: usize,
}

/// Binomial coefficient; zero when `k > n`.
pub fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    u64::try_from(acc).expect("binomial coefficient overflows u64")
}

/// Normalized Hermite polynomial `H_k(x)`, orthonormal under weight `e^{−x²}`.
pub fn hermite(k: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for j in 0..k {
        let next = x * (2.0 / (j + 1) as f64).sqrt() * cur - (j as f64 / (j + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_0(x), …, H_kmax(x)` in one pass of the recurrence.
pub fn hermite_table(kmax: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(PI.powf(-0.25));
    if kmax >= 1 {
        out.push(2f64.sqrt() * x * out[0]);
    }
    for j in 1..kmax {
        let next = x * (2.0 / (j + 1) as f64).sqrt() * out[j] - (j as f64 / (j + 1) as f64).sqrt() * out[j - 1];
        out.push(next);
    }
    out
}

/// Multi-index of rank `l` (1-based) in dimension `d`.
///
/// Follows the recursion `l_0 = l − 1`, `k_i` is the unique integer with
/// `C(k_i + d − i − 1, d − i) ≤ l_i < C(k_i + d − i, d − i)`,
/// `l_{i+1} = l_i − C(k_i + d − i − 1, d − i)`, `k_d = 0` and
/// `m_i = k_{i−1} − k_i`.
pub fn multi_index(l: usize, d: usize) -> MultiIndex {
    assert!(l >= 1 && d >= 1, "rank and dimension are 1-based");
    let mut rem = (l - 1) as u64;
    let mut ks = vec![0u64; d + 1];
    for (i, k_slot) in ks.iter_mut().take(d).enumerate() {
        let r = (d - i) as u64;
        let mut k = 0u64;
        while binom(k + r, r) <= rem {
            k += 1;
        }
        *k_slot = k;
        rem -= binom(k + r - 1, r);
    }
    let degrees: Vec<usize> = (0..d).map(|i| (ks[i] - ks[i + 1]) as usize).collect();
    MultiIndex {
        rank: l,
        total: ks[0] as usize,
        degrees,
    }
}

/// Eigenvalue `ζ_l`.
pub fn eigenvalue(l: usize, params: &KernelParams) -> f64 {
    let k0 = multi_index(l, params.d).total;
    params.leading_eigenvalue() * params.decay().powi(k0 as i32)
}

/// Eigenfunction `φ_l` evaluated at `s`.
pub fn eigenfunction(l: usize, s: &[f64], params: &KernelParams) -> f64 {
    assert_eq!(s.len(), params.d, "point dimension mismatch");
    let idx = multi_index(l, params.d);
    let c = params.c();
    let scale = (2.0 * c).sqrt();
    let envelope = (2.0 * c).powf(params.d as f64 / 4.0) * (-c * sq_norm(s)).exp();
    idx.degrees
        .iter()
        .zip(s)
        .fold(envelope, |acc, (&m, &si)| acc * hermite(m, scale * si))
}

/// `κ(s, s')`.
pub fn kernel_eval(s: &[f64], t: &[f64], params: &KernelParams) -> f64 {
    (-params.a * sq_norm(s) - params.a * sq_norm(t) - params.b * sq_dist(s, t)).exp()
}

/// Fraction of eigenvalue mass kept by all multi-indices of total degree ≤ `max_degree`.
pub fn recovery_ratio(params: &KernelParams, max_degree: usize) -> f64 {
    let b = params.decay();
    let d = params.d as u64;
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 0..=max_degree as u64 {
        sum += binom(k + d - 1, d - 1) as f64 * pow;
        pow *= b;
    }
    (1.0 - b).powi(params.d as i32) * sum
}

/// Truncated eigensystem: all multi-indices up to a maximum total degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub params: KernelParams,
    pub max_degree: usize,
    pub indices: Vec<MultiIndex>,
    pub eigenvalues: Vec<f64>,
    pub ratio: f64,
}

/// JSON manifest describing an exported eigensystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenManifest {
    pub a: f64,
    pub b: f64,
    pub d: usize,
    pub m_deg: usize,
    #[serde(rename = "L")]
    pub len: usize,
    pub ratio: f64,
}

impl EigenSystem {
    pub fn with_max_degree(params: KernelParams, max_degree: usize) -> Result<Self> {
        params.validate()?;
        let len = binom((max_degree + params.d) as u64, params.d as u64) as usize;
        let indices: Vec<MultiIndex> = (1..=len).map(|l| multi_index(l, params.d)).collect();
        let lead = params.leading_eigenvalue();
        let decay = params.decay();
        let eigenvalues = indices.iter().map(|m| lead * decay.powi(m.total as i32)).collect();
        Ok(Self {
            params,
            max_degree,
            indices,
            eigenvalues,
            ratio: recovery_ratio(&params, max_degree),
        })
    }

    /// Number of retained eigenpairs `L`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Row `[φ_1(s), …, φ_L(s)]`.
    pub fn features(&self, s: &[f64]) -> Vec<f64> {
        let p = &self.params;
        assert_eq!(s.len(), p.d, "point dimension mismatch");
        let c = p.c();
        let scale = (2.0 * c).sqrt();
        let envelope = (2.0 * c).powf(p.d as f64 / 4.0) * (-c * sq_norm(s)).exp();
        let tables: Vec<Vec<f64>> = s.iter().map(|&si| hermite_table(self.max_degree, scale * si)).collect();
        self.indices
            .iter()
            .map(|idx| {
                idx.degrees
                    .iter()
                    .zip(&tables)
                    .fold(envelope, |acc, (&m, t)| acc * t[m])
            })
            .collect()
    }

    pub fn manifest(&self) -> EigenManifest {
        EigenManifest {
            a: self.params.a,
            b: self.params.b,
            d: self.params.d,
            m_deg: self.max_degree,
            len: self.len(),
            ratio: self.ratio,
        }
    }

    /// CSV rows `l, k_0, m_1..m_d, zeta`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["l".to_string(), "k0".to_string()];
        header.extend((1..=self.params.d).map(|i| format!("m{i}")));
        header.push("zeta".to_string());
        w.write_record(&header)?;
        for (idx, z) in self.indices.iter().zip(&self.eigenvalues) {
            let mut rec = vec![idx.rank.to_string(), idx.total.to_string()];
            rec.extend(idx.degrees.iter().map(|m| m.to_string()));
            rec.push(format!("{z:e}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Smallest truncation whose recovery ratio reaches `target_ratio`.
pub fn truncation_level(target_ratio: f64, params: KernelParams) -> Result<EigenSystem> {
    params.validate()?;
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(invalid(format!("target recovery ratio must lie in (0, 1), got {target_ratio}")));
    }
    let mut m = 0;
    while recovery_ratio(&params, m) < target_ratio {
        m += 1;
    }
    EigenSystem::with_max_degree(params, m)
}

/// `n × L` matrix with entry `(i, l) = φ_l(s_i)`.
pub fn basis_matrix(locations: &Points, eig: &EigenSystem) -> DMatrix<f64> {
    let len = eig.len();
    let rows: Vec<f64> = (0..locations.len())
        .into_par_iter()
        .flat_map_iter(|i| eig.features(locations.point(i)))
        .collect();
    DMatrix::from_row_slice(locations.len(), len, &rows)
}

/// Gram matrix `{κ(s_i, s_j)}` (no jitter).
pub fn gram(locations: &Points, params: &KernelParams) -> DMatrix<f64> {
    let n = locations.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let si = locations.point(i);
        for j in 0..=i {
            let v = kernel_eval(si, locations.point(j), params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cross-kernel vector `{κ(s0, s_i)}`.
pub fn cross_kernel(s0: &[f64], locations: &Points, params: &KernelParams) -> Vec<f64> {
    locations.iter().map(|s| kernel_eval(s0, s, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> KernelParams {
        KernelParams::new(1.0, 1.0, 1).unwrap()
    }

    #[test]
    fn hermite_low_orders() {
        assert!((hermite(0, 0.7) - 0.751_125_544_464_942_5).abs() < 1e-12);
        assert!((hermite(1, 1.0) - 1.062_251_932_027_197).abs() < 1e-12);
        // H_2(x) = (2x² − 1) / (√2 π^{1/4})
        let x: f64 = 0.3;
        let expected = (2.0 * x * x - 1.0) / (2f64.sqrt() * PI.powf(0.25));
        assert!((hermite(2, x) - expected).abs() < 1e-14);
    }

    #[test]
    fn hermite_table_agrees_with_pointwise() {
        let t = hermite_table(30, -1.3);
        for (k, v) in t.iter().enumerate() {
            assert!((v - hermite(k, -1.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_index_first_ranks() {
        let m = multi_index(1, 3);
        assert_eq!(m.degrees, vec![0, 0, 0]);
        assert_eq!(m.total, 0);
        let m = multi_index(2, 2);
        assert_eq!(m.degrees, vec![1, 0]);
        assert_eq!(m.total, 1);
        let m = multi_index(5, 1);
        assert_eq!(m.degrees, vec![4]);
        assert_eq!(m.total, 4);
    }

    #[test]
    fn eigenvalue_closed_form() {
        // √(π/(2+√3)) with the Lebesgue-orthonormal normalization.
        let z = eigenvalue(1, &unit());
        assert!((z - (PI / (2.0 + 3f64.sqrt())).sqrt()).abs() < 1e-14);
        assert!((z - 0.917_489_626_359_302_8).abs() < 1e-12);
        let p2 = KernelParams::new(1.0, 1.0, 2).unwrap();
        let expected = (PI / p2.big_a()) * p2.decay();
        assert!((eigenvalue(2, &p2) - expected).abs() < 1e-14);
    }

    #[test]
    fn eigenvalue_ratio_is_power_of_decay() {
        let p = KernelParams::new(0.3, 7.0, 3).unwrap();
        for l in 1..60 {
            let k0 = multi_index(l, 3).total as i32;
            let r = eigenvalue(l, &p) / eigenvalue(1, &p);
            assert!((r - p.decay().powi(k0)).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenfunction_at_origin_and_on_axis() {
        let p = KernelParams::new(1.0, 1.0, 2).unwrap();
        let c = p.c();
        let v = eigenfunction(1, &[0.0, 0.0], &p);
        assert!((v - (2.0 * c).sqrt() / PI.sqrt()).abs() < 1e-13);
        let x = 0.4;
        let expected = (2.0 * c).sqrt() * (-c * x * x).exp() * hermite(1, (2.0 * c).sqrt() * x) * hermite(0, 0.0);
        assert!((eigenfunction(2, &[x, 0.0], &p) - expected).abs() < 1e-13);
    }

    #[test]
    fn kernel_values() {
        let p = KernelParams::new(0.25, 3.0, 2).unwrap();
        assert_eq!(kernel_eval(&[0.0, 0.0], &[0.0, 0.0], &p), 1.0);
        let s = [0.3, -0.2];
        assert!((kernel_eval(&s, &s, &p) - (-2.0 * 0.25 * 0.13f64).exp()).abs() < 1e-15);
        let t = [0.1, 0.9];
        assert_eq!(kernel_eval(&s, &t, &p), kernel_eval(&t, &s, &p));
    }

    #[test]
    fn truncation_level_in_one_dimension() {
        let p = unit();
        let b = p.decay();
        assert!((recovery_ratio(&p, 1) - (1.0 - b * b)).abs() < 1e-14);
        let eig = truncation_level(0.999, p).unwrap();
        // Geometric series: 1 − B^{m+1} ≥ 0.999.
        let m = ((0.001f64).ln() / b.ln() - 1.0).ceil() as usize;
        assert_eq!(eig.max_degree, m);
        assert_eq!(eig.len(), m + 1);
        assert!(truncation_level(1.0, p).is_err());
    }

    #[test]
    fn ratio_nondecreasing_in_degree() {
        let p = KernelParams::new(0.25, 30.0, 2).unwrap();
        let mut prev = 0.0;
        for m in 0..80 {
            let r = recovery_ratio(&p, m);
            assert!(r >= prev && r < 1.0);
            prev = r;
        }
    }

    #[test]
    fn basis_rows_follow_eigenfunctions() {
        let p = KernelParams::new(0.5, 2.0, 2).unwrap();
        let eig = EigenSystem::with_max_degree(p, 4).unwrap();
        let pts = Points::from_rows(&[vec![0.0, 0.0], vec![0.3, -0.4], vec![1.0, 0.2]]).unwrap();
        let phi = basis_matrix(&pts, &eig);
        assert_eq!(phi.shape(), (3, 15));
        for i in 0..3 {
            for l in 0..15 {
                assert!((phi[(i, l)] - eigenfunction(l + 1, pts.point(i), &p)).abs() < 1e-13);
            }
        }
        // permuting locations permutes rows
        let swapped = pts.select(&[2, 0, 1]);
        let phi2 = basis_matrix(&swapped, &eig);
        assert_eq!(phi2.row(0), phi.row(2));
    }

    #[test]
    fn gram_single_origin() {
        let p = KernelParams::new(0.25, 30.0, 2).unwrap();
        let pts = Points::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(gram(&pts, &p)[(0, 0)], 1.0);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let eig = EigenSystem::with_max_degree(KernelParams::new(1.0, 1.0, 2).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        eig.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "l,k0,m1,m2,zeta");
        assert_eq!(lines.len(), 7);
        assert!(lines[2].starts_with("2,1,1,0,"));
    }
}

//! Small dense linear algebra: symmetric matrices, Cholesky factors, and the
//! arrow-structured factorization used for latent fields with one diagonal
//! random-effect block and a dense fixed-effect border.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{ln, sqrt};

/// Dense square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from row-major data. Returns `None` when the length is not a square.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Quadratic form `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn cholesky(&self) -> Result<Cholesky, NotPositiveDefinite> {
        Cholesky::new(self)
    }

    /// Smallest eigenvalue of a symmetric matrix by Jacobi rotations.
    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(self).into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Raised when a Cholesky factorization meets a non-positive pivot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &SymMatrix) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: j });
            }
            let djj = sqrt(d);
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// `ln det A`.
    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| ln(self.l(i, i))).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l(k, i) * x[k];
            }
            x[i] = s / self.l(i, i);
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L z`, used to draw correlated Gaussian vectors.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..=i).map(|k| self.l(i, k) * z[k]).sum()).collect()
    }

    /// Full inverse `A⁻¹`.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }

    /// Mahalanobis norm `xᵀ A⁻¹ x`.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        self.solve_lower(x).iter().map(|v| v * v).sum()
    }
}

/// Symmetric positive-definite matrix with block structure
///
/// ```text
/// [ F   Bᵀ ]
/// [ B   D  ]
/// ```
///
/// where `F` is a dense `p × p` block, `D` is diagonal (`m` entries) and `B`
/// is `m × p`. Factorization cost is `O(m p² + p³)`.
#[derive(Clone, Debug)]
pub struct ArrowMatrix {
    pub fixed: SymMatrix,
    /// Row-major `m × p` border.
    pub border: Vec<f64>,
    pub diag: Vec<f64>,
}

impl ArrowMatrix {
    pub fn zeros(p: usize, m: usize) -> Self {
        Self { fixed: SymMatrix::zeros(p), border: vec![0.0; m * p], diag: vec![0.0; m] }
    }

    pub fn fixed_dim(&self) -> usize {
        self.fixed.dim()
    }

    pub fn random_dim(&self) -> usize {
        self.diag.len()
    }

    pub fn factor(&self) -> Result<ArrowFactor, NotPositiveDefinite> {
        let p = self.fixed.dim();
        let m = self.diag.len();
        for (j, &d) in self.diag.iter().enumerate() {
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: p + j });
            }
        }
        let mut schur = self.fixed.clone();
        for j in 0..m {
            let b = &self.border[j * p..(j + 1) * p];
            let inv_d = 1.0 / self.diag[j];
            for r in 0..p {
                if b[r] == 0.0 {
                    continue;
                }
                let br = b[r] * inv_d;
                for c in 0..p {
                    schur.add(r, c, -br * b[c]);
                }
            }
        }
        let schur = schur.cholesky()?;
        Ok(ArrowFactor { p, m, schur, border: self.border.clone(), diag: self.diag.clone() })
    }

    /// `y = H x` with `x = (fixed, random)`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = self.fixed.dim();
        let m = self.diag.len();
        let (xf, xr) = x.split_at(p);
        let mut y = self.fixed.mul_vec(xf);
        y.resize(p + m, 0.0);
        for j in 0..m {
            let b = &self.border[j * p..(j + 1) * p];
            let bx: f64 = b.iter().zip(xf).map(|(a, c)| a * c).sum();
            y[p + j] = bx + self.diag[j] * xr[j];
            for r in 0..p {
                y[r] += b[r] * xr[j];
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct ArrowFactor {
    p: usize,
    m: usize,
    schur: Cholesky,
    border: Vec<f64>,
    diag: Vec<f64>,
}

impl ArrowFactor {
    pub fn ln_det(&self) -> f64 {
        self.schur.ln_det() + self.diag.iter().map(|&d| ln(d)).sum::<f64>()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (p, m) = (self.p, self.m);
        let (rf, rr) = rhs.split_at(p);
        let mut reduced = rf.to_vec();
        for j in 0..m {
            let b = &self.border[j * p..(j + 1) * p];
            let s = rr[j] / self.diag[j];
            for r in 0..p {
                reduced[r] -= b[r] * s;
            }
        }
        let xf = self.schur.solve(&reduced);
        let mut x = xf.clone();
        x.reserve(m);
        for j in 0..m {
            let b = &self.border[j * p..(j + 1) * p];
            let bx: f64 = b.iter().zip(&xf).map(|(a, c)| a * c).sum();
            x.push((rr[j] - bx) / self.diag[j]);
        }
        x
    }

    /// Covariance of the fixed block, `(H⁻¹)_ff = S⁻¹`.
    pub fn fixed_covariance(&self) -> SymMatrix {
        self.schur.inverse()
    }

    /// Diagonal of `H⁻¹`, fixed block first.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let p = self.p;
        let s_inv = self.schur.inverse();
        let mut out = s_inv.diag();
        out.reserve(self.m);
        for j in 0..self.m {
            let d = self.diag[j];
            let v: Vec<f64> = self.border[j * p..(j + 1) * p].iter().map(|b| b / d).collect();
            out.push(1.0 / d + s_inv.quad_form(&v));
        }
        out
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues(a: &SymMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m.get(i, j) * m.get(i, j)).sum();
        if off < 1e-22 * (1.0 + m.trace().abs()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    m.diag()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> SymMatrix {
        SymMatrix::from_row_major(3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap()
    }

    #[test]
    fn cholesky_solves_and_inverts() {
        let a = spd3();
        let ch = a.cholesky().unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let back = a.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let inv = ch.inverse();
        for i in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| inv.get(r, i)).collect();
            let e = a.mul_vec(&col);
            for (r, v) in e.iter().enumerate() {
                assert!((v - if r == i { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(a.cholesky().unwrap_err(), NotPositiveDefinite { pivot: 1 });
    }

    #[test]
    fn arrow_factor_matches_dense() {
        let p = 2;
        let m = 3;
        let mut h = ArrowMatrix::zeros(p, m);
        h.fixed = SymMatrix::from_row_major(2, vec![9.0, 1.0, 1.0, 7.0]).unwrap();
        h.border = vec![1.0, 0.5, -0.3, 0.2, 0.7, 0.0];
        h.diag = vec![2.0, 3.0, 1.5];
        let mut dense = SymMatrix::zeros(p + m);
        for r in 0..p {
            for c in 0..p {
                dense.set(r, c, h.fixed.get(r, c));
            }
        }
        for j in 0..m {
            dense.set(p + j, p + j, h.diag[j]);
            for r in 0..p {
                dense.set(p + j, r, h.border[j * p + r]);
                dense.set(r, p + j, h.border[j * p + r]);
            }
        }
        let f = h.factor().unwrap();
        let d = dense.cholesky().unwrap();
        assert!((f.ln_det() - d.ln_det()).abs() < 1e-12);
        let rhs = [0.3, -1.0, 2.0, 0.1, -0.4];
        for (u, v) in f.solve(&rhs).iter().zip(d.solve(&rhs)) {
            assert!((u - v).abs() < 1e-12);
        }
        let inv = d.inverse();
        for (i, v) in f.inverse_diagonal().iter().enumerate() {
            assert!((v - inv.get(i, i)).abs() < 1e-12);
        }
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        for (u, v) in h.mul_vec(&x).iter().zip(dense.mul_vec(&x)) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = SymMatrix::from_row_major(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let mut ev = symmetric_eigenvalues(&a);
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }
}

//! Small dense complex matrix algebra.
//!
//! Matrices here are M×M with M between 1 and roughly 8, so everything is
//! stored inline and the factorizations are written out directly.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};

type Storage = SmallVec<[Complex64; 4]>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Absolute floor added to the relative diagonal loading term.
pub const LOADING_FLOOR: f64 = 1e-12;

/// Default relative diagonal loading applied before inverting a covariance.
pub const DEFAULT_LOADING: f64 = 1e-6;

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Storage,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: smallvec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(s, 0.0);
        }
        m
    }

    /// Builds from row-major entries.
    pub fn from_rows(dim: usize, entries: &[Complex64]) -> Self {
        assert_eq!(entries.len(), dim * dim, "expected {dim}x{dim} entries");
        Self { dim, data: entries.iter().copied().collect() }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    /// (A + Aᴴ) / 2.
    pub fn hermitian_part(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.dim {
            self[(i, i)].re += s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> ComplexVector {
        let n = self.dim;
        debug_assert_eq!(x.len(), n);
        let mut out: SmallVec<[Complex64; 4]> = smallvec![ZERO; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        ComplexVector(out)
    }

    /// xᴴ A x.
    pub fn quad_form(&self, x: &[Complex64]) -> Complex64 {
        let ax = self.mul_vec(x);
        x.iter().zip(ax.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// Re tr(Aᴴ B), the real inner product used for matrix adjoints.
    pub fn inner(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.dim;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Singular);
        }
        let tol = f64::EPSILON * n as f64 * scale;
        if n == 2 {
            let (p, q, r, t) = (self.data[0], self.data[1], self.data[2], self.data[3]);
            let det = p * t - q * r;
            if det.norm() <= tol * scale {
                return Err(Error::Singular);
            }
            let d = ONE / det;
            return Ok(Self { dim: 2, data: smallvec::smallvec![t * d, -q * d, -r * d, p * d] });
        }
        for col in 0..n {
            let (piv, mag) = (col..n)
                .map(|r| (r, a[(r, col)].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if mag <= tol {
                return Err(Error::Singular);
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let p = ONE / a[(col, col)];
            for j in 0..n {
                a[(col, j)] *= p;
                inv[(col, j)] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == ZERO {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= factor * ac;
                    inv[(r, j)] -= factor * ic;
                }
            }
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        let n = self.dim;
        debug_assert_eq!(n, rhs.dim);
        if n == 2 {
            let (a, b) = (&self.data, &rhs.data);
            return CMatrix {
                dim: 2,
                data: smallvec![
                    a[0] * b[0] + a[1] * b[2],
                    a[0] * b[1] + a[1] * b[3],
                    a[2] * b[0] + a[3] * b[2],
                    a[2] * b[1] + a[3] * b[3]
                ],
            };
        }
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

/// Length-M complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector(pub SmallVec<[Complex64; 4]>);

impl ComplexVector {
    pub fn zeros(dim: usize) -> Self {
        Self(smallvec![ZERO; dim])
    }

    /// Canonical basis vector e_k.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[k] = ONE;
        v
    }

    pub fn from_slice(x: &[Complex64]) -> Self {
        Self(x.iter().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// aᴴ b.
    pub fn dot(&self, other: &[Complex64]) -> Complex64 {
        self.0.iter().zip(other).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl std::ops::Deref for ComplexVector {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

/// Complex Hermitian matrix. Construction enforces exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Symmetrizes `m` into (m + mᴴ)/2 with an exactly real diagonal.
    pub fn hermitize(m: &CMatrix) -> Self {
        let mut h = m.hermitian_part();
        for i in 0..h.dim {
            h[(i, i)].im = 0.0;
        }
        Self(h)
    }

    /// Accepts `m` if it is Hermitian within `tol` (absolute), symmetrizing the rest.
    pub fn try_from_matrix(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NonFinite("hermitian matrix"));
        }
        if m.hermitian_defect() > tol {
            return Err(Error::Shape(format!(
                "matrix is not Hermitian (defect {:e})",
                m.hermitian_defect()
            )));
        }
        Ok(Self::hermitize(&m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim))
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self(CMatrix::scaled_identity(dim, s))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self(CMatrix::from_diag(diag))
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// Real trace.
    pub fn trace_re(&self) -> f64 {
        self.0.trace().re
    }

    /// The loaded matrix A + loading·(tr(A)/M + ε₀)·I.
    pub fn loaded(&self, loading: f64) -> Self {
        let mut out = self.0.clone();
        if loading > 0.0 {
            out.add_diag(loading_amount(self.trace_re(), self.dim(), loading));
        }
        Self(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &HermitianMatrix) {
        self.0.axpy(s, &other.0);
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    /// Lower Cholesky factor; fails unless strictly positive definite.
    pub fn cholesky(&self) -> Result<CMatrix> {
        let n = self.dim();
        let a = &self.0;
        let mut l = CMatrix::zeros(n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d.is_nan() || d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Minimum eigenvalue (via the Jacobi solver).
    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(self)
            .0
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Deref for HermitianMatrix {
    type Target = CMatrix;
    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

/// Size of the identity added by relative diagonal loading.
#[inline]
pub fn loading_amount(trace: f64, dim: usize, loading: f64) -> f64 {
    loading * (trace / dim as f64 + LOADING_FLOOR)
}

/// Inverse of the loaded matrix, re-Hermitized.
pub fn herm_inverse(a: &HermitianMatrix, loading: f64) -> Result<HermitianMatrix> {
    if a.dim() == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let loaded = a.loaded(loading);
    Ok(HermitianMatrix::hermitize(&loaded.0.inverse()?))
}

/// log det of a Hermitian positive definite matrix via its Cholesky factor.
pub fn logdet(a: &HermitianMatrix) -> Result<f64> {
    if a.dim() == 2 {
        let (p, t) = (a[(0, 0)].re, a[(1, 1)].re);
        let det = p * t - a[(0, 1)].norm_sqr();
        if !(p > 0.0 && det > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        return Ok(det.ln());
    }
    let l = a.cholesky()?;
    Ok((0..a.dim()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Rank-one outer product x xᴴ.
pub fn sample_outer(x: &[Complex64]) -> HermitianMatrix {
    let n = x.len();
    let mut m = CMatrix::zeros(n);
    for i in 0..n {
        m[(i, i)] = Complex64::new(x[i].norm_sqr(), 0.0);
        for j in i + 1..n {
            let v = x[i] * x[j].conj();
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    HermitianMatrix(m)
}

/// Generalized Rayleigh quotient wᴴAw / wᴴBw.
pub fn rayleigh_quotient(a: &HermitianMatrix, b: &HermitianMatrix, w: &[Complex64]) -> f64 {
    a.quad_form(w).re / b.quad_form(w).re
}

/// Unit-norm generalized eigenvector of (A, B) with the largest eigenvalue.
///
/// B must be positive definite. M ≤ 2 is solved in closed form; larger
/// problems go through a Cholesky reduction and Jacobi iterations.
pub fn gevd_principal(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<ComplexVector> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Shape("generalized eigenproblem dimensions differ".into()));
    }
    let l = b.cholesky()?;
    match n {
        1 => Ok(ComplexVector::basis(1, 0)),
        2 => Ok(gevd_2x2(a, b)),
        _ => gevd_reduced(a, &l),
    }
}

fn gevd_2x2(a: &HermitianMatrix, b: &HermitianMatrix) -> ComplexVector {
    // det(A - λB) = c2 λ² + c1 λ + c0
    let (a00, a01, a10, a11) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let (b00, b01, b10, b11) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    let c2 = (b00 * b11 - b01 * b10).re;
    let c1 = -(a00 * b11 + a11 * b00 - a01 * b10 - a10 * b01).re;
    let c0 = (a00 * a11 - a01 * a10).re;
    let disc = (c1 * c1 - 4.0 * c2 * c0).max(0.0);
    // numerically stable root selection
    let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
    let (r1, r2) = if q != 0.0 { (q / c2, c0 / q) } else { (0.0, 0.0) };
    let lambda = r1.max(r2);

    let m = [
        a00 - b00 * lambda,
        a01 - b01 * lambda,
        a10 - b10 * lambda,
        a11 - b11 * lambda,
    ];
    let row0 = m[0].norm_sqr() + m[1].norm_sqr();
    let row1 = m[2].norm_sqr() + m[3].norm_sqr();
    let scale = a.max_abs().max(b.max_abs() * lambda.abs());
    if row0.max(row1).sqrt() <= 1e-12 * scale {
        // A = λB: every direction is optimal
        return ComplexVector::basis(2, 0);
    }
    let (p, q) = if row0 >= row1 { (m[0], m[1]) } else { (m[2], m[3]) };
    let v = ComplexVector::from_slice(&[q, -p]);
    let nv = v.norm();
    v.scale(Complex64::new(1.0 / nv, 0.0))
}

fn gevd_reduced(a: &HermitianMatrix, l: &CMatrix) -> Result<ComplexVector> {
    let n = a.dim();
    let linv = l.inverse()?;
    let c = HermitianMatrix::hermitize(&(&(&linv * a.as_matrix()) * &linv.adjoint()));
    let (vals, vecs) = hermitian_eigen(&c);
    let k = (0..n)
        .max_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .expect("non-empty");
    let w = linv.adjoint().mul_vec(&vecs[k]);
    let nw = w.norm();
    Ok(w.scale(Complex64::new(1.0 / nw, 0.0)))
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations on
/// its real symmetric 2M×2M embedding. Returns eigenvalues and unit eigenvectors.
pub fn hermitian_eigen(a: &HermitianMatrix) -> (Vec<f64>, Vec<ComplexVector>) {
    let n = a.dim();
    let m = 2 * n;
    // [[Re, -Im], [Im, Re]]
    let mut s = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            s[i * m + j] = v.re;
            s[i * m + j + n] = -v.im;
            s[(i + n) * m + j] = v.im;
            s[(i + n) * m + j + n] = v.re;
        }
    }
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    let norm: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[i * m + j] * s[i * m + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = s[p * m + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (s[q * m + q] - s[p * m + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..m {
                    let skp = s[k * m + p];
                    let skq = s[k * m + q];
                    s[k * m + p] = c * skp - sn * skq;
                    s[k * m + q] = sn * skp + c * skq;
                }
                for k in 0..m {
                    let spk = s[p * m + k];
                    let sqk = s[q * m + k];
                    s[p * m + k] = c * spk - sn * sqk;
                    s[q * m + k] = sn * spk + c * sqk;
                }
                for k in 0..m {
                    let vkp = v[k * m + p];
                    let vkq = v[k * m + q];
                    v[k * m + p] = c * vkp - sn * vkq;
                    v[k * m + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    // each eigenvalue appears twice; keep the n largest-norm distinct vectors
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| s[i * m + i].total_cmp(&s[j * m + j]));
    let mut vals = Vec::with_capacity(n);
    let mut vecs: Vec<ComplexVector> = Vec::with_capacity(n);
    for &k in &order {
        if vals.len() == n {
            break;
        }
        let z: SmallVec<[Complex64; 4]> = (0..n)
            .map(|i| Complex64::new(v[i * m + k], v[(i + n) * m + k]))
            .collect();
        let mut z = ComplexVector(z);
        // project out directions already taken (pairs span the same complex line)
        for prev in &vecs {
            let c = prev.dot(&z);
            for (zi, pi) in z.0.iter_mut().zip(prev.iter()) {
                *zi -= pi * c;
            }
        }
        let nz = z.norm();
        if nz < 0.5 {
            continue;
        }
        vals.push(s[k * m + k]);
        vecs.push(z.scale(Complex64::new(1.0 / nz, 0.0)));
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(n);
        for _ in 0..rank {
            let x: Vec<Complex64> = (0..n)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            acc.axpy(1.0, &sample_outer(&x));
        }
        acc
    }

    fn residual(a: &CMatrix, b: &CMatrix) -> f64 {
        let p = a * b;
        let n = a.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { ONE } else { ZERO };
                worst = worst.max((p[(i, j)] - e).norm());
            }
        }
        worst
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        let i = herm_inverse(&HermitianMatrix::identity(3), 0.0).unwrap();
        assert_eq!(i, HermitianMatrix::identity(3));
        let d = herm_inverse(&HermitianMatrix::from_diag(&[2.0, 4.0]), 0.0).unwrap();
        assert_eq!(d, HermitianMatrix::from_diag(&[0.5, 0.25]));
    }

    #[test]
    fn inverse_residual_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_psd(&mut rng, 3, 4);
            let inv = herm_inverse(&a, 0.0).unwrap();
            assert!(residual(&a, &inv) < 1e-10);
            assert_eq!(inv.hermitian_defect(), 0.0);
        }
    }

    #[test]
    fn inverse_handles_condition_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_psd(&mut rng, 4, 4);
            let (_, vecs) = hermitian_eigen(&a);
            // rebuild with eigenvalues spanning 1e6
            let mut b = HermitianMatrix::zeros(4);
            for (k, v) in vecs.iter().enumerate() {
                b.axpy(10f64.powi(2 * k as i32), &sample_outer(v));
            }
            let inv = herm_inverse(&b, 0.0).unwrap();
            assert!(residual(&b, &inv) < 1e-8);
        }
    }

    #[test]
    fn singular_without_loading_is_an_error() {
        let a = sample_outer(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert!(matches!(herm_inverse(&a, 0.0), Err(Error::Singular)));
        // loading makes it invertible
        assert!(herm_inverse(&a, DEFAULT_LOADING).is_ok());
        assert!(herm_inverse(&HermitianMatrix::zeros(2), DEFAULT_LOADING).is_ok());
    }

    #[test]
    fn logdet_values() {
        assert_eq!(logdet(&HermitianMatrix::identity(4)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let v = logdet(&HermitianMatrix::from_diag(&[e, e * e])).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        assert!(matches!(
            logdet(&HermitianMatrix::from_diag(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn logdet_matches_cofactor_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_psd(&mut rng, 2, 3);
            let det = (a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]).re;
            assert!((logdet(&a).unwrap() - det.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn outer_product_examples() {
        let m = sample_outer(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(m, HermitianMatrix::from_diag(&[1.0, 0.0]));
        let m = sample_outer(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(m[(0, 1)], c(0.0, -1.0));
        assert_eq!(m[(1, 0)], c(0.0, 1.0));
        assert_eq!(m[(1, 1)], c(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<Complex64> = (0..5)
                .map(|_| c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let n2: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            assert!((sample_outer(&x).trace_re() - n2).abs() < 1e-12 * n2.max(1.0));
        }
    }

    #[test]
    fn gevd_simple_cases() {
        let w = gevd_principal(&HermitianMatrix::from_diag(&[2.0, 1.0]), &HermitianMatrix::identity(2))
            .unwrap();
        assert!((w[0].norm() - 1.0).abs() < 1e-12 && w[1].norm() < 1e-12);
        let a = random_psd(&mut ChaCha8Rng::seed_from_u64(4), 2, 3);
        let w = gevd_principal(&a, &a).unwrap();
        assert!((rayleigh_quotient(&a, &a, &w) - 1.0).abs() < 1e-12);
        assert!(matches!(
            gevd_principal(&a, &HermitianMatrix::zeros(2)),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn gevd_closed_form_agrees_with_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = random_psd(&mut rng, 2, 2);
            let b = random_psd(&mut rng, 2, 3);
            let w1 = gevd_2x2(&a, &b);
            let w2 = gevd_reduced(&a, &b.cholesky().unwrap()).unwrap();
            assert!((w1.dot(&w2).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gevd_dominates_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [2usize, 3, 4] {
            for _ in 0..5 {
                let a = random_psd(&mut rng, n, n);
                let b = random_psd(&mut rng, n, n + 1);
                let w = gevd_principal(&a, &b).unwrap();
                assert!((w.norm() - 1.0).abs() < 1e-12);
                let best = rayleigh_quotient(&a, &b, &w);
                for _ in 0..2000 {
                    let v: Vec<Complex64> = (0..n)
                        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect();
                    assert!(rayleigh_quotient(&a, &b, &v) <= best * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_psd(&mut rng, 4, 2);
        let (vals, vecs) = hermitian_eigen(&a);
        let mut rebuilt = HermitianMatrix::zeros(4);
        for (l, v) in vals.iter().zip(&vecs) {
            rebuilt.axpy(*l, &sample_outer(v));
        }
        assert!((&rebuilt.0 - &a.0).max_abs() < 1e-12);
        assert!(a.min_eigenvalue() > -1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn gevd_scale_invariant(seed in 0u64..10_000, alpha in 0.01f64..100.0, beta in 0.01f64..100.0, n in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(&mut rng, n, n);
            let b = random_psd(&mut rng, n, n + 1);
            let w1 = gevd_principal(&a, &b).unwrap();
            let w2 = gevd_principal(&a.scale(alpha), &b.scale(beta)).unwrap();
            proptest::prop_assert!(w1.dot(&w2).norm() >= 1.0 - 1e-10);
        }

        #[test]
        fn operations_preserve_hermiticity(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(&mut rng, 3, 2);
            proptest::prop_assert_eq!(herm_inverse(&a, DEFAULT_LOADING).unwrap().hermitian_defect(), 0.0);
            proptest::prop_assert_eq!(a.loaded(0.1).hermitian_defect(), 0.0);
        }
    }
}

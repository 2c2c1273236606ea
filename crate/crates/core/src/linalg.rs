//! Dense complex linear algebra helpers shared by the modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Absolute tolerance on conjugate symmetry, scaled by the largest entry.
const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PSD_CLIP_TOL: f64 = 1e-10;

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// A complex Hermitian matrix (covariances, correlation matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Wraps `m` after checking it is square and conjugate symmetric.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let scale = m.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Takes the Hermitian part `(m + m^H) / 2`.
    pub fn from_hermitian_part(m: &CMatrix) -> Self {
        let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        Self(sym)
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, value: f64) -> Self {
        Self(CMatrix::identity(n, n) * Complex64::new(value, 0.0))
    }

    /// Rank-one `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self::from_hermitian_part(&(v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * Complex64::new(c, 0.0))
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &HermitianMatrix) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        self.0.zip_apply(&other.0, |a, b| *a += b * c);
        Ok(())
    }

    /// Eigenpairs sorted by descending eigenvalue.
    pub fn eigen_desc(&self) -> (Vec<f64>, CMatrix) {
        hermitian_eig_desc(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// A factor `F` with `F F^H = self`, keeping only eigen-directions above
    /// the clipping tolerance. Fails if an eigenvalue is materially negative.
    pub fn psd_factor(&self) -> Result<CMatrix> {
        let n = self.dim();
        let (vals, vecs) = self.eigen_desc();
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        let tol = PSD_CLIP_TOL * top.max(f64::MIN_POSITIVE);
        if let Some(&lo) = vals.last() {
            if lo < -tol.max(PSD_CLIP_TOL) {
                return Err(Error::NotPositiveSemidefinite(lo));
            }
        }
        let kept: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol).collect();
        let mut f = CMatrix::zeros(n, kept.len());
        for (c, &i) in kept.iter().enumerate() {
            let s = vals[i].sqrt();
            f.set_column(c, &(vecs.column(i) * Complex64::new(s, 0.0)));
        }
        Ok(f)
    }

    /// Inverse through Cholesky; fails when not positive definite.
    pub fn inverse_pd(&self) -> Result<CMatrix> {
        Ok(hermitian_part(&cholesky_pd(&self.0, "cholesky")?.inverse()))
    }
}

/// Cholesky factorization that rejects matrices which are not positive
/// definite. The complex square root never fails, so the factor's diagonal
/// is checked to be real and positive.
pub fn cholesky_pd(m: &CMatrix, what: &'static str) -> Result<Cholesky<Complex64, nalgebra::Dyn>> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > 1e-12 * d.re {
            return Err(Error::NotPositiveDefinite(what));
        }
    }
    Ok(chol)
}

/// `(m + m^H) / 2` as a plain matrix.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in descending order.
pub fn hermitian_eig_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = m.nrows();
    let mut vecs = CMatrix::zeros(n, order.len());
    let mut vals = Vec::with_capacity(order.len());
    for (c, &i) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[i]);
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Rotates `v` so its largest-modulus entry is real and positive.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison keeps the first index among (near) ties
        if z.norm() > best_mag * (1.0 + 1e-9) {
            best_mag = z.norm();
            best = i;
        }
    }
    if best_mag > 0.0 {
        let rot = v[best].conj() / best_mag;
        v.apply(|z| *z *= rot);
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `|a^H b| / (|a| |b|)`.
pub fn cosine_similarity(a: &CVector, b: &CVector) -> f64 {
    let den = a.norm() * b.norm();
    if den == 0.0 {
        return 0.0;
    }
    a.dotc(b).norm() / den
}

/// Trace of `a * b` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Solves a general square system, `None` when singular.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    a.clone().lu().solve(b)
}

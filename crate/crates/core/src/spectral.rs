use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::chain::SubspaceHamiltonian;
use crate::error::{Error, Result};

/// Eigen-decomposition `H = V diag(lambda) V^T` of a real symmetric
/// Hamiltonian, eigenvalues ascending. Every segment propagator is built from
/// one of these, so a bang-bang problem needs exactly two.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCache {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

pub fn spectral_decompose(h: &SubspaceHamiltonian) -> Result<SpectralCache> {
    let m = h.matrix();
    let dev = (m - m.transpose()).amax();
    if dev > 1e-12 {
        return Err(Error::NotHermitian(dev));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Hamiltonian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let n = h.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        eigenvectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(SpectralCache {
        eigenvalues,
        eigenvectors,
    })
}

impl SpectralCache {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }

    /// Dense `exp(-i t H)`.
    pub fn propagator(&self, t: f64) -> DMatrix<Complex64> {
        let n = self.dim();
        let v = &self.eigenvectors;
        DMatrix::from_fn(n, n, |r, c| {
            (0..n)
                .map(|j| v[(r, j)] * v[(c, j)] * phase(self.eigenvalues[j], t))
                .sum()
        })
    }

    /// `out = V^T x`: site basis to eigenbasis.
    pub(crate) fn to_eigenbasis(&self, x: &[Complex64], out: &mut [Complex64]) {
        let v = &self.eigenvectors;
        let n = self.dim();
        for (j, o) in out.iter_mut().enumerate() {
            let col = v.column(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += x[i] * col[i];
            }
            *o = acc;
        }
    }

    /// `out = V c`: eigenbasis to site basis.
    pub(crate) fn to_site_basis(&self, c: &[Complex64], out: &mut [Complex64]) {
        let v = &self.eigenvectors;
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (j, &cj) in c.iter().enumerate() {
            let col = v.column(j);
            for (o, &vij) in out.iter_mut().zip(col.iter()) {
                *o += cj * vij;
            }
        }
    }

    /// `x <- exp(-i t H) x`, using `scratch` (length N) as workspace.
    pub(crate) fn apply(&self, t: f64, x: &mut [Complex64], scratch: &mut [Complex64]) {
        self.to_eigenbasis(x, scratch);
        for (c, &lambda) in scratch.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= phase(lambda, t);
        }
        self.to_site_basis(scratch, x);
    }
}

/// `exp(-i lambda t)`.
#[inline]
pub(crate) fn phase(lambda: f64, t: f64) -> Complex64 {
    let (s, c) = (lambda * t).sin_cos();
    Complex64::new(c, -s)
}

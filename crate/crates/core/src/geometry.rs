//! Mahalanobis geometry for a known covariance Σ.
//!
//! Everything else in the crate measures distances with `‖x‖_Σ = √(xᵀΣ⁻¹x)`.
//! A [`CovarianceModel`] validates Σ once and caches the symmetric factors
//! `W = Σ^{-1/2}` (whitening) and `W⁻¹ = Σ^{1/2}` (unwhitening / sampling).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, invalid, Error, Result};

/// Default eigenvalue floor, relative to the largest eigenvalue.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;

/// A validated symmetric positive-definite covariance with cached factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    sigma: DMatrix<f64>,
    precision: DMatrix<f64>,
    whitening: DMatrix<f64>,
    unwhitening: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    diagonal: bool,
}

impl CovarianceModel {
    /// Validates `sigma` with the default eigenvalue floor.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        Self::with_floor(sigma, DEFAULT_EIGEN_FLOOR)
    }

    /// Validates `sigma`; every eigenvalue must exceed `relative_floor` times the largest.
    pub fn with_floor(sigma: DMatrix<f64>, relative_floor: f64) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 {
            return Err(invalid("sigma", "dimension must be positive"));
        }
        check_dim(d, sigma.ncols())?;
        if !(relative_floor >= 0.0) {
            return Err(invalid("relative_floor", "must be nonnegative"));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sigma", "entries must be finite"));
        }

        let scale = sigma.amax();
        let mut asymmetry = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                asymmetry = asymmetry.max((sigma[(i, j)] - sigma[(j, i)]).abs());
            }
        }
        if scale > 0.0 && asymmetry > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric {
                asymmetry: asymmetry / scale,
            });
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;

        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || sym[(i, j)] == 0.0));
        if diagonal {
            let diag: DVector<f64> = sym.diagonal();
            let max = diag.max();
            let floor = relative_floor * max;
            let min = diag.min();
            if !(min > 0.0) || min <= floor {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: min,
                    floor,
                });
            }
            let precision = DMatrix::from_diagonal(&diag.map(|v| 1.0 / v));
            let whitening = DMatrix::from_diagonal(&diag.map(|v| 1.0 / libm::sqrt(v)));
            let unwhitening = DMatrix::from_diagonal(&diag.map(libm::sqrt));
            return Ok(Self {
                sigma: sym,
                precision,
                whitening,
                unwhitening,
                eigenvalues: diag,
                diagonal: true,
            });
        }

        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let floor = relative_floor * max;
        if !(min > 0.0) || min <= floor {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                floor,
            });
        }
        let q = &eig.eigenvectors;
        let spectral = |f: &dyn Fn(f64) -> f64| {
            let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            let m = q * scaled * q.transpose();
            (&m + m.transpose()) * 0.5
        };
        Ok(Self {
            precision: spectral(&|v| 1.0 / v),
            whitening: spectral(&|v| 1.0 / libm::sqrt(v)),
            unwhitening: spectral(&libm::sqrt),
            eigenvalues: eig.eigenvalues.clone(),
            sigma: sym,
            diagonal: false,
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, d))
    }

    /// Diagonal covariance from per-axis variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Σ⁻¹.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// The symmetric whitening factor `W` with `WᵀW = Σ⁻¹`.
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    /// `W⁻¹ = Σ^{1/2}`; maps standard normals to `N(0, Σ)`.
    pub fn unwhitening(&self) -> &DMatrix<f64> {
        &self.unwhitening
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `⟨x, y⟩_Σ = xᵀΣ⁻¹y`.
    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        Ok(self.inner_unchecked(x.as_slice(), y.as_slice()))
    }

    /// `‖x‖_Σ`.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(libm::sqrt(self.inner(x, x)?.max(0.0)))
    }

    /// `‖x − y‖_Σ`.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        self.norm(&(x - y))
    }

    pub fn whiten(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.whitening * x)
    }

    pub fn unwhiten(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.unwhitening * x)
    }

    /// `Σ⁻¹x`, so that `⟨λ, x⟩_Σ` over many points reduces to plain dot products.
    pub fn precision_mul(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.precision * x)
    }

    pub(crate) fn inner_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        if self.diagonal {
            return (0..d).map(|i| x[i] * self.precision[(i, i)] * y[i]).sum();
        }
        let mut acc = 0.0;
        for j in 0..d {
            let mut col = 0.0;
            for i in 0..d {
                col += x[i] * self.precision[(i, j)];
            }
            acc += col * y[j];
        }
        acc
    }

    pub(crate) fn whiten_into(&self, x: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.whitening, x, out);
    }

    pub(crate) fn unwhiten_into(&self, x: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.unwhitening, x, out);
    }
}

fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let d = m.nrows();
    for (i, o) in out.iter_mut().enumerate().take(d) {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate().take(d) {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    #[test]
    fn orthogonal_under_identity() {
        let cov = CovarianceModel::identity(2).unwrap();
        assert_eq!(cov.inner(&dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_inner_and_norm() {
        let cov = CovarianceModel::diagonal(&[4.0, 1.0]).unwrap();
        assert_eq!(cov.inner(&dvector![1.0, 0.0], &dvector![1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(cov.norm(&dvector![2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cov.whiten(&dvector![2.0, 2.0]).unwrap(), dvector![1.0, 2.0]);
    }

    #[test]
    fn euclidean_norm_and_zero() {
        let cov = CovarianceModel::identity(2).unwrap();
        assert_eq!(cov.norm(&dvector![3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(cov.norm(&dvector![0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cov.whiten(&dvector![0.3, -1.7]).unwrap(), dvector![0.3, -1.7]);
    }

    #[test]
    fn full_matrix_inner_matches_explicit_inverse() {
        // Σ⁻¹ = (1/3)[[2,−1],[−1,2]]; xᵀΣ⁻¹y for x=(1,1), y=(2,0) is (1/3)(4 − 2) = 2/3.
        let cov = CovarianceModel::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let x = dvector![1.0, 1.0];
        let y = dvector![2.0, 0.0];
        let via_factor = cov.inner(&x, &y).unwrap();
        let via_solve = {
            let lu = cov.sigma().clone().lu();
            x.dot(&lu.solve(&y).unwrap())
        };
        assert!((via_factor - 2.0 / 3.0).abs() < 1e-14);
        assert!((via_solve - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn whitening_factor_squares_to_precision() {
        let cov = CovarianceModel::new(dmatrix![2.0, 0.5, 0.1; 0.5, 1.0, 0.2; 0.1, 0.2, 3.0]).unwrap();
        let w = cov.whitening();
        let wtw = w.transpose() * w;
        assert!((wtw - cov.precision()).amax() < 1e-12);
        let round = cov.unwhitening() * w;
        assert!((round - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            CovarianceModel::new(dmatrix![1.0, 0.5; 0.4, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            CovarianceModel::new(dmatrix![1.0, 2.0; 2.0, 1.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            CovarianceModel::diagonal(&[1.0, 0.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            CovarianceModel::new(dmatrix![1.0, 0.0; 0.0, 1e-14]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(CovarianceModel::with_floor(dmatrix![1.0, 0.0; 0.0, 1e-14], 0.0).is_ok());
    }

    #[test]
    fn dimension_errors() {
        let cov = CovarianceModel::identity(3).unwrap();
        let err = cov.inner(&dvector![1.0, 0.0], &dvector![1.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 3, got: 2 });
        assert!(cov.norm(&dvector![1.0]).is_err());
        assert!(cov.whiten(&dvector![1.0]).is_err());
        assert!(cov.unwhiten(&dvector![1.0, 2.0, 3.0, 4.0]).is_err());
    }
}

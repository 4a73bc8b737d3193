//! Correlation matrices with validated construction and a documented
//! positive-semi-definite repair.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigenvalues below this are clipped during PSD repair.
const PSD_CLIP: f64 = 1e-10;

/// A validated correlation matrix: symmetric, unit diagonal, entries in
/// [-1, 1].
///
/// Positive semi-definiteness is not demanded at construction; matrices
/// assembled from estimated prevalences can be borderline. Factorization
/// applies an eigenvalue-clipping repair instead and logs a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    data: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validates and canonicalizes a square matrix: the diagonal must be 1
    /// and off-diagonal entries symmetric within 1e-12; both are then set
    /// exactly.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::invalid(format!(
                "correlation matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        let mut data = entries;
        for i in 0..n {
            if (data[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "diagonal entry ({i},{i}) = {} must be 1",
                    data[(i, i)]
                )));
            }
            data[(i, i)] = 1.0;
            for j in 0..i {
                let a = data[(i, j)];
                let b = data[(j, i)];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i},{j})")));
                }
                if (a - b).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "asymmetric entries ({i},{j}): {a} vs {b}"
                    )));
                }
                let v = 0.5 * (a + b);
                if v.abs() > 1.0 + 1e-12 {
                    return Err(Error::invalid(format!(
                        "correlation ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                let v = v.clamp(-1.0, 1.0);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Ok(CorrelationMatrix { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("correlation rows must form a square matrix"));
        }
        let data = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(data)
    }

    pub fn identity(dim: usize) -> Self {
        CorrelationMatrix {
            data: DMatrix::identity(dim, dim),
        }
    }

    /// All off-diagonal entries equal to `rho`.
    pub fn equicorrelated(dim: usize, rho: f64) -> Result<Self> {
        let data = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho });
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Correlation matrix of the coordinates listed in `indices` (0-based).
    pub fn submatrix(&self, indices: &[usize]) -> Result<Self> {
        let n = self.dim();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "submatrix index {bad} out of range for dimension {n}"
            )));
        }
        let k = indices.len();
        let data = DMatrix::from_fn(k, k, |i, j| self.data[(indices[i], indices[j])]);
        Ok(CorrelationMatrix { data })
    }

    /// Lower Cholesky factor, repairing the matrix first if factorization
    /// fails: eigenvalues below 1e-10 are clipped and the diagonal is
    /// renormalized back to 1. Returns the factor and whether repair ran.
    pub fn cholesky_lower(&self) -> Result<(DMatrix<f64>, bool)> {
        if let Some(chol) = nalgebra::Cholesky::new(self.data.clone()) {
            return Ok((chol.unpack(), false));
        }
        log::warn!(
            "correlation matrix of dimension {} is not positive definite; \
             applying eigenvalue-clipping repair",
            self.dim()
        );
        let repaired = self.repair_psd()?;
        match nalgebra::Cholesky::new(repaired) {
            Some(chol) => Ok((chol.unpack(), true)),
            None => Err(Error::Factorization(
                "matrix remained indefinite after PSD repair".into(),
            )),
        }
    }

    fn repair_psd(&self) -> Result<DMatrix<f64>> {
        let eig = nalgebra::SymmetricEigen::new(self.data.clone());
        let clipped = DVector::from_iterator(
            self.dim(),
            eig.eigenvalues.iter().map(|&l| l.max(PSD_CLIP)),
        );
        let mut m = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        // Rescale to unit diagonal.
        let scale: Vec<f64> = (0..self.dim()).map(|i| m[(i, i)].sqrt()).collect();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                m[(i, j)] /= scale[i] * scale[j];
            }
        }
        Ok(m)
    }
}

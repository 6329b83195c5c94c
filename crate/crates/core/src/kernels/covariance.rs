use nalgebra::{DMatrix, DVector};

use crate::data::PointSet;
use crate::error::{Error, Result};

/// Eigenvalues are clamped here before taking logarithms.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Lower bound on the trace scale used by the ridge.
pub const RIDGE_FLOOR: f64 = 1e-12;

/// Regularized set covariance together with its principal matrix logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDescriptor {
    matrix: DMatrix<f64>,
    log: DMatrix<f64>,
}

impl CovarianceDescriptor {
    /// Wraps an already symmetric positive definite matrix.
    pub fn from_spd(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid("covariance must be a nonempty square matrix"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        let matrix = symmetrize(matrix);
        let log = log_spd(&matrix);
        Ok(Self { matrix, log })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn log_matrix(&self) -> &DMatrix<f64> {
        &self.log
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Matrix logarithm of a symmetric matrix through its eigendecomposition.
pub fn log_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    log_spd_floored(m, EIGEN_FLOOR)
}

fn log_spd_floored(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let logs = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(floor).ln()),
    );
    let v = &eig.eigenvectors;
    let log = v * DMatrix::from_diagonal(&logs) * v.transpose();
    symmetrize(log)
}

/// `C = (1/n) Σ (x − x̄)(x − x̄)ᵀ + λI`, with `λ = ridge · max(trace(C)/d, 1e−12)`.
pub fn covariance(set: &PointSet, cov_ridge: f64) -> Result<CovarianceDescriptor> {
    if !(cov_ridge >= 0.0 && cov_ridge.is_finite()) {
        return Err(Error::invalid(format!("covariance ridge {cov_ridge} must be >= 0")));
    }
    let d = set.dim();
    let n = set.len();
    let mean = set.mean();
    let mut c = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for p in set.points() {
        for ((c, x), m) in centered.iter_mut().zip(p).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                c[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / n as f64;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let lambda = cov_ridge * (c.trace() / d as f64).max(RIDGE_FLOOR);
    for i in 0..d {
        c[(i, i)] += lambda;
    }
    // eigenvalues of C + λI are at least λ, so a tiny ridge may go below the usual floor
    let floor = if lambda > 0.0 { lambda.min(EIGEN_FLOOR) } else { EIGEN_FLOOR };
    let log = log_spd_floored(&c, floor);
    Ok(CovarianceDescriptor { matrix: c, log })
}

/// Squared Frobenius distance between the log-matrices.
pub fn log_euclidean_sq(a: &CovarianceDescriptor, b: &CovarianceDescriptor) -> f64 {
    a.log
        .iter()
        .zip(b.log.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// `exp(−‖log Ci − log Cj‖²_F / 2γ²)`.
pub fn statistical_kernel(ci: &CovarianceDescriptor, cj: &CovarianceDescriptor, gamma_s: f64) -> f64 {
    (-log_euclidean_sq(ci, cj) / (2.0 * gamma_s * gamma_s)).exp()
}

//! Dense symmetric linear algebra on top of `nalgebra`, plus a full-covariance
//! Gaussian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::ln_2pi;
use crate::tensor::Tensor;
use crate::Rng;

pub fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        data.extend(m.row(i).iter());
    }
    Tensor::from_vec(vec![m.nrows(), m.ncols()], data).expect("matrix is non-empty")
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor; the error reports the smallest eigenvalue.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(c) => Ok(c.l()),
        None => Err(Error::Numerical(format!(
            "Cholesky failed, min eigenvalue {:e}",
            min_eigenvalue(m)
        ))),
    }
}

pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("inverse of a non-PD matrix".into()))
}

/// Multivariate normal with a dense covariance.
#[derive(Clone, Debug)]
pub struct MvNormal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    logdet: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::shape(
                "mv_normal",
                &[mean.len()],
                &[cov.nrows(), cov.ncols()],
            ));
        }
        let chol = cholesky(&cov)?;
        let logdet = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(MvNormal {
            mean,
            cov,
            chol,
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det_cov(&self) -> f64 {
        self.logdet
    }

    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let eps = DVector::from_vec(rng.normal_vec(self.dim()));
        &self.mean + &self.chol * eps
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (y.norm_squared() + self.logdet + self.dim() as f64 * ln_2pi())
    }

    /// `∇_x log N(x; μ, Σ) = −Σ⁻¹(x − μ)`.
    pub fn score(&self, x: &[f64]) -> DVector<f64> {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let sol = self
            .chol
            .clone()
            .cholesky_solve_lower(&diff);
        -sol
    }

    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim() as f64 * (1.0 + ln_2pi()) + self.logdet)
    }
}

trait CholSolve {
    fn cholesky_solve_lower(self, b: &DVector<f64>) -> DVector<f64>;
}

impl CholSolve for DMatrix<f64> {
    /// Solves `L Lᵀ x = b` given the lower factor `L`.
    fn cholesky_solve_lower(self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower_triangular(b).expect("positive diagonal");
        self.transpose()
            .solve_upper_triangular(&y)
            .expect("positive diagonal")
    }
}

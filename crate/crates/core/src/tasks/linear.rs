//! Synthetic objectives whose solution set is an affine subspace of known
//! codimension: loss(θ) = ‖Aθ − b‖² with A a random codim×D matrix.
//!
//! These problems calibrate the whole measurement protocol, because the
//! crossing dimension is known analytically: a random d-dimensional
//! training subspace intersects the solution set almost surely iff
//! d ≥ codim. The [`restricted_minimum`](LinearProblem::restricted_minimum)
//! oracle computes the exact best loss attainable inside a given subspace
//! by least squares, giving trained runs an independent answer to match.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::subspace::SubspacePoint;
use crate::tag;
use crate::tasks::Objective;

/// ‖Aθ − b‖² with frozen random A (codim×D) and b.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Draws the problem for `(d_full, codim, seed)`: A and b have i.i.d.
/// standard normal entries.
pub fn linear_solution_problem(d_full: usize, codim: usize, seed: u64) -> Result<LinearProblem> {
    if codim == 0 || codim > d_full {
        return Err(Error::InvalidArgument(format!(
            "codimension must satisfy 0 < codim ≤ D, got codim={codim}, D={d_full}"
        )));
    }
    let mut sa = Stream::tagged(seed, &[tag::LIN_A]);
    let a = DMatrix::from_fn(codim, d_full, |_, _| sa.normal());
    let mut sb = Stream::tagged(seed, &[tag::LIN_B]);
    let b = DVector::from_fn(codim, |_, _| sb.normal());
    Ok(LinearProblem { a, b })
}

impl LinearProblem {
    /// Codimension of the solution set (row count of A).
    pub fn codim(&self) -> usize {
        self.a.nrows()
    }

    /// Test-support constructor from explicit parts (e.g. rotated copies).
    #[doc(hidden)]
    pub fn from_parts(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        LinearProblem { a, b }
    }

    /// A point on the solution set, via the minimum-norm solution of
    /// Aθ = b (exists because A has full row rank almost surely).
    pub fn solution_point(&self) -> Result<Vec<f64>> {
        let svd = self.a.clone().svd(true, true);
        let theta = svd
            .solve(&self.b, 1e-12)
            .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))?;
        Ok(theta.as_slice().to_vec())
    }

    /// Exact minimum of the loss restricted to the affine subspace
    /// θ0 + span(P): least squares on ‖(AP)v − (b − Aθ0)‖², solved via the
    /// normal equations (SVD fallback when the Gram matrix is singular,
    /// i.e. when d exceeds the rank of AP).
    pub fn restricted_minimum(&self, point: &SubspacePoint) -> Result<f64> {
        if point.d_full() != self.a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "subspace lives in D={} but the problem has D={}",
                point.d_full(),
                self.a.ncols()
            )));
        }
        let d = point.d_sub();
        // Materialize M = A·P one projected basis column at a time.
        let mut m = DMatrix::zeros(self.a.nrows(), d);
        for j in 0..d {
            let col = point.projection().materialize_column(j)?;
            let acol = &self.a * DVector::from_column_slice(&col);
            m.set_column(j, &acol);
        }
        let r = &self.b - &self.a * DVector::from_column_slice(point.theta0());

        let gram = m.transpose() * &m;
        let rhs = m.transpose() * &r;
        let v = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => m
                .clone()
                .svd(true, true)
                .solve(&r, 1e-12)
                .map_err(|e| Error::Numeric(format!("restricted least squares failed: {e}")))?,
        };
        let resid = &m * v - r;
        Ok(resid.norm_squared())
    }
}

impl Objective for LinearProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.a.ncols(),
                theta.len()
            )));
        }
        let resid = &self.a * DVector::from_column_slice(theta) - &self.b;
        Ok(resid.norm_squared())
    }

    fn value_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        if theta.len() != self.a.ncols() || grad.len() != self.a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters and gradient slots, got {} and {}",
                self.a.ncols(),
                theta.len(),
                grad.len()
            )));
        }
        let resid = &self.a * DVector::from_column_slice(theta) - &self.b;
        // ∇‖Aθ − b‖² = 2Aᵀ(Aθ − b).
        let g = 2.0 * self.a.transpose() * &resid;
        grad.copy_from_slice(g.as_slice());
        Ok(resid.norm_squared())
    }
}

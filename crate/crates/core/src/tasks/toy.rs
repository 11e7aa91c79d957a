//! The exactly-solvable toy objective over θ ∈ R^1000.
//!
//! The vector is split into 10 contiguous blocks of 100 entries, and block
//! k (counting from 1) is asked to sum to k:
//!
//! ```text
//! loss(θ) = Σ_{k=1..10} (sum(block_k) − k)²
//! ```
//!
//! Every constraint involves disjoint coordinates, so the solution set is
//! an affine hyperplane of dimension 1000 − 10 = 990 and the loss Hessian
//! has rank exactly 10. That makes the problem's intrinsic dimension 10 by
//! construction — the reference point for validating the whole measurement
//! pipeline.

use crate::error::{Error, Result};
use crate::tasks::Objective;

/// Ambient dimension of the toy problem.
pub const TOY_DIM: usize = 1000;
/// Number of sum constraints (= rank of the Hessian).
pub const TOY_BLOCKS: usize = 10;
/// Entries per block.
pub const TOY_BLOCK_LEN: usize = 100;

/// The fixed 1000-dimensional block-sum objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyProblem;

/// Σ_k (sum(block_k) − k)² with blocks 1-indexed.
pub fn toy_loss(theta: &[f64]) -> Result<f64> {
    if theta.len() != TOY_DIM {
        return Err(Error::DimensionMismatch(format!(
            "toy objective expects {TOY_DIM} parameters, got {}",
            theta.len()
        )));
    }
    let mut loss = 0.0;
    for k in 0..TOY_BLOCKS {
        let block = &theta[k * TOY_BLOCK_LEN..(k + 1) * TOY_BLOCK_LEN];
        let resid = block.iter().sum::<f64>() - (k + 1) as f64;
        loss += resid * resid;
    }
    Ok(loss)
}

/// Performance metric exp(−loss) ∈ (0, 1]; 1.0 means solved exactly and
/// the 90%-solved threshold corresponds to loss ≤ −ln(0.9) ≈ 0.105.
pub fn toy_performance(loss: f64) -> f64 {
    (-loss).exp()
}

impl Objective for ToyProblem {
    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        toy_loss(theta)
    }

    fn value_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        if grad.len() != TOY_DIM {
            return Err(Error::DimensionMismatch(format!(
                "gradient buffer must have length {TOY_DIM}, got {}",
                grad.len()
            )));
        }
        let mut loss = 0.0;
        for k in 0..TOY_BLOCKS {
            let range = k * TOY_BLOCK_LEN..(k + 1) * TOY_BLOCK_LEN;
            let resid = theta[range.clone()].iter().sum::<f64>() - (k + 1) as f64;
            loss += resid * resid;
            // ∂loss/∂θ_i = 2·resid for every i in block k.
            let g = 2.0 * resid;
            for slot in &mut grad[range] {
                *slot = g;
            }
        }
        Ok(loss)
    }
}

//! Objective landscapes and datasets the toolkit measures.
//!
//! Four families: an exactly-solvable squared-error toy problem whose
//! solution set has a known codimension, synthetic linear-solution-set
//! problems with an analytic least-squares oracle, MNIST (plus its
//! shuffled-pixel and shuffled-label variants), and a cart-pole control
//! environment for reinforcement-learning runs.

pub mod cartpole;
pub mod linear;
pub mod mnist;
pub mod toy;

pub use cartpole::{Action, CartPole};
pub use linear::{linear_solution_problem, LinearProblem};
pub use mnist::{load_mnist, mnist_dataset, Dataset, PerformanceMeasure, Split};
pub use toy::{toy_loss, toy_performance, ToyProblem};

use crate::error::Result;

/// A differentiable scalar function of a flat parameter vector. The
/// optimizers in this crate train anything that implements it, either
/// directly over θ(D) or through a subspace reparameterization.
pub trait Objective: Sync {
    /// Ambient dimension D.
    fn dim(&self) -> usize;

    /// Loss at `theta`.
    fn value(&self, theta: &[f64]) -> Result<f64>;

    /// Loss at `theta`, writing ∂loss/∂θ into `grad` (length D).
    fn value_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

//! Random-subspace training and intrinsic-dimension measurement.
//!
//! The central object is the reparameterization
//!
//! ```text
//! theta_eff = theta0 + P * theta_d
//! ```
//!
//! where `theta0` (a frozen random initialization in the full
//! D-dimensional parameter space) and `P` (a frozen random D×d matrix
//! with unit-norm columns) are never trained, and only the d-dimensional
//! `theta_d` is optimized. Sweeping `d` and finding where subspace
//! training first matches a fixed fraction of full-parameter performance
//! yields the intrinsic dimension of the objective — a measure of how
//! many degrees of freedom the problem actually requires, independent of
//! how many the chosen parameterization has.
//!
//! Modules, bottom-up:
//!
//! * [`rng`] — deterministic counter-based randomness (seeds are the
//!   serialization format, so streams are frozen here, not imported).
//! * [`nn`] — flat-vector neural nets (fully connected and small conv
//!   classifiers) with reverse-mode gradients and a finite-difference
//!   oracle.
//! * [`projection`] — dense, very-sparse, and Fastfood realizations of
//!   `P`, all exposing matvec + adjoint without materializing `P` when
//!   avoidable.
//! * [`subspace`] — glue that owns `(theta0, P, theta_d)` and maps
//!   gradients back to the subspace.
//! * [`tasks`] — objectives and datasets: a block-sum toy problem, random
//!   linear systems with a least-squares oracle, MNIST (plus
//!   shuffled-pixel and shuffled-label variants), and a CartPole
//!   environment.
//! * [`optimize`] — SGD / momentum / Adam and the supervised training
//!   loops, usable both directly and through a subspace.
//! * [`estimator`] — performance sweeps over `d`, threshold crossing,
//!   bootstrap uncertainty, refinement.
//! * [`codec`] — seed-plus-coefficients checkpoint format.
//! * [`escontrol`] — evolution-strategies training for control policies.

pub mod codec;
pub mod error;
pub mod escontrol;
pub mod estimator;
pub mod nn;
pub mod optimize;
pub mod projection;
pub mod rng;
pub mod subspace;
pub mod tasks;

pub use codec::{load_compressed, save_compressed};
pub use error::{Error, Result};
pub use escontrol::{es_train, ESConfig, EsResult, EsTarget};
pub use estimator::{run_sweep, BaselineMode, Crossing, SweepConfig, SweepReport, SweepTask};
pub use nn::{Architecture, Batch, ParamVector};
pub use optimize::{OptimizerConfig, OptimizerKind, TrainResult};
pub use projection::{fwht, make_projection, Projection, ProjectionKind};
pub use subspace::{SubspaceModel, SubspacePoint};

/// Stream-tag namespace: every consumer of randomness in the crate draws
/// from `Stream::tagged(seed, &[tag, ...])` with a tag listed here, so no
/// two subsystems can collide on the same substream.
pub(crate) mod tag {
    /// Per-segment parameter initialization.
    pub const INIT: u64 = 0x01;
    /// Per-column draws of a projection matrix.
    pub const PROJ_COL: u64 = 0x02;
    /// Per-block draws of a Fastfood projection.
    pub const PROJ_BLOCK: u64 = 0x03;
    /// Per-epoch shuffling of training examples.
    pub const EPOCH_SHUFFLE: u64 = 0x04;
    /// The single pixel permutation of a shuffled-pixel dataset.
    pub const PIXEL_PERM: u64 = 0x05;
    /// Random label assignment of a shuffled-label dataset.
    pub const LABEL_NOISE: u64 = 0x06;
    /// Which examples a shuffled-label dataset keeps.
    pub const LABEL_SUBSET: u64 = 0x07;
    /// Perturbation noise for evolution strategies.
    pub const ES_NOISE: u64 = 0x08;
    /// Episode seeds during ES training rollouts.
    pub const ES_EPISODE: u64 = 0x09;
    /// Episode seeds during policy evaluation.
    pub const EVAL_EPISODE: u64 = 0x0A;
    /// Bootstrap resampling inside the estimator.
    pub const BOOTSTRAP: u64 = 0x0B;
    /// Per-(d, run) sweep cell seeds.
    pub const CELL: u64 = 0x0C;
    /// Direct-training baseline runs of a sweep.
    pub const BASELINE: u64 = 0x0D;
    /// Environment reset streams.
    pub const ENV_RESET: u64 = 0x0E;
    /// theta0 / projection seeds derived from one cell seed.
    pub const THETA0: u64 = 0x0F;
    pub const PROJ_SEED: u64 = 0x10;
    /// Coefficient matrix / right-hand side of a linear-solution problem.
    pub const LIN_A: u64 = 0x11;
    pub const LIN_B: u64 = 0x12;
    /// Per-iteration evaluation seed during ES training.
    pub const ES_EVAL: u64 = 0x13;
}

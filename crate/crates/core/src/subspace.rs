//! Subspace reparameterization: θ_eff = θ0 + P·θd.
//!
//! Training in a d-dimensional subspace keeps the random init θ0 and the
//! projection P frozen and optimizes only the coordinates θd. At θd = 0 the
//! effective parameters equal θ0 bit-for-bit, so a subspace run starts from
//! exactly the same point as the direct run it is compared against. The
//! chain rule gives ∂L/∂θd = Pᵀ·∂L/∂θ_eff, so gradients pull back through
//! the projection's adjoint.

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, Batch, ParamVector};
use crate::projection::{make_projection, Projection, ProjectionKind};
use crate::rng::{mix64, Stream};
use crate::tag;

/// A point on the affine subspace θ0 + span(P), without any model attached.
/// Objective-style problems (quadratics, bandits) train these directly.
#[derive(Debug, Clone)]
pub struct SubspacePoint {
    theta0: Vec<f64>,
    projection: Projection,
    theta_d: Vec<f64>,
}

impl SubspacePoint {
    /// Wraps a frozen origin and projection; θd starts at zero so the
    /// effective vector initially equals `theta0` exactly.
    pub fn new(theta0: Vec<f64>, projection: Projection) -> Result<Self> {
        if theta0.len() != projection.d_full() {
            return Err(Error::DimensionMismatch(format!(
                "origin has length {} but projection maps into D={}",
                theta0.len(),
                projection.d_full()
            )));
        }
        let d = projection.d_sub();
        Ok(SubspacePoint { theta0, projection, theta_d: vec![0.0; d] })
    }

    pub fn d_full(&self) -> usize {
        self.projection.d_full()
    }

    pub fn d_sub(&self) -> usize {
        self.projection.d_sub()
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn theta_d(&self) -> &[f64] {
        &self.theta_d
    }

    pub fn set_theta_d(&mut self, theta_d: &[f64]) -> Result<()> {
        if theta_d.len() != self.projection.d_sub() {
            return Err(Error::DimensionMismatch(format!(
                "theta_d must have length d={}, got {}",
                self.projection.d_sub(),
                theta_d.len()
            )));
        }
        self.theta_d.copy_from_slice(theta_d);
        Ok(())
    }

    /// θ0 + P·θd.
    pub fn effective(&self) -> Result<Vec<f64>> {
        let mut out = self.projection.project(&self.theta_d)?;
        for (o, t0) in out.iter_mut().zip(&self.theta0) {
            *o += t0;
        }
        Ok(out)
    }

    /// Same as [`effective`](Self::effective) into a reused buffer.
    pub fn effective_into(&self, out: &mut [f64]) -> Result<()> {
        self.projection.project_into(&self.theta_d, out)?;
        for (o, t0) in out.iter_mut().zip(&self.theta0) {
            *o += t0;
        }
        Ok(())
    }

    /// Pᵀ·g: ambient gradient pulled back to subspace coordinates.
    pub fn pullback(&self, grad_full: &[f64]) -> Result<Vec<f64>> {
        self.projection.project_adjoint(grad_full)
    }

    /// Order-dependent hash of the frozen state (θ0 bits and the
    /// projection's identity). Training updates θd only, so this digest
    /// must never change over the course of a run.
    pub fn frozen_digest(&self) -> u64 {
        let mut h = mix64(0x5375_6254_7261_696e); // arbitrary fixed basis
        for &v in &self.theta0 {
            h = mix64(h ^ v.to_bits());
        }
        h = mix64(h ^ self.projection.kind().code() as u64);
        h = mix64(h ^ self.projection.d_full() as u64);
        h = mix64(h ^ self.projection.d_sub() as u64);
        h = mix64(h ^ self.projection.seed());
        h
    }
}

/// A neural network whose parameters live on a random subspace.
#[derive(Debug, Clone)]
pub struct SubspaceModel {
    arch: Architecture,
    seed_theta0: u64,
    point: SubspacePoint,
}

impl SubspaceModel {
    /// Freezes θ0 (drawn from `seed_theta0` by the usual initializer) and a
    /// `(kind, D, d, seed_proj)` projection, with θd = 0.
    pub fn new(
        arch: Architecture,
        kind: ProjectionKind,
        d_sub: usize,
        seed_theta0: u64,
        seed_proj: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let theta0 = nn::init_params(&arch, seed_theta0);
        let projection = make_projection(kind, theta0.len(), d_sub, seed_proj)?;
        let point = SubspacePoint::new(theta0.values, projection)?;
        Ok(SubspaceModel { arch, seed_theta0, point })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed_theta0(&self) -> u64 {
        self.seed_theta0
    }

    pub fn point(&self) -> &SubspacePoint {
        &self.point
    }

    pub fn point_mut(&mut self) -> &mut SubspacePoint {
        &mut self.point
    }

    pub fn d_full(&self) -> usize {
        self.point.d_full()
    }

    pub fn d_sub(&self) -> usize {
        self.point.d_sub()
    }

    pub fn theta_d(&self) -> &[f64] {
        self.point.theta_d()
    }

    pub fn set_theta_d(&mut self, theta_d: &[f64]) -> Result<()> {
        self.point.set_theta_d(theta_d)
    }

    /// Materializes θ0 + P·θd as a full parameter vector.
    pub fn effective_params(&self) -> Result<ParamVector> {
        Ok(ParamVector::from(self.point.effective()?))
    }

    /// Loss, correct-count, and the gradient with respect to θd on one batch.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, usize, Vec<f64>)> {
        let params = self.effective_params()?;
        let (loss, correct, grad_full) = nn::backward(&self.arch, &params, batch)?;
        let grad_d = self.point.pullback(&grad_full.values)?;
        Ok((loss, correct, grad_d))
    }

    /// Hash of everything training must leave untouched.
    pub fn frozen_digest(&self) -> u64 {
        mix64(self.point.frozen_digest() ^ mix64(self.seed_theta0))
    }
}

/// Derives the pair of seeds (θ0, P) a sweep cell uses from its cell seed,
/// so that one u64 fully determines a cell's frozen state.
pub fn cell_seeds(cell_seed: u64) -> (u64, u64) {
    (
        crate::rng::stream_key(cell_seed, &[tag::THETA0]),
        crate::rng::stream_key(cell_seed, &[tag::PROJ_SEED]),
    )
}

/// Draws a random unit vector, used by tests probing subspace geometry.
#[doc(hidden)]
pub fn random_unit(d: usize, stream: &mut Stream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| stream.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Batch;
    use ndarray::Array2;

    fn tiny_model(kind: ProjectionKind) -> SubspaceModel {
        let arch: Architecture = "fc:6-8-3".parse().unwrap();
        SubspaceModel::new(arch, kind, 5, 11, 22).unwrap()
    }

    fn tiny_batch() -> Batch {
        let mut s = Stream::new(7);
        let inputs = Array2::from_shape_fn((4, 6), |_| s.uniform_in(-1.0, 1.0));
        Batch { inputs, labels: vec![0, 1, 2, 1] }
    }

    #[test]
    fn zero_coordinates_reproduce_the_origin_bit_exactly() {
        for kind in ProjectionKind::ALL {
            let sm = tiny_model(kind);
            let arch: Architecture = "fc:6-8-3".parse().unwrap();
            let origin = nn::init_params(&arch, 11);
            assert_eq!(sm.effective_params().unwrap().values, origin.values);
        }
    }

    #[test]
    fn a_unit_step_moves_a_unit_distance() {
        // Unit-norm columns make e_j steps isometric: ‖eff(e_j) − θ0‖ = 1.
        for kind in ProjectionKind::ALL {
            let mut sm = tiny_model(kind);
            let d = sm.d_sub();
            for j in 0..d {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                sm.set_theta_d(&e).unwrap();
                let eff = sm.effective_params().unwrap();
                let dist: f64 = eff
                    .values
                    .iter()
                    .zip(sm.point().theta0())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((dist - 1.0).abs() < 1e-9, "{kind} basis step {j}: moved {dist}");
            }
        }
    }

    #[test]
    fn subspace_gradient_matches_finite_differences() {
        let batch = tiny_batch();
        for kind in ProjectionKind::ALL {
            let mut sm = tiny_model(kind);
            let theta: Vec<f64> = {
                let mut s = Stream::new(3);
                (0..sm.d_sub()).map(|_| 0.3 * s.normal()).collect()
            };
            sm.set_theta_d(&theta).unwrap();
            let (_, _, grad) = sm.loss_and_grad(&batch).unwrap();

            let h = 1e-5;
            for j in 0..sm.d_sub() {
                let mut plus = theta.clone();
                plus[j] += h;
                sm.set_theta_d(&plus).unwrap();
                let params = sm.effective_params().unwrap();
                let (lp, _) = nn::forward(sm.arch(), &params, &batch).unwrap();
                let mut minus = theta.clone();
                minus[j] -= h;
                sm.set_theta_d(&minus).unwrap();
                let params = sm.effective_params().unwrap();
                let (lm, _) = nn::forward(sm.arch(), &params, &batch).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "{kind} coord {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn orthonormal_full_rank_subspace_preserves_gradient_norm() {
        // With P square and orthonormal (QR of a random matrix), the
        // pulled-back gradient has exactly the ambient gradient's norm.
        let arch: Architecture = "fc:3-4-2".parse().unwrap();
        let d_full = {
            let p = nn::init_params(&arch, 0);
            p.len()
        };
        let mut s = Stream::new(41);
        let raw = nalgebra::DMatrix::from_fn(d_full, d_full, |_, _| s.normal());
        let q = raw.qr().q();
        let mut m = Array2::zeros((d_full, d_full));
        for i in 0..d_full {
            for j in 0..d_full {
                m[(i, j)] = q[(i, j)];
            }
        }
        let proj = Projection::from_dense_matrix(m);
        let theta0 = nn::init_params(&arch, 5);
        let point = SubspacePoint::new(theta0.values.clone(), proj).unwrap();

        let mut st = Stream::new(9);
        let inputs = Array2::from_shape_fn((6, 3), |_| st.uniform_in(-1.0, 1.0));
        let batch = Batch { inputs, labels: vec![0, 1, 1, 0, 1, 0] };
        let (_, _, g_full) = nn::backward(&arch, &theta0, &batch).unwrap();
        let g_sub = point.pullback(&g_full.values).unwrap();

        let nf: f64 = g_full.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ns: f64 = g_sub.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nf - ns).abs() <= 1e-9 * nf.max(1.0), "norms {nf} vs {ns}");
    }

    #[test]
    fn frozen_digest_ignores_theta_d() {
        let mut sm = tiny_model(ProjectionKind::Sparse);
        let before = sm.frozen_digest();
        sm.set_theta_d(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(sm.frozen_digest(), before);

        let other = SubspaceModel::new(
            "fc:6-8-3".parse().unwrap(),
            ProjectionKind::Sparse,
            5,
            11,
            23, // different projection seed
        )
        .unwrap();
        assert_ne!(other.frozen_digest(), before);
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        let (a1, b1) = cell_seeds(42);
        let (a2, b2) = cell_seeds(42);
        assert_eq!((a1, b1), (a2, b2));
        assert_ne!(a1, b1);
        let (a3, _) = cell_seeds(43);
        assert_ne!(a1, a3);
    }

    #[test]
    fn mismatched_origin_is_rejected() {
        let proj = make_projection(ProjectionKind::Dense, 10, 3, 0).unwrap();
        assert!(SubspacePoint::new(vec![0.0; 9], proj).is_err());
    }
}

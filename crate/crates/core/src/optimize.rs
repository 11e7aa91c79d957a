//! First-order optimizers and the training loops shared by direct and
//! subspace training.
//!
//! One [`OptimizerConfig`] describes the whole recipe — update rule,
//! hyperparameters, weight decay, epoch/batch schedule, and the shuffle
//! seed — so a single value pins a training run completely. In subspace
//! mode the optimizer state and the L2 penalty live on θ(d), the only
//! trainable degrees of freedom; θ0 and P are never touched.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, ParamVector};
use crate::rng::Stream;
use crate::subspace::{SubspaceModel, SubspacePoint};
use crate::tag;
use crate::tasks::mnist::{stage_batch, Dataset, PerformanceMeasure, Split};
use crate::tasks::Objective;

/// A run whose loss exceeds this (or goes non-finite) is flagged diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Update rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
        };
        f.write_str(s)
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}` (expected sgd, momentum, or adam)"
            ))),
        }
    }
}

/// Everything that defines a training run besides the model and data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub l2_penalty: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed of the per-epoch example shuffle.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    /// The default supervised recipe: Adam at 0.001, batch 128, 20 epochs.
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-7,
            l2_penalty: 0.0,
            epochs: 20,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate, ..Default::default() }
    }

    pub fn momentum(learning_rate: f64, momentum: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Momentum, learning_rate, momentum, ..Default::default() }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, learning_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        if self.l2_penalty < 0.0 || !self.l2_penalty.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "l2_penalty must be finite and non-negative, got {}",
                self.l2_penalty
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

enum State {
    Sgd,
    Momentum { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

/// A configured update rule holding its per-parameter state.
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: State,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let state = match cfg.kind {
            OptimizerKind::Sgd => State::Sgd,
            OptimizerKind::Momentum => State::Momentum { velocity: vec![0.0; dim] },
            OptimizerKind::Adam => State::Adam { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 },
        };
        Ok(Optimizer { cfg: *cfg, state })
    }

    /// Applies one update in place. The L2 penalty contributes l2·θ to the
    /// gradient, so it acts on whatever vector is being trained.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch(format!(
                "step got {} parameters but {} gradient entries",
                params.len(),
                grad.len()
            )));
        }
        let lr = self.cfg.learning_rate;
        let l2 = self.cfg.l2_penalty;
        match &mut self.state {
            State::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + l2 * *p);
                }
            }
            State::Momentum { velocity } => {
                let beta = self.cfg.momentum;
                for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = beta * *v + (g + l2 * *p);
                    *p -= lr * *v;
                }
            }
            State::Adam { m, v, t } => {
                *t += 1;
                let (b1, b2, eps) = (self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
                let bc1 = 1.0 - b1.powi(*t as i32);
                let bc2 = 1.0 - b2.powi(*t as i32);
                for ((p, &g), (mi, vi)) in
                    params.iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut()))
                {
                    let ge = g + l2 * *p;
                    *mi = b1 * *mi + (1.0 - b1) * ge;
                    *vi = b2 * *vi + (1.0 - b2) * ge * ge;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "optimizer produced a non-finite parameter ({bad}); \
                 the learning rate is likely too large for this objective"
            )));
        }
        Ok(())
    }
}

/// What a full-batch objective run trains: the raw vector or a subspace.
pub enum VectorTarget<'a> {
    Direct(&'a mut Vec<f64>),
    Subspace(&'a mut SubspacePoint),
}

/// Schedule for [`train_objective`]; `epochs`/`batch_size` of the inner
/// optimizer config are ignored because the objective is full-batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveRunConfig {
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    /// Early exit once the loss drops to or below this value.
    pub stop_below: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveRunResult {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations_run: usize,
    pub diverged: bool,
}

/// Full-batch first-order training of an [`Objective`], either directly
/// over θ(D) or over subspace coordinates θ(d).
pub fn train_objective(
    obj: &dyn Objective,
    target: VectorTarget<'_>,
    cfg: &ObjectiveRunConfig,
) -> Result<ObjectiveRunResult> {
    match target {
        VectorTarget::Direct(theta) => {
            if theta.len() != obj.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "objective has dimension {} but the vector has {}",
                    obj.dim(),
                    theta.len()
                )));
            }
            let mut grad = vec![0.0; obj.dim()];
            let mut opt = Optimizer::new(&cfg.optimizer, theta.len())?;
            let initial = obj.value(theta)?;
            let mut iterations_run = 0;
            for _ in 0..cfg.iterations {
                let loss = obj.value_and_grad(theta, &mut grad)?;
                if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                    return Ok(ObjectiveRunResult {
                        initial_loss: initial,
                        final_loss: loss,
                        iterations_run,
                        diverged: true,
                    });
                }
                if cfg.stop_below.is_some_and(|t| loss <= t) {
                    break;
                }
                opt.step(theta, &grad)?;
                iterations_run += 1;
            }
            let loss = obj.value(theta)?;
            Ok(ObjectiveRunResult {
                initial_loss: initial,
                final_loss: loss,
                iterations_run,
                diverged: !loss.is_finite() || loss > DIVERGENCE_LOSS,
            })
        }
        VectorTarget::Subspace(point) => {
            if point.d_full() != obj.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "objective has dimension {} but the subspace maps into {}",
                    obj.dim(),
                    point.d_full()
                )));
            }
            let d = point.d_sub();
            let mut theta_d = point.theta_d().to_vec();
            let mut eff = vec![0.0; obj.dim()];
            let mut grad_full = vec![0.0; obj.dim()];
            let mut opt = Optimizer::new(&cfg.optimizer, d)?;
            point.effective_into(&mut eff)?;
            let initial = obj.value(&eff)?;
            let mut iterations_run = 0;
            for _ in 0..cfg.iterations {
                point.effective_into(&mut eff)?;
                let loss = obj.value_and_grad(&eff, &mut grad_full)?;
                if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                    return Ok(ObjectiveRunResult {
                        initial_loss: initial,
                        final_loss: loss,
                        iterations_run,
                        diverged: true,
                    });
                }
                if cfg.stop_below.is_some_and(|t| loss <= t) {
                    break;
                }
                let grad_d = point.pullback(&grad_full)?;
                opt.step(&mut theta_d, &grad_d)?;
                point.set_theta_d(&theta_d)?;
                iterations_run += 1;
            }
            point.effective_into(&mut eff)?;
            let loss = obj.value(&eff)?;
            Ok(ObjectiveRunResult {
                initial_loss: initial,
                final_loss: loss,
                iterations_run,
                diverged: !loss.is_finite() || loss > DIVERGENCE_LOSS,
            })
        }
    }
}

/// Largest Hessian eigenvalue of a quadratic objective restricted to a
/// subspace, estimated by power iteration on exact gradient differences
/// (H·v = ∇f(v) − ∇f(0) for quadratics). Used to pick safe step sizes for
/// the analytic problems; approximate for anything non-quadratic.
pub fn subspace_quadratic_lmax(
    obj: &dyn Objective,
    point: &SubspacePoint,
    iters: usize,
) -> Result<f64> {
    let d = point.d_sub();
    let mut probe = point.clone();
    let mut eff = vec![0.0; obj.dim()];
    let mut grad_full = vec![0.0; obj.dim()];

    probe.set_theta_d(&vec![0.0; d])?;
    probe.effective_into(&mut eff)?;
    obj.value_and_grad(&eff, &mut grad_full)?;
    let g0 = point.pullback(&grad_full)?;

    let mut s = Stream::new(0x9a7e);
    let mut v: Vec<f64> = (0..d).map(|_| s.normal()).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        for x in &mut v {
            *x /= n;
        }
        probe.set_theta_d(&v)?;
        probe.effective_into(&mut eff)?;
        obj.value_and_grad(&eff, &mut grad_full)?;
        let gv = point.pullback(&grad_full)?;
        let hv: Vec<f64> = gv.iter().zip(&g0).map(|(a, b)| a - b).collect();
        lambda = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        v = hv;
    }
    Ok(lambda.abs())
}

/// Exact minimization of a quadratic objective by linear conjugate
/// gradient, either directly over θ(D) or inside a subspace. Uses only
/// gradient evaluations (Hessian–vector products come from the identity
/// H·p = ∇f(p) − ∇f(0), exact for quadratics), so it is still first-order
/// training — but unlike a fixed-step method its convergence does not
/// degrade when the restricted Hessian is ill-conditioned, which happens
/// regularly for random square projections. Sweep cells on the analytic
/// quadratic problems use this so that a measured plateau reflects the
/// subspace's geometry, never a tuning failure.
pub fn minimize_quadratic(
    obj: &dyn Objective,
    target: VectorTarget<'_>,
    max_iterations: usize,
    stop_below: Option<f64>,
) -> Result<ObjectiveRunResult> {
    // Both modes reduce to: a start point v=0 in n coordinates, a gradient
    // oracle g(v), and a value oracle f(v).
    enum Mode<'a> {
        Direct(&'a mut Vec<f64>),
        Subspace(&'a mut SubspacePoint),
    }
    let (n, mut mode) = match target {
        VectorTarget::Direct(theta) => {
            if theta.len() != obj.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "objective has dimension {} but the vector has {}",
                    obj.dim(),
                    theta.len()
                )));
            }
            (obj.dim(), Mode::Direct(theta))
        }
        VectorTarget::Subspace(point) => {
            if point.d_full() != obj.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "objective has dimension {} but the subspace maps into {}",
                    obj.dim(),
                    point.d_full()
                )));
            }
            (point.d_sub(), Mode::Subspace(point))
        }
    };

    let mut eff = vec![0.0; obj.dim()];
    let mut grad_full = vec![0.0; obj.dim()];
    let mut value_and_grad = |coords: &[f64],
                              mode: &mut Mode,
                              grad_out: &mut Vec<f64>|
     -> Result<f64> {
        match mode {
            Mode::Direct(_) => {
                let loss = obj.value_and_grad(coords, &mut grad_full)?;
                grad_out.clear();
                grad_out.extend_from_slice(&grad_full);
                Ok(loss)
            }
            Mode::Subspace(point) => {
                point.set_theta_d(coords)?;
                point.effective_into(&mut eff)?;
                let loss = obj.value_and_grad(&eff, &mut grad_full)?;
                *grad_out = point.pullback(&grad_full)?;
                Ok(loss)
            }
        }
    };

    // Minimizing f(v) = f0 + cᵀv + ½vᵀHv means solving Hv = −c; for our
    // least-squares objectives c lies in range(H), so CG is applicable
    // even when H is singular.
    let mut v = vec![0.0; n];
    let mut c = Vec::with_capacity(n);
    let initial = value_and_grad(&v, &mut mode, &mut c)?;
    let mut r: Vec<f64> = c.iter().map(|x| -x).collect();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|x| x * x).sum();
    let rs0 = rs;
    let mut best_loss = initial;
    let mut best_v = v.clone();
    let mut hp = Vec::with_capacity(n);
    let mut iterations_run = 0;

    for _ in 0..max_iterations {
        if rs <= 1e-30 * rs0.max(1.0) {
            break;
        }
        let loss_p = value_and_grad(&p, &mut mode, &mut hp)?;
        if !loss_p.is_finite() {
            break;
        }
        for (h, ci) in hp.iter_mut().zip(&c) {
            *h -= ci; // ∇f(p) − ∇f(0) = H·p
        }
        let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
        if !(php > 1e-30 * rs) {
            break; // flat (or numerically null) direction: done
        }
        let alpha = rs / php;
        for ((vi, ri), (pi, hi)) in v.iter_mut().zip(&mut r).zip(p.iter().zip(&hp)) {
            *vi += alpha * pi;
            *ri -= alpha * hi;
        }
        iterations_run += 1;

        let loss = value_and_grad(&v, &mut mode, &mut hp)?; // hp reused as scratch
        if loss.is_finite() && loss < best_loss {
            best_loss = loss;
            best_v.copy_from_slice(&v);
        }
        if stop_below.is_some_and(|t| best_loss <= t) {
            break;
        }
        let rs_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }

    match &mut mode {
        Mode::Direct(theta) => theta.copy_from_slice(&best_v),
        Mode::Subspace(point) => point.set_theta_d(&best_v)?,
    }
    Ok(ObjectiveRunResult {
        initial_loss: initial,
        final_loss: best_loss,
        iterations_run,
        diverged: !best_loss.is_finite() || best_loss > DIVERGENCE_LOSS,
    })
}

/// One epoch's worth of metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_ms: u64,
}

/// Outcome of a classifier training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_val_loss: f64,
    pub final_val_acc: f64,
    /// Running maxima over epochs — the sweep performance metrics.
    pub best_val_acc: f64,
    pub best_train_acc: f64,
    pub diverged: bool,
    pub wall_ms: u64,
}

impl TrainResult {
    /// The number a sweep records for this run under the given measure;
    /// diverged runs always score 0.
    pub fn performance(&self, measure: PerformanceMeasure) -> f64 {
        if self.diverged {
            return 0.0;
        }
        match measure {
            PerformanceMeasure::ValAccuracy => self.best_val_acc,
            PerformanceMeasure::TrainAccuracy => self.best_train_acc,
        }
    }
}

/// What a classifier run trains.
pub enum TrainTarget<'a> {
    Direct { arch: &'a Architecture, params: &'a mut ParamVector },
    Subspace(&'a mut SubspaceModel),
}

/// Deterministic full-split metrics: (accuracy, mean loss).
pub fn evaluate(arch: &Architecture, params: &ParamVector, split: &Split) -> Result<(f64, f64)> {
    let n = split.len();
    if n == 0 {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let chunk = 512;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idxs: Vec<usize> = (start..end).collect();
        let batch = stage_batch(split, &idxs);
        let (loss, c) = nn::forward(arch, params, &batch)?;
        loss_sum += loss * (end - start) as f64;
        correct += c;
        start = end;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

/// Mini-batch training with seeded per-epoch shuffling and a validation
/// pass after every epoch. Direct mode updates θ(D); subspace mode updates
/// only θ(d). A diverged run returns early with `diverged = true` rather
/// than erroring, so sweeps can score it 0 and continue.
pub fn train_classifier(
    target: TrainTarget<'_>,
    ds: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let started = Instant::now();
    let n = ds.train.len();

    // Unify the two modes behind a tiny closure set: dim to optimize,
    // gradient of a batch, and a materializer for evaluation.
    enum Mode<'m> {
        Direct { arch: &'m Architecture, params: &'m mut ParamVector },
        Subspace(&'m mut SubspaceModel),
    }
    let mut mode = match target {
        TrainTarget::Direct { arch, params } => {
            if params.len() != arch.param_count() {
                return Err(Error::DimensionMismatch(format!(
                    "architecture wants {} parameters, vector has {}",
                    arch.param_count(),
                    params.len()
                )));
            }
            Mode::Direct { arch, params }
        }
        TrainTarget::Subspace(sm) => Mode::Subspace(sm),
    };

    let dim = match &mode {
        Mode::Direct { params, .. } => params.len(),
        Mode::Subspace(sm) => sm.d_sub(),
    };
    let mut opt = Optimizer::new(cfg, dim)?;
    let mut theta_d: Vec<f64> = match &mode {
        Mode::Direct { .. } => Vec::new(),
        Mode::Subspace(sm) => sm.theta_d().to_vec(),
    };

    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best_val_acc = 0.0f64;
    let mut best_train_acc = 0.0f64;
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let epoch_started = Instant::now();
        let order = Stream::tagged(cfg.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]).permutation(n);
        let mut train_loss_sum = 0.0;
        let mut train_correct = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let batch = ds.stage_batch(chunk);
            let (loss, correct) = match &mut mode {
                Mode::Direct { arch, params } => {
                    let (loss, correct, grad) = nn::backward(arch, params, &batch)?;
                    if loss.is_finite() && loss <= DIVERGENCE_LOSS {
                        opt.step(&mut params.values, &grad.values)?;
                    }
                    (loss, correct)
                }
                Mode::Subspace(sm) => {
                    let (loss, correct, grad_d) = sm.loss_and_grad(&batch)?;
                    if loss.is_finite() && loss <= DIVERGENCE_LOSS {
                        opt.step(&mut theta_d, &grad_d)?;
                        sm.set_theta_d(&theta_d)?;
                    }
                    (loss, correct)
                }
            };
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                diverged = true;
                break 'epochs;
            }
            train_loss_sum += loss * chunk.len() as f64;
            train_correct += correct;
        }

        let train_loss = train_loss_sum / n as f64;
        let train_acc = train_correct as f64 / n as f64;
        let (val_acc, val_loss) = match &mode {
            Mode::Direct { arch, params } => evaluate(arch, params, &ds.val)?,
            Mode::Subspace(sm) => {
                let params = sm.effective_params()?;
                evaluate(sm.arch(), &params, &ds.val)?
            }
        };
        best_val_acc = best_val_acc.max(val_acc);
        best_train_acc = best_train_acc.max(train_acc);
        history.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            wall_ms: epoch_started.elapsed().as_millis() as u64,
        });
    }

    let last = history.last();
    Ok(TrainResult {
        final_train_loss: last.map_or(f64::INFINITY, |e| e.train_loss),
        final_train_acc: last.map_or(0.0, |e| e.train_acc),
        final_val_loss: last.map_or(f64::INFINITY, |e| e.val_loss),
        final_val_acc: last.map_or(0.0, |e| e.val_acc),
        best_val_acc,
        best_train_acc,
        history,
        diverged,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

//! Evolution Strategies inside the subspace: black-box optimization of
//! θ(d) from episode returns alone, for control tasks where no analytic
//! gradient exists.
//!
//! Each iteration draws `population/2` Gaussian directions ε in coordinate
//! space and evaluates the policy at θ ± σε (antithetic sampling, with the
//! two signs of a pair sharing one episode seed so their return difference
//! isolates the parameter effect). Returns are converted to centered ranks
//! — scale-free, and exactly zero-sum so a constant-reward environment
//! produces exactly zero update — and combined into the gradient estimate
//! (Σᵢ uᵢ·εᵢ)/(population·σ), which ascends the Gaussian-smoothed expected
//! return. A standard minimizing optimizer then steps along its negation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, ParamVector};
use crate::optimize::{Optimizer, OptimizerConfig};
use crate::rng::{stream_key, Stream};
use crate::subspace::SubspaceModel;
use crate::tag;
use crate::tasks::cartpole::{Action, CartPole};

/// Anything that can score one parameter vector over one seeded episode.
pub trait EpisodeReward: Sync {
    /// Length of the parameter vector the reward expects.
    fn param_dim(&self) -> usize;

    /// Runs a single episode from a seeded reset and returns its total
    /// reward. Deterministic in (params, episode_seed).
    fn episode_return(&self, params: &[f64], episode_seed: u64) -> Result<f64>;
}

/// A deterministic feedforward policy: observation → logits → argmax.
/// Exploration comes entirely from ES parameter perturbations, so action
/// selection needs no sampling.
#[derive(Debug, Clone)]
pub struct PolicySpec {
    pub arch: Architecture,
}

impl PolicySpec {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(PolicySpec { arch })
    }

    /// Index of the largest logit (ties go to the lowest index, so an
    /// all-zero parameter vector always picks action 0).
    pub fn act(&self, params: &ParamVector, observation: &[f64]) -> Result<usize> {
        let logits = nn::logits(&self.arch, params, observation)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Cart-pole balancing as an [`EpisodeReward`]: 4 observations, 2 actions,
/// return in [0, 200].
#[derive(Debug, Clone)]
pub struct CartPoleReward {
    policy: PolicySpec,
}

impl CartPoleReward {
    pub fn new(arch: Architecture) -> Result<Self> {
        if arch.input_len() != 4 || arch.classes() != 2 {
            return Err(Error::InvalidArgument(format!(
                "cart-pole needs a 4-input 2-action policy, got {arch}"
            )));
        }
        Ok(CartPoleReward { policy: PolicySpec::new(arch)? })
    }

    pub fn arch(&self) -> &Architecture {
        &self.policy.arch
    }
}

impl EpisodeReward for CartPoleReward {
    fn param_dim(&self) -> usize {
        self.policy.arch.param_count()
    }

    fn episode_return(&self, params: &[f64], episode_seed: u64) -> Result<f64> {
        let pv = ParamVector { values: params.to_vec() };
        let mut env = CartPole::reset(episode_seed);
        let mut total = 0.0;
        loop {
            let action = self.policy.act(&pv, &env.observation())?;
            let (reward, done) = env.step(Action::from_index(action))?;
            total += reward;
            if done {
                return Ok(total);
            }
        }
    }
}

/// ES hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ESConfig {
    /// Total perturbations per iteration; even, consumed as
    /// population/2 antithetic pairs.
    pub population: usize,
    /// Perturbation standard deviation in coordinate space.
    pub sigma: f64,
    /// Optimizer applied to θ(d); its own l2 field is ignored in favor of
    /// `l2_penalty` below.
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    /// Weight decay applied to θ(d) alongside the ES gradient.
    pub l2_penalty: f64,
    /// Episodes in each post-update policy evaluation.
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for ESConfig {
    fn default() -> Self {
        ESConfig {
            population: 64,
            sigma: 0.02,
            optimizer: OptimizerConfig::adam(0.01),
            iterations: 300,
            l2_penalty: 0.0,
            eval_episodes: 30,
            seed: 0,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "population must be even and at least 2, got {}",
                self.population
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidArgument("eval_episodes must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "l2_penalty must be non-negative, got {}",
                self.l2_penalty
            )));
        }
        self.optimizer.validate()
    }
}

/// What ES updates: raw parameters or subspace coordinates.
pub enum EsTarget<'a> {
    Direct(&'a mut Vec<f64>),
    Subspace(&'a mut SubspaceModel),
}

/// One iteration's record, CSV-ready.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsIterationStats {
    pub iter: usize,
    /// Mean return of the deterministic policy after this iteration's
    /// update, over `eval_episodes` seeded episodes.
    pub mean_eval_reward: f64,
    /// Running maximum of `mean_eval_reward` — a sweep's performance.
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsResult {
    pub history: Vec<EsIterationStats>,
    /// Maximum-attained mean evaluation reward over all iterations.
    pub best_mean_eval: f64,
    pub final_mean_eval: f64,
    pub iterations_run: usize,
}

/// Centered average ranks: ties share their rank-range mean, the whole
/// vector sums to exactly zero, and values span (−0.5, +0.5).
fn centered_ranks(returns: &[f64]) -> Vec<f64> {
    let n = returns.len();
    if n == 1 {
        return vec![0.0];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]));
    let mut utilities = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && returns[order[end]] == returns[order[start]] {
            end += 1;
        }
        // Positions start..end hold equal returns; give each the mean rank.
        let avg = (start + end - 1) as f64 / 2.0;
        let u = avg / (n - 1) as f64 - 0.5;
        for &i in &order[start..end] {
            utilities[i] = u;
        }
        start = end;
    }
    utilities
}

/// Mean return of the deterministic policy over seeded episodes.
pub fn evaluate_policy(
    reward: &dyn EpisodeReward,
    params: &[f64],
    episodes: usize,
    eval_seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let total: f64 = (0..episodes)
        .into_par_iter()
        .map(|e| {
            reward.episode_return(params, stream_key(eval_seed, &[tag::EVAL_EPISODE, e as u64]))
        })
        .sum::<Result<f64>>()?;
    Ok(total / episodes as f64)
}

/// Runs ES to completion; `target` decides whether perturbations live in
/// θ(D) or in subspace coordinates θ(d). Every random draw is a pure
/// function of (cfg.seed, iteration, pair index), so reruns are identical
/// and parallel evaluation order cannot matter.
pub fn es_train(
    reward: &dyn EpisodeReward,
    target: EsTarget<'_>,
    cfg: &ESConfig,
) -> Result<EsResult> {
    cfg.validate()?;

    // Map both modes onto "a working coordinate vector plus a way to
    // realize coordinates as θ(D)"; final coordinates are written back to
    // the caller's target at the end.
    enum Mode<'a> {
        Direct(&'a mut Vec<f64>),
        Subspace(&'a mut SubspaceModel),
    }
    let dim = reward.param_dim();
    let (mut coords, mut mode) = match target {
        EsTarget::Direct(theta) => {
            if theta.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "reward expects {dim} parameters but the vector holds {}",
                    theta.len()
                )));
            }
            (theta.clone(), Mode::Direct(theta))
        }
        EsTarget::Subspace(sm) => {
            if sm.d_full() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "reward expects {dim} parameters but the subspace maps into {}",
                    sm.d_full()
                )));
            }
            let coords = sm.theta_d().to_vec();
            (coords, Mode::Subspace(sm))
        }
    };

    // Effective θ(D) for a given coordinate vector.
    let realize = |coords: &[f64], mode: &mut Mode| -> Result<Vec<f64>> {
        match mode {
            Mode::Direct(_) => Ok(coords.to_vec()),
            Mode::Subspace(sm) => {
                sm.set_theta_d(coords)?;
                let mut eff = vec![0.0; dim];
                sm.point().effective_into(&mut eff)?;
                Ok(eff)
            }
        }
    };

    let n = coords.len();
    let pairs = cfg.population / 2;
    let opt_cfg = OptimizerConfig { l2_penalty: cfg.l2_penalty, ..cfg.optimizer };
    let mut opt = Optimizer::new(&opt_cfg, n)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best = f64::NEG_INFINITY;
    let mut last_eval = f64::NEG_INFINITY;

    for iter in 0..cfg.iterations {
        // Draw all directions first (sequential, cheap), then roll out
        // episodes in parallel.
        let epsilons: Vec<Vec<f64>> = (0..pairs)
            .map(|k| {
                let mut s = Stream::tagged(cfg.seed, &[tag::ES_NOISE, iter as u64, k as u64]);
                (0..n).map(|_| s.normal()).collect()
            })
            .collect();

        let plus_minus: Vec<(Vec<f64>, Vec<f64>)> = epsilons
            .iter()
            .map(|eps| {
                let plus: Vec<f64> =
                    coords.iter().zip(eps).map(|(c, e)| c + cfg.sigma * e).collect();
                let minus: Vec<f64> =
                    coords.iter().zip(eps).map(|(c, e)| c - cfg.sigma * e).collect();
                (plus, minus)
            })
            .collect();
        let realized: Vec<(Vec<f64>, Vec<f64>, u64)> = plus_minus
            .iter()
            .enumerate()
            .map(|(k, (plus, minus))| {
                let episode_seed =
                    stream_key(cfg.seed, &[tag::ES_EPISODE, iter as u64, k as u64]);
                Ok((realize(plus, &mut mode)?, realize(minus, &mut mode)?, episode_seed))
            })
            .collect::<Result<_>>()?;

        let pair_returns: Vec<(f64, f64)> = realized
            .par_iter()
            .map(|(plus, minus, episode_seed)| {
                let r_plus = reward.episode_return(plus, *episode_seed)?;
                let r_minus = reward.episode_return(minus, *episode_seed)?;
                Ok((r_plus, r_minus))
            })
            .collect::<Result<_>>()?;

        let mut returns = Vec::with_capacity(cfg.population);
        for &(p, m) in &pair_returns {
            returns.push(p);
            returns.push(m);
        }
        let utilities = centered_ranks(&returns);

        // Ascent estimate (Σᵢ uᵢ εᵢ)/(population·σ); εᵢ alternates ±ε_k.
        let mut grad_ascent = vec![0.0; n];
        for (k, eps) in epsilons.iter().enumerate() {
            let w = utilities[2 * k] - utilities[2 * k + 1];
            for (g, e) in grad_ascent.iter_mut().zip(eps) {
                *g += w * e;
            }
        }
        let scale = 1.0 / (cfg.population as f64 * cfg.sigma);
        // The optimizer minimizes, so step along the negated estimate;
        // its l2 term adds +l2·θ to the descent gradient, i.e. the update
        // follows (estimate − l2·θ) as intended.
        let descent: Vec<f64> = grad_ascent.iter().map(|g| -g * scale).collect();
        opt.step(&mut coords, &descent)?;

        let eval_params = realize(&coords, &mut mode)?;
        let eval_seed = stream_key(cfg.seed, &[tag::ES_EVAL, iter as u64]);
        let mean_eval = evaluate_policy(reward, &eval_params, cfg.eval_episodes, eval_seed)?;
        best = best.max(mean_eval);
        last_eval = mean_eval;
        history.push(EsIterationStats {
            iter,
            mean_eval_reward: mean_eval,
            best_so_far: best,
        });
    }

    // Leave the target holding the final coordinates.
    match &mut mode {
        Mode::Direct(theta) => theta.copy_from_slice(&coords),
        Mode::Subspace(sm) => sm.set_theta_d(&coords)?,
    }

    Ok(EsResult {
        history,
        best_mean_eval: best,
        final_mean_eval: last_eval,
        iterations_run: cfg.iterations,
    })
}

/// Cart-pole ES as a sweep task: each cell trains a policy in a fresh
/// d-dimensional subspace, and its performance is the maximum-attained
/// (over training iterations) mean evaluation reward.
#[derive(Debug, Clone)]
pub struct CartPoleSweep {
    pub reward: CartPoleReward,
    pub kind: crate::projection::ProjectionKind,
    pub es: ESConfig,
}

impl CartPoleSweep {
    pub fn new(arch: Architecture, kind: crate::projection::ProjectionKind, es: ESConfig) -> Result<Self> {
        es.validate()?;
        Ok(CartPoleSweep { reward: CartPoleReward::new(arch)?, kind, es })
    }
}

impl crate::estimator::SweepTask for CartPoleSweep {
    fn id(&self) -> String {
        "cartpole".into()
    }

    fn arch_descriptor(&self) -> String {
        self.reward.arch().to_string()
    }

    fn projection_kind(&self) -> crate::projection::ProjectionKind {
        self.kind
    }

    fn d_full(&self) -> usize {
        self.reward.param_dim()
    }

    fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64> {
        let (seed_theta0, seed_proj) = crate::subspace::cell_seeds(cell_seed);
        let mut sm = SubspaceModel::new(
            self.reward.arch().clone(),
            self.kind,
            d,
            seed_theta0,
            seed_proj,
        )?;
        let cfg = ESConfig { seed: cell_seed, ..self.es.clone() };
        let res = es_train(&self.reward, EsTarget::Subspace(&mut sm), &cfg)?;
        Ok(res.best_mean_eval)
    }

    fn baseline_performance(&self, seed: u64) -> Result<f64> {
        let arch = self.reward.arch().clone();
        let mut params =
            nn::init_params(&arch, stream_key(seed, &[tag::THETA0])).values;
        let cfg = ESConfig { seed, ..self.es.clone() };
        let res = es_train(&self.reward, EsTarget::Direct(&mut params), &cfg)?;
        Ok(res.best_mean_eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::SweepTask;
    use crate::projection::ProjectionKind;
    use crate::tasks::cartpole::{Action, STEP_CAP};

    /// Smooth deterministic bandit: reward −‖θ−θ*‖², no episode noise.
    struct QuadraticBandit {
        target: Vec<f64>,
    }

    impl EpisodeReward for QuadraticBandit {
        fn param_dim(&self) -> usize {
            self.target.len()
        }

        fn episode_return(&self, params: &[f64], _episode_seed: u64) -> Result<f64> {
            Ok(-params
                .iter()
                .zip(&self.target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>())
        }
    }

    /// Every episode returns the same constant.
    struct ConstantReward;

    impl EpisodeReward for ConstantReward {
        fn param_dim(&self) -> usize {
            4
        }

        fn episode_return(&self, _params: &[f64], _seed: u64) -> Result<f64> {
            Ok(3.25)
        }
    }

    fn small_cfg() -> ESConfig {
        ESConfig {
            population: 8,
            sigma: 0.05,
            optimizer: OptimizerConfig::sgd(0.1),
            iterations: 3,
            eval_episodes: 2,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn centered_ranks_are_zero_sum_and_handle_ties() {
        let u = centered_ranks(&[3.0, 1.0, 2.0, 4.0]);
        for (got, want) in u.iter().zip([1.0 / 6.0, -0.5, -1.0 / 6.0, 0.5]) {
            assert!((got - want).abs() < 1e-15, "{u:?}");
        }
        assert!(u.iter().sum::<f64>().abs() < 1e-15);

        // All equal → every utility exactly zero.
        let tied = centered_ranks(&[7.0; 6]);
        assert!(tied.iter().all(|&x| x == 0.0));

        // Partial tie: the two middle values share rank 1.5.
        let part = centered_ranks(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(part, vec![-0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn constant_reward_produces_exactly_zero_update() {
        let mut theta = vec![0.5, -0.25, 1.0, 0.0];
        let before = theta.clone();
        let cfg = ESConfig {
            population: 16,
            optimizer: OptimizerConfig::sgd(0.5),
            iterations: 4,
            eval_episodes: 1,
            ..small_cfg()
        };
        es_train(&ConstantReward, EsTarget::Direct(&mut theta), &cfg).unwrap();
        assert_eq!(theta, before, "rank normalization must cancel exactly");
    }

    #[test]
    fn one_step_follows_the_reward_gradient() {
        // Linear reward vᵀθ: the smoothed objective's gradient is v, so a
        // single ES step from the origin should move along +v.
        struct Linear {
            v: Vec<f64>,
        }
        impl EpisodeReward for Linear {
            fn param_dim(&self) -> usize {
                self.v.len()
            }
            fn episode_return(&self, params: &[f64], _s: u64) -> Result<f64> {
                Ok(params.iter().zip(&self.v).map(|(p, v)| p * v).sum())
            }
        }
        let v = vec![1.0, -2.0, 0.5, 3.0, -1.5, 0.25, 2.0, -0.75];
        let reward = Linear { v: v.clone() };
        let mut theta = vec![0.0; 8];
        let cfg = ESConfig {
            population: 512,
            sigma: 0.05,
            optimizer: OptimizerConfig::sgd(0.1),
            iterations: 1,
            eval_episodes: 1,
            seed: 11,
            ..Default::default()
        };
        es_train(&reward, EsTarget::Direct(&mut theta), &cfg).unwrap();
        let dot: f64 = theta.iter().zip(&v).map(|(t, g)| t * g).sum();
        let cos = dot
            / (theta.iter().map(|x| x * x).sum::<f64>().sqrt()
                * v.iter().map(|x| x * x).sum::<f64>().sqrt());
        assert!(cos > 0.9, "cosine with the true gradient was {cos}");
    }

    #[test]
    fn update_direction_correlates_with_the_true_gradient_across_seeds() {
        let bandit = QuadraticBandit { target: vec![0.3, -0.2, 0.5, 0.1] };
        let start = vec![1.0, 1.0, -1.0, 0.5];
        // True ascent direction of the reward at `start` is −2(θ−θ*).
        let true_grad: Vec<f64> =
            start.iter().zip(&bandit.target).map(|(s, t)| -2.0 * (s - t)).collect();
        let mut cosines = Vec::new();
        for seed in 0..20 {
            let mut theta = start.clone();
            let cfg = ESConfig {
                population: 64,
                sigma: 0.05,
                optimizer: OptimizerConfig::sgd(0.05),
                iterations: 1,
                eval_episodes: 1,
                seed,
                ..Default::default()
            };
            es_train(&bandit, EsTarget::Direct(&mut theta), &cfg).unwrap();
            let step: Vec<f64> = theta.iter().zip(&start).map(|(a, b)| a - b).collect();
            let dot: f64 = step.iter().zip(&true_grad).map(|(a, b)| a * b).sum();
            let cos = dot
                / (step.iter().map(|x| x * x).sum::<f64>().sqrt()
                    * true_grad.iter().map(|x| x * x).sum::<f64>().sqrt());
            cosines.push(cos);
        }
        let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
        let positive = cosines.iter().filter(|&&c| c > 0.0).count();
        assert!(mean > 0.5, "mean cosine {mean}, samples {cosines:?}");
        assert!(positive >= 18, "only {positive}/20 steps pointed uphill");
    }

    #[test]
    fn quadratic_bandit_converges_within_500_iterations() {
        let bandit = QuadraticBandit { target: vec![0.3, -0.2, 0.5, 0.1] };
        let mut theta = vec![1.0, 1.0, -1.0, 0.5];
        let cfg = ESConfig {
            population: 64,
            sigma: 0.05,
            optimizer: OptimizerConfig::adam(0.02),
            iterations: 500,
            eval_episodes: 1,
            seed: 3,
            ..Default::default()
        };
        let res = es_train(&bandit, EsTarget::Direct(&mut theta), &cfg).unwrap();
        let dist: f64 = theta
            .iter()
            .zip(&bandit.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 0.1, "‖θ−θ*‖ = {dist} after 500 iterations");
        // The evaluation history tracks the improvement (reward → 0).
        assert!(res.best_mean_eval > -0.01, "best eval {}", res.best_mean_eval);
        assert_eq!(res.history.len(), 500);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let bandit = QuadraticBandit { target: vec![0.1, 0.2, 0.3, 0.4] };
        let run = || {
            let mut theta = vec![0.0; 4];
            let cfg = ESConfig { iterations: 20, ..small_cfg() };
            let res = es_train(&bandit, EsTarget::Direct(&mut theta), &cfg).unwrap();
            (theta, serde_json::to_string(&res.history).unwrap())
        };
        let (theta_a, hist_a) = run();
        let (theta_b, hist_b) = run();
        assert_eq!(theta_a, theta_b);
        assert_eq!(hist_a, hist_b);
    }

    #[test]
    fn subspace_es_only_changes_coordinates() {
        let arch: Architecture = "fc:4-8-2".parse().unwrap();
        let reward = CartPoleReward::new(arch.clone()).unwrap();
        let mut sm =
            SubspaceModel::new(arch, ProjectionKind::Dense, 4, 21, 22).unwrap();
        let digest_before = sm.frozen_digest();
        let res = es_train(&reward, EsTarget::Subspace(&mut sm), &small_cfg()).unwrap();
        assert_eq!(sm.frozen_digest(), digest_before, "θ0/P must stay frozen");
        assert!(sm.theta_d().iter().any(|&x| x != 0.0), "coordinates did move");
        assert!(res.best_mean_eval >= 1.0, "cart-pole always survives ≥1 step");
    }

    #[test]
    fn zero_parameter_policy_matches_always_left() {
        // All-zero logits tie; argmax picks index 0 (Left) every step.
        let arch: Architecture = "fc:4-8-2".parse().unwrap();
        let reward = CartPoleReward::new(arch.clone()).unwrap();
        let zero = vec![0.0; arch.param_count()];
        for seed in [0u64, 1, 2] {
            let ep_seed = stream_key(9, &[tag::EVAL_EPISODE, seed]);
            let from_policy = reward.episode_return(&zero, ep_seed).unwrap();
            let mut env = CartPole::reset(ep_seed);
            let mut manual = 0.0;
            loop {
                let (r, done) = env.step(Action::Left).unwrap();
                manual += r;
                if done {
                    break;
                }
            }
            assert_eq!(from_policy, manual);
            assert!(from_policy < STEP_CAP as f64, "always-Left cannot survive the cap");
        }
    }

    #[test]
    fn cartpole_sweep_cells_produce_valid_returns() {
        let arch: Architecture = "fc:4-8-2".parse().unwrap();
        let es = ESConfig {
            population: 8,
            iterations: 4,
            eval_episodes: 3,
            ..Default::default()
        };
        let task = CartPoleSweep::new(arch, ProjectionKind::Dense, es).unwrap();
        assert_eq!(task.d_full(), 4 * 8 + 8 + 8 * 2 + 2);
        let perf = task.run_cell(3, 77).unwrap();
        assert!((1.0..=STEP_CAP as f64).contains(&perf), "best eval {perf}");
        // Same cell, same seed → identical performance.
        assert_eq!(task.run_cell(3, 77).unwrap(), perf);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = ESConfig::default();
        assert!(ok.validate().is_ok());
        assert!(ESConfig { population: 7, ..ok.clone() }.validate().is_err());
        assert!(ESConfig { population: 0, ..ok.clone() }.validate().is_err());
        assert!(ESConfig { sigma: 0.0, ..ok.clone() }.validate().is_err());
        assert!(ESConfig { iterations: 0, ..ok.clone() }.validate().is_err());
        assert!(ESConfig { eval_episodes: 0, ..ok.clone() }.validate().is_err());
        assert!(ESConfig { l2_penalty: -0.1, ..ok.clone() }.validate().is_err());

        // Wrong policy shape for the environment.
        assert!(CartPoleReward::new("fc:5-8-2".parse().unwrap()).is_err());
        assert!(CartPoleReward::new("fc:4-8-3".parse().unwrap()).is_err());

        // Mismatched parameter count.
        let bandit = QuadraticBandit { target: vec![0.0; 4] };
        let mut too_short = vec![0.0; 3];
        assert!(es_train(&bandit, EsTarget::Direct(&mut too_short), &small_cfg()).is_err());
    }
}

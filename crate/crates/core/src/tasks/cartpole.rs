//! Deterministic cart-pole balancing environment.
//!
//! Classic benchmark dynamics under Euler integration: a cart of mass 1.0
//! on a frictionless track, a pole of mass 0.1 and half-length 0.5, gravity
//! 9.8, and a horizontal force of ±10.0 applied each 0.02 s step. An
//! episode fails when the cart leaves ±2.4 or the pole tilts beyond 15°,
//! and is capped at 200 steps. Each surviving transition earns reward 1.0
//! (a failing transition earns nothing), so a full episode totals 200 and
//! the conventional "solved" bar is an average return of 195.
//!
//! Episodes are pure functions of `(seed, action sequence)`: the only
//! randomness is the reset state, drawn uniformly from (−0.05, 0.05)⁴.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tag;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const ANGLE_LIMIT: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const STEP_CAP: usize = 200;
/// Average return at which the task counts as solved.
pub const SOLVED_RETURN: f64 = 195.0;

/// Push direction for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    /// Maps a policy's argmax index (0 = left, 1 = right).
    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Left
        } else {
            Action::Right
        }
    }
}

/// Environment state: observation plus episode bookkeeping.
#[derive(Debug, Clone)]
pub struct CartPole {
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    done: bool,
}

impl CartPole {
    /// Starts an episode with all four state variables uniform in
    /// (−0.05, 0.05).
    pub fn reset(seed: u64) -> CartPole {
        let mut s = Stream::tagged(seed, &[tag::ENV_RESET]);
        CartPole {
            x: s.uniform_in(-0.05, 0.05),
            x_dot: s.uniform_in(-0.05, 0.05),
            theta: s.uniform_in(-0.05, 0.05),
            theta_dot: s.uniform_in(-0.05, 0.05),
            steps: 0,
            done: false,
        }
    }

    /// The observation a policy sees: [x, ẋ, θ, θ̇].
    pub fn observation(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances one Euler step. Returns (reward, done); reward is 1.0
    /// unless this transition fails the position or angle limit.
    pub fn step(&mut self, action: Action) -> Result<(f64, bool)> {
        if self.done {
            return Err(Error::Environment(
                "cannot step a terminated cart-pole episode; call reset first".into(),
            ));
        }
        let force = match action {
            Action::Left => -FORCE_MAG,
            Action::Right => FORCE_MAG,
        };
        let total_mass = CART_MASS + POLE_MASS;
        let polemass_length = POLE_MASS * POLE_HALF_LENGTH;
        let cos = self.theta.cos();
        let sin = self.theta.sin();
        let temp = (force + polemass_length * self.theta_dot * self.theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        self.x += TAU * self.x_dot;
        self.x_dot += TAU * x_acc;
        self.theta += TAU * self.theta_dot;
        self.theta_dot += TAU * theta_acc;
        self.steps += 1;

        let failed = self.x.abs() > X_LIMIT || self.theta.abs() > ANGLE_LIMIT;
        if failed {
            self.done = true;
            Ok((0.0, true))
        } else {
            self.done = self.steps >= STEP_CAP;
            Ok((1.0, self.done))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Runs a fixed policy from a seeded reset; returns (return, steps).
    fn rollout(seed: u64, mut policy: impl FnMut(&[f64; 4]) -> Action) -> (f64, usize) {
        let mut env = CartPole::reset(seed);
        let mut total = 0.0;
        loop {
            let obs = env.observation();
            let (r, done) = env.step(policy(&obs)).unwrap();
            total += r;
            if done {
                return (total, env.steps());
            }
        }
    }

    #[test]
    fn reset_draws_small_states() {
        for seed in 0..20 {
            let env = CartPole::reset(seed);
            for v in env.observation() {
                assert!(v.abs() < 0.05, "seed {seed}: component {v}");
            }
        }
    }

    #[test]
    fn alternating_actions_survive_at_least_two_steps() {
        let mut env = CartPole::reset(3);
        let (r1, d1) = env.step(Action::Left).unwrap();
        assert_eq!(r1, 1.0);
        assert!(!d1);
        let (r2, _) = env.step(Action::Right).unwrap();
        assert_eq!(r2, 1.0);
    }

    #[test]
    fn always_left_fails_well_before_the_cap() {
        for seed in 0..5 {
            let (total, steps) = rollout(seed, |_| Action::Left);
            assert!(steps < STEP_CAP, "seed {seed} lasted {steps} steps");
            // The failing transition earns nothing.
            assert_eq!(total, (steps - 1) as f64);
        }
    }

    #[test]
    fn angle_feedback_policy_earns_the_full_200() {
        // Pushing toward the side the pole leans keeps it upright long
        // enough to hit the step cap, the maximum-return outcome.
        let (total, steps) = rollout(0, |obs| {
            if obs[2] + obs[3] > 0.0 {
                Action::Right
            } else {
                Action::Left
            }
        });
        assert_eq!(steps, STEP_CAP);
        assert_eq!(total, 200.0);
        assert!(total > SOLVED_RETURN);
    }

    #[test]
    fn dynamics_are_deterministic() {
        let run = || {
            let mut env = CartPole::reset(11);
            let mut states = Vec::new();
            for i in 0..50 {
                let a = if i % 3 == 0 { Action::Right } else { Action::Left };
                if env.step(a).unwrap().1 {
                    break;
                }
                states.push(env.observation());
            }
            states
        };
        assert_eq!(run(), run());
        let other = CartPole::reset(12);
        assert_ne!(CartPole::reset(11).observation(), other.observation());
    }

    #[test]
    fn stepping_a_finished_episode_is_an_error() {
        let mut env = CartPole::reset(1);
        loop {
            if env.step(Action::Left).unwrap().1 {
                break;
            }
        }
        let err = env.step(Action::Left).unwrap_err();
        assert!(err.to_string().contains("terminated"), "{err}");
    }
}

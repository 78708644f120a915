use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionPreference, Environment, InitialDistribution, State, StepOutcome};
use crate::error::{invalid, Result};
use crate::rng::StreamRng;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
const GOAL_POSITION: f64 = 0.5;

/// Physical constants of the stochastic Mountain Car.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MountainCarConfig {
    pub gravity: f64,
    pub force: f64,
    pub max_speed: f64,
    /// Standard deviation of the Gaussian multiplier applied to `force` each step.
    pub force_noise_scale: f64,
}

impl Default for MountainCarConfig {
    fn default() -> Self {
        MountainCarConfig {
            gravity: 0.008,
            force: 0.008,
            max_speed: 0.2,
            force_noise_scale: 0.1f64.sqrt(),
        }
    }
}

/// Mountain Car with an additive Gaussian force. States are
/// `(position, velocity)`; actions are push left, no push, push right.
/// Every step costs -1 until the car reaches the goal.
#[derive(Clone, Debug)]
pub struct MountainCar {
    cfg: MountainCarConfig,
}

pub fn mountain_car_env(force_noise_scale: f64) -> Result<MountainCar> {
    MountainCar::new(MountainCarConfig { force_noise_scale, ..Default::default() })
}

impl MountainCar {
    pub fn new(cfg: MountainCarConfig) -> Result<Self> {
        if !(cfg.force_noise_scale >= 0.0) {
            return Err(invalid("force noise scale must be nonnegative"));
        }
        if !(cfg.max_speed > 0.0) {
            return Err(invalid("max speed must be positive"));
        }
        Ok(MountainCar { cfg })
    }

    pub fn config_params(&self) -> &MountainCarConfig {
        &self.cfg
    }

    /// Observation box `[(pos_lo, pos_hi), (vel_lo, vel_hi)]`.
    pub fn state_bounds(&self) -> [(f64, f64); 2] {
        [(MIN_POSITION, MAX_POSITION), (-self.cfg.max_speed, self.cfg.max_speed)]
    }

    /// Deterministic physics with an explicit standard-normal `noise` draw.
    /// Returns the next `(position, velocity)` and whether the goal was reached.
    pub fn dynamics(&self, position: f64, velocity: f64, action: usize, noise: f64) -> ([f64; 2], bool) {
        let c = &self.cfg;
        let push = (action as f64 - 1.0) * c.force + noise * c.force_noise_scale * c.force;
        let mut v = velocity + push - (3.0 * position).cos() * c.gravity;
        v = v.clamp(-c.max_speed, c.max_speed);
        let x = (position + v).clamp(MIN_POSITION, MAX_POSITION);
        if x == MIN_POSITION && v < 0.0 {
            v = 0.0;
        }
        let done = x >= GOAL_POSITION && v >= 0.0;
        ([x, v], done)
    }
}

impl Environment for MountainCar {
    fn name(&self) -> &str {
        "mountain_car"
    }

    fn config(&self) -> String {
        let c = &self.cfg;
        format!(
            "gravity={};force={};max_speed={};force_noise={}",
            c.gravity, c.force, c.max_speed, c.force_noise_scale
        )
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 0.0)
    }

    fn initial_distribution(&self) -> InitialDistribution {
        InitialDistribution::Sampler(Arc::new(|rng: &mut StreamRng| {
            State::Continuous(vec![rng.random_range(-0.6..-0.4), 0.0])
        }))
    }

    fn step(&self, state: &State, action: usize, rng: &mut StreamRng) -> StepOutcome {
        let (x, v) = match state {
            State::Continuous(s) if s.len() == 2 => (s[0], s[1]),
            _ => return StepOutcome { next_state: State::Absorbing, reward: 0.0 },
        };
        let noise: f64 = if self.cfg.force_noise_scale > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        let (next, done) = self.dynamics(x, v, action, noise);
        let next_state = if done { State::Absorbing } else { State::Continuous(next.to_vec()) };
        StepOutcome { next_state, reward: -1.0 }
    }
}

/// Pushes in the direction of the current velocity (right when at rest).
/// This is the standard near-optimal controller for Mountain Car.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyPumping;

impl ActionPreference for EnergyPumping {
    fn n_actions(&self) -> usize {
        3
    }

    fn preferences(&self, state: &State, out: &mut [f64]) {
        out.fill(0.0);
        let v = state.as_continuous().map_or(0.0, |s| s[1]);
        out[if v >= 0.0 { 2 } else { 0 }] = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn standard_constants_are_defaults() {
        let c = MountainCarConfig::default();
        assert_eq!(c.gravity, 0.008);
        assert_eq!(c.force, 0.008);
        assert_eq!(c.max_speed, 0.2);
    }

    #[test]
    fn one_step_push_right_from_rest() {
        let env = mountain_car_env(0.0).unwrap();
        let ([x, v], done) = env.dynamics(-0.5, 0.0, 2, 0.0);
        let v_expected = 0.008 - (-1.5f64).cos() * 0.008;
        assert!((v - v_expected).abs() < 1e-15);
        assert!((x - (-0.5 + v_expected)).abs() < 1e-15);
        assert!(!done);
        assert!((v - 0.007_434_101_6).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let env = mountain_car_env(0.0).unwrap();
        let s = State::Continuous(vec![-0.3, 0.01]);
        let a = env.step(&s, 0, &mut stream(1, 0));
        let b = env.step(&s, 0, &mut stream(2, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn left_wall_stops_the_car() {
        let env = mountain_car_env(0.0).unwrap();
        let ([x, v], _) = env.dynamics(-1.19, -0.05, 0, 0.0);
        assert_eq!(x, MIN_POSITION);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn speed_is_clipped() {
        let env = mountain_car_env(0.0).unwrap();
        let ([_, v], _) = env.dynamics(-0.5, 0.199, 2, 50.0);
        assert!(v <= 0.2);
    }

    #[test]
    fn reaching_goal_terminates() {
        let env = mountain_car_env(0.0).unwrap();
        let out = env.step(&State::Continuous(vec![0.49, 0.05]), 2, &mut stream(0, 0));
        assert_eq!(out.next_state, State::Absorbing);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn negative_noise_scale_is_rejected() {
        assert!(mountain_car_env(-1.0).is_err());
    }
}

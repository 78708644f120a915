use std::sync::Arc;

use rand::Rng;

use super::{ActionPreference, Environment, Policy, PolicyKind, State};
use crate::error::{invalid, FqeError, Result};
use crate::rng::stream;

/// Q-values indexed by discrete state.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(invalid("Q-table size does not match the state-action count"));
        }
        Ok(QTable { n_states, n_actions, values })
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    fn policy(&self, kind: PolicyKind) -> Result<Policy> {
        Policy::from_preferences(Arc::new(self.clone()), kind)
    }

    pub fn greedy(&self) -> Policy {
        self.policy(PolicyKind::Greedy).expect("greedy policy is always valid")
    }

    pub fn epsilon_greedy(&self, epsilon: f64) -> Result<Policy> {
        self.policy(PolicyKind::EpsilonGreedy(epsilon))
    }

    pub fn softmax(&self, temperature: f64) -> Result<Policy> {
        self.policy(PolicyKind::Softmax(temperature))
    }
}

impl ActionPreference for QTable {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn preferences(&self, state: &State, out: &mut [f64]) {
        match state.as_discrete() {
            Some(s) => out.copy_from_slice(self.row(s)),
            None => out.fill(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    /// Exploration rate of the epsilon-greedy behavior during training.
    pub exploration: f64,
    /// Step cap per training episode.
    pub max_steps: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig { episodes: 20_000, learning_rate: 0.1, exploration: 0.1, max_steps: 100 }
    }
}

/// Undiscounted tabular Q-learning with epsilon-greedy exploration.
pub fn train_q_learning(env: &dyn Environment, cfg: &QLearningConfig, seed: u64) -> Result<QTable> {
    let mdp = env.as_tabular().ok_or_else(|| FqeError::UnsupportedEnvironment(env.name().to_string()))?;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(invalid("learning rate must lie in (0, 1]"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    let initial = env.initial_distribution();
    let mut rng = stream(seed, 0);
    for _ in 0..cfg.episodes {
        let mut state = initial.sample(&mut rng);
        for _ in 0..cfg.max_steps {
            let Some(s) = state.as_discrete() else { break };
            let row = &q[s * na..(s + 1) * na];
            let action = if rng.random::<f64>() < cfg.exploration {
                rng.random_range(0..na)
            } else {
                (0..na).fold(0, |b, a| if row[a] > row[b] { a } else { b })
            };
            let out = env.step(&state, action, &mut rng);
            let future = match out.next_state.as_discrete() {
                Some(n) => q[n * na..(n + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                None => 0.0,
            };
            let idx = s * na + action;
            q[idx] += cfg.learning_rate * (out.reward + future - q[idx]);
            state = out.next_state;
        }
    }
    QTable::new(ns, na, q)
}

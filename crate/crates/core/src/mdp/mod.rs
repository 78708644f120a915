//! Episodic MDPs, datasets and ground-truth oracles.

mod dp;
mod io;
mod mountain_car;
mod policy;
mod qlearning;
mod rollout;
mod tabular;

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::rng::StreamRng;

pub use dp::{exact_q_functions, exact_value_dp};
pub use io::{read_dataset, write_dataset};
pub use mountain_car::{mountain_car_env, EnergyPumping, MountainCar, MountainCarConfig};
pub use policy::{ActionPreference, Policy, PolicyKind};
pub use qlearning::{train_q_learning, QLearningConfig, QTable};
pub use rollout::{generate_episodes, monte_carlo_value, MonteCarloEstimate};
pub use tabular::{
    cliff_walking_env, two_state_chain, ChainConfig, CliffWalkingConfig, Outcome, TabularMdp,
    CLIFF_COLS, CLIFF_ROWS,
};

/// A state of an environment.
///
/// `Absorbing` is the zero-reward self-looping state used to pad episodes
/// that terminate before the horizon.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
    Absorbing,
}

impl State {
    pub fn is_absorbing(&self) -> bool {
        matches!(self, State::Absorbing)
    }

    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            State::Discrete(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            State::Continuous(x) => Some(x),
            _ => None,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Discrete(s) => write!(f, "{s}"),
            State::Absorbing => write!(f, "*"),
            State::Continuous(x) => {
                for (i, v) in x.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub next_state: State,
}

impl Transition {
    pub fn padding() -> Self {
        Transition { state: State::Absorbing, action: 0, reward: 0.0, next_state: State::Absorbing }
    }
}

/// A fixed-horizon trajectory. Early termination is padded with
/// [`Transition::padding`] up to the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    transitions: Vec<Transition>,
}

impl Episode {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(invalid("episode must contain at least one transition"));
        }
        for (h, pair) in transitions.windows(2).enumerate() {
            if pair[0].next_state != pair[1].state {
                return Err(invalid(format!("episode breaks state continuity at step {}", h + 1)));
            }
        }
        Ok(Episode { transitions })
    }

    /// A pseudo-episode of pooled transitions, exempt from the continuity
    /// check. Only meaningful for estimators that pool transitions.
    pub fn pooled(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(invalid("episode must contain at least one transition"));
        }
        Ok(Episode { transitions })
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// An ordered collection of episodes sharing one horizon. Episodes are
/// reference counted so resampled datasets never copy transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    horizon: usize,
    episodes: Vec<Arc<Episode>>,
    env_name: Arc<str>,
    env_config: Arc<str>,
}

impl Dataset {
    pub fn new(
        episodes: Vec<Arc<Episode>>,
        env_name: impl Into<Arc<str>>,
        env_config: impl Into<Arc<str>>,
    ) -> Result<Self> {
        let horizon = episodes
            .first()
            .map(|e| e.horizon())
            .ok_or_else(|| invalid("dataset must contain at least one episode"))?;
        if let Some(k) = episodes.iter().position(|e| e.horizon() != horizon) {
            return Err(invalid(format!(
                "episode {k} has horizon {} but dataset horizon is {horizon}",
                episodes[k].horizon()
            )));
        }
        Ok(Dataset { horizon, episodes, env_name: env_name.into(), env_config: env_config.into() })
    }

    /// Builds a dataset with the same environment labels as `self`.
    pub fn with_episodes(&self, episodes: Vec<Arc<Episode>>) -> Result<Self> {
        Dataset::new(episodes, self.env_name.clone(), self.env_config.clone())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total number of transitions `N = K * H`, padding included.
    pub fn n_transitions(&self) -> usize {
        self.horizon * self.episodes.len()
    }

    pub fn episodes(&self) -> &[Arc<Episode>] {
        &self.episodes
    }

    pub fn env_name(&self) -> &str {
        &self.env_name
    }

    pub fn env_config(&self) -> &str {
        &self.env_config
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}

/// Distribution of the first state.
#[derive(Clone)]
pub enum InitialDistribution {
    Discrete(Vec<(usize, f64)>),
    Sampler(Arc<dyn Fn(&mut StreamRng) -> State + Send + Sync>),
}

impl InitialDistribution {
    pub fn discrete(support: Vec<(usize, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("initial distribution has empty support"));
        }
        if support.iter().any(|&(_, p)| !(p >= 0.0)) {
            return Err(invalid("initial probabilities must be nonnegative"));
        }
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("initial probabilities sum to {total}, not 1")));
        }
        Ok(InitialDistribution::Discrete(support))
    }

    pub fn point(state: usize) -> Self {
        InitialDistribution::Discrete(vec![(state, 1.0)])
    }

    pub fn support(&self) -> Option<&[(usize, f64)]> {
        match self {
            InitialDistribution::Discrete(s) => Some(s),
            InitialDistribution::Sampler(_) => None,
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> State {
        match self {
            InitialDistribution::Discrete(support) => {
                let u: f64 = rand::Rng::random(rng);
                State::Discrete(support[pick_index(support.iter().map(|&(_, p)| p), u)].0)
            }
            InitialDistribution::Sampler(f) => f(rng),
        }
    }
}

impl fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDistribution::Discrete(s) => f.debug_tuple("Discrete").field(s).finish(),
            InitialDistribution::Sampler(_) => f.write_str("Sampler(..)"),
        }
    }
}

/// Inverse-CDF selection; the last index absorbs rounding slack.
pub(crate) fn pick_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
}

/// An episodic environment. Implementations are immutable and shareable.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    /// Compact `key=value;...` description used in dataset headers.
    fn config(&self) -> String;

    fn n_actions(&self) -> usize;

    /// Declared raw reward range, padding reward 0 included.
    fn reward_bounds(&self) -> (f64, f64);

    fn initial_distribution(&self) -> InitialDistribution;

    /// Advances one step. Termination is signalled by an absorbing next state.
    fn step(&self, state: &State, action: usize, rng: &mut StreamRng) -> StepOutcome;

    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

use std::collections::BTreeMap;

use rand::Rng;

use super::{pick_index, Environment, InitialDistribution, State, StepOutcome};
use crate::error::{invalid, Result};
use crate::rng::StreamRng;

/// One possible result of taking an action. `next == None` terminates the
/// episode into the absorbing state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub next: Option<usize>,
    pub prob: f64,
    pub reward: f64,
}

/// A finite MDP given by explicit outcome tables.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    name: String,
    config: String,
    n_states: usize,
    n_actions: usize,
    outcomes: Vec<Vec<Outcome>>,
    initial: Vec<(usize, f64)>,
    reward_bounds: (f64, f64),
}

impl TabularMdp {
    /// `outcomes[s * n_actions + a]` lists the outcomes of action `a` in state `s`.
    pub fn new(
        name: impl Into<String>,
        config: impl Into<String>,
        n_states: usize,
        n_actions: usize,
        outcomes: Vec<Vec<Outcome>>,
        initial: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("tabular MDP needs at least one state and one action"));
        }
        if outcomes.len() != n_states * n_actions {
            return Err(invalid(format!(
                "expected {} outcome lists, got {}",
                n_states * n_actions,
                outcomes.len()
            )));
        }
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for (idx, list) in outcomes.iter().enumerate() {
            let total: f64 = list.iter().map(|o| o.prob).sum();
            if (total - 1.0).abs() > 1e-12 || list.iter().any(|o| !(o.prob >= 0.0)) {
                return Err(invalid(format!(
                    "outcomes of state {} action {} are not a distribution (sum {total})",
                    idx / n_actions,
                    idx % n_actions
                )));
            }
            for o in list {
                if o.next.is_some_and(|s| s >= n_states) {
                    return Err(invalid(format!("outcome next state {:?} out of range", o.next)));
                }
                lo = lo.min(o.reward);
                hi = hi.max(o.reward);
            }
        }
        if let Some(&(s, _)) = initial.iter().find(|&&(s, _)| s >= n_states) {
            return Err(invalid(format!("initial state {s} out of range")));
        }
        InitialDistribution::discrete(initial.clone())?;
        Ok(TabularMdp {
            name: name.into(),
            config: config.into(),
            n_states,
            n_actions,
            outcomes,
            initial,
            reward_bounds: (lo, hi),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn outcomes(&self, state: usize, action: usize) -> &[Outcome] {
        &self.outcomes[state * self.n_actions + action]
    }

    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.outcomes(state, action).iter().map(|o| o.prob * o.reward).sum()
    }

    /// Probability of moving from `state` to `next` (`None` = termination).
    pub fn transition_prob(&self, state: usize, action: usize, next: Option<usize>) -> f64 {
        self.outcomes(state, action).iter().filter(|o| o.next == next).map(|o| o.prob).sum()
    }
}

impl Environment for TabularMdp {
    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> String {
        self.config.clone()
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    fn initial_distribution(&self) -> InitialDistribution {
        InitialDistribution::Discrete(self.initial.clone())
    }

    fn step(&self, state: &State, action: usize, rng: &mut StreamRng) -> StepOutcome {
        let s = match state {
            State::Discrete(s) => *s,
            _ => return StepOutcome { next_state: State::Absorbing, reward: 0.0 },
        };
        let list = self.outcomes(s, action);
        let u: f64 = rng.random();
        let o = list[pick_index(list.iter().map(|o| o.prob), u)];
        StepOutcome { next_state: o.next.map_or(State::Absorbing, State::Discrete), reward: o.reward }
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(self)
    }
}

/// Merges outcomes with identical `(next, reward)`.
fn merge_outcomes(raw: impl IntoIterator<Item = Outcome>) -> Vec<Outcome> {
    let mut acc: BTreeMap<(Option<usize>, u64), f64> = BTreeMap::new();
    for o in raw {
        *acc.entry((o.next, o.reward.to_bits())).or_insert(0.0) += o.prob;
    }
    acc.into_iter()
        .map(|((next, bits), prob)| Outcome { next, prob, reward: f64::from_bits(bits) })
        .collect()
}

pub const CLIFF_ROWS: usize = 4;
pub const CLIFF_COLS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CliffWalkingConfig {
    /// Probability that the executed action is replaced by a uniformly random one.
    pub transition_noise: f64,
    pub cliff_penalty: f64,
}

impl Default for CliffWalkingConfig {
    fn default() -> Self {
        CliffWalkingConfig { transition_noise: 0.1, cliff_penalty: -50.0 }
    }
}

/// The 4x12 Cliff Walking grid with random-action noise.
///
/// Cells are indexed `row * 12 + col`; the agent starts at the bottom-left
/// cell and the goal is bottom-right. Actions are up, right, down, left.
/// Every step costs -1, and stepping into the cliff costs `cliff_penalty`.
/// Both the cliff and the goal end the episode.
pub fn cliff_walking_env(transition_noise: f64, cliff_penalty: f64) -> Result<TabularMdp> {
    if !(0.0..1.0).contains(&transition_noise) {
        return Err(invalid(format!("transition noise {transition_noise} not in [0, 1)")));
    }
    let n_states = CLIFF_ROWS * CLIFF_COLS;
    let start = (CLIFF_ROWS - 1) * CLIFF_COLS;
    let goal = n_states - 1;
    let is_cliff = |cell: usize| cell > start && cell < goal;
    let moved = |cell: usize, action: usize| -> usize {
        let (r, c) = (cell / CLIFF_COLS, cell % CLIFF_COLS);
        let (r, c) = match action {
            0 => (r.saturating_sub(1), c),
            1 => (r, (c + 1).min(CLIFF_COLS - 1)),
            2 => ((r + 1).min(CLIFF_ROWS - 1), c),
            _ => (r, c.saturating_sub(1)),
        };
        r * CLIFF_COLS + c
    };
    let result = |cell: usize, action: usize, prob: f64| -> Outcome {
        let next = moved(cell, action);
        if is_cliff(next) {
            Outcome { next: None, prob, reward: cliff_penalty }
        } else if next == goal {
            Outcome { next: None, prob, reward: -1.0 }
        } else {
            Outcome { next: Some(next), prob, reward: -1.0 }
        }
    };
    let mut outcomes = Vec::with_capacity(n_states * 4);
    for cell in 0..n_states {
        for action in 0..4 {
            if is_cliff(cell) || cell == goal {
                // Never occupied: entering these cells terminates.
                outcomes.push(vec![Outcome { next: None, prob: 1.0, reward: 0.0 }]);
                continue;
            }
            let mut raw = vec![result(cell, action, 1.0 - transition_noise)];
            if transition_noise > 0.0 {
                raw.extend((0..4).map(|a| result(cell, a, transition_noise / 4.0)));
            }
            outcomes.push(merge_outcomes(raw));
        }
    }
    let config = format!("noise={transition_noise};cliff_penalty={cliff_penalty}");
    let mut mdp =
        TabularMdp::new("cliff_walking", config, n_states, 4, outcomes, vec![(start, 1.0)])?;
    mdp.reward_bounds = (cliff_penalty.min(-1.0), 0.0);
    Ok(mdp)
}

/// Parameters of the two-state chain used for consistency checks.
///
/// Action 0 keeps the current state with probability `stay_prob`; action 1
/// switches state with probability `switch_prob`. Arriving in state 1 pays
/// reward 1; every step terminates with probability `terminate_prob`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub stay_prob: f64,
    pub switch_prob: f64,
    pub terminate_prob: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { stay_prob: 0.8, switch_prob: 0.7, terminate_prob: 0.0 }
    }
}

pub fn two_state_chain(cfg: ChainConfig) -> Result<TabularMdp> {
    let probs = [cfg.stay_prob, cfg.switch_prob, cfg.terminate_prob];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("chain probabilities must lie in [0, 1]"));
    }
    let live = 1.0 - cfg.terminate_prob;
    let mut outcomes = Vec::with_capacity(4);
    for s in 0..2usize {
        for a in 0..2usize {
            let p_other = if a == 0 { 1.0 - cfg.stay_prob } else { cfg.switch_prob };
            let other = 1 - s;
            let mut raw = vec![
                Outcome { next: Some(s), prob: live * (1.0 - p_other), reward: (s == 1) as u8 as f64 },
                Outcome { next: Some(other), prob: live * p_other, reward: (other == 1) as u8 as f64 },
            ];
            if cfg.terminate_prob > 0.0 {
                raw.push(Outcome { next: None, prob: cfg.terminate_prob, reward: 0.0 });
            }
            raw.retain(|o| o.prob > 0.0);
            outcomes.push(merge_outcomes(raw));
        }
    }
    let config = format!(
        "stay={};switch={};terminate={}",
        cfg.stay_prob, cfg.switch_prob, cfg.terminate_prob
    );
    TabularMdp::new("two_state_chain", config, 2, 2, outcomes, vec![(0, 1.0)])
}

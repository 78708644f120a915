use std::sync::Arc;

use rayon::prelude::*;

use super::{Dataset, Environment, Episode, InitialDistribution, Policy, State, Transition};
use crate::error::{invalid, Result};
use crate::rng::{stream, StreamRng};

fn check_actions(env: &dyn Environment, policy: &Policy) -> Result<()> {
    if env.n_actions() != policy.n_actions() {
        return Err(invalid(format!(
            "policy has {} actions but environment `{}` has {}",
            policy.n_actions(),
            env.name(),
            env.n_actions()
        )));
    }
    Ok(())
}

fn rollout(
    env: &dyn Environment,
    policy: &Policy,
    start: State,
    horizon: usize,
    rng: &mut StreamRng,
) -> Vec<Transition> {
    let mut transitions = Vec::with_capacity(horizon);
    let mut state = start;
    for _ in 0..horizon {
        if state.is_absorbing() {
            transitions.push(Transition::padding());
            continue;
        }
        let action = policy.sample(&state, rng);
        let out = env.step(&state, action, rng);
        transitions.push(Transition {
            state: std::mem::replace(&mut state, out.next_state.clone()),
            action,
            reward: out.reward,
            next_state: out.next_state,
        });
    }
    transitions
}

/// Collects `n_episodes` independent episodes of length `horizon` under
/// `behavior`. Episode `k` draws from stream `k` of `seed`, so the output is
/// identical regardless of thread count.
pub fn generate_episodes(
    env: &dyn Environment,
    behavior: &Policy,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 || horizon == 0 {
        return Err(invalid("need at least one episode and a positive horizon"));
    }
    check_actions(env, behavior)?;
    let initial = env.initial_distribution();
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let start = initial.sample(&mut rng);
            Episode::new(rollout(env, behavior, start, horizon, &mut rng)).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(episodes, env.name(), env.config())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_rollouts: usize,
}

/// Sample mean and standard error of the return over independent rollouts.
pub fn monte_carlo_value(
    env: &dyn Environment,
    target: &Policy,
    initial: &InitialDistribution,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_rollouts < 2 {
        return Err(invalid("monte carlo estimate needs at least two rollouts"));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be positive"));
    }
    check_actions(env, target)?;
    let returns: Vec<f64> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let start = initial.sample(&mut rng);
            rollout(env, target, start, horizon, &mut rng).iter().map(|t| t.reward).sum()
        })
        .collect();
    let n = n_rollouts as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloEstimate { mean, std_error: (var / n).sqrt(), n_rollouts })
}

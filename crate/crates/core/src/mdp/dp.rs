use super::{Environment, InitialDistribution, Policy, State, TabularMdp};
use crate::error::{invalid, FqeError, Result};

fn require_tabular(env: &dyn Environment) -> Result<&TabularMdp> {
    env.as_tabular().ok_or_else(|| FqeError::UnsupportedEnvironment(env.name().to_string()))
}

/// Exact `Q_h` tables for `h = 1..=horizon` by backward induction.
/// `result[h - 1][s * n_actions + a]` holds `Q_h(s, a)`; the absorbing state
/// has value zero.
pub fn exact_q_functions(env: &dyn Environment, target: &Policy, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let mdp = require_tabular(env)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if target.n_actions() != na {
        return Err(invalid("policy and environment disagree on the action count"));
    }
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| target.probabilities(&State::Discrete(s))).collect();
    let mut q = vec![vec![0.0; ns * na]; horizon];
    let mut v_next = vec![0.0; ns];
    for h in (0..horizon).rev() {
        for s in 0..ns {
            for a in 0..na {
                q[h][s * na + a] = mdp
                    .outcomes(s, a)
                    .iter()
                    .map(|o| o.prob * (o.reward + o.next.map_or(0.0, |n| v_next[n])))
                    .sum();
            }
        }
        for s in 0..ns {
            v_next[s] = (0..na).map(|a| pi[s][a] * q[h][s * na + a]).sum();
        }
    }
    Ok(q)
}

/// Exact policy value `E[sum_h r_h | s_1 ~ xi1]` of a tabular MDP.
pub fn exact_value_dp(
    env: &dyn Environment,
    target: &Policy,
    initial: &InitialDistribution,
    horizon: usize,
) -> Result<f64> {
    let mdp = require_tabular(env)?;
    let support = initial
        .support()
        .ok_or_else(|| invalid("exact dynamic programming needs a discrete initial distribution"))?;
    if horizon == 0 {
        return Ok(0.0);
    }
    let q = exact_q_functions(env, target, horizon)?;
    let na = mdp.n_actions();
    Ok(support
        .iter()
        .map(|&(s, p)| {
            let probs = target.probabilities(&State::Discrete(s));
            p * (0..na).map(|a| probs[a] * q[0][s * na + a]).sum::<f64>()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{monte_carlo_value, mountain_car_env, two_state_chain, ChainConfig, Outcome};

    #[test]
    fn one_step_constant_reward() {
        let outcomes = vec![
            vec![Outcome { next: Some(1), prob: 1.0, reward: 2.5 }],
            vec![Outcome { next: None, prob: 1.0, reward: 2.5 }],
            vec![Outcome { next: Some(0), prob: 1.0, reward: 2.5 }],
            vec![Outcome { next: Some(1), prob: 1.0, reward: 2.5 }],
        ];
        let env = TabularMdp::new("c", "", 2, 2, outcomes, vec![(0, 0.4), (1, 0.6)]).unwrap();
        let pi = Policy::uniform(2, 2).unwrap();
        let v = exact_value_dp(&env, &pi, &env.initial_distribution(), 1).unwrap();
        assert_eq!(v, 2.5);
    }

    #[test]
    fn two_step_chain_by_hand() {
        // Target always switches (action 1). From state 0:
        // step 1 reward = P(arrive in 1) = 0.7.
        // step 2: in 1 w.p. 0.7 -> arrive 1 w.p. 0.3; in 0 w.p. 0.3 -> 0.7.
        let env = two_state_chain(ChainConfig::default()).unwrap();
        let pi = Policy::tabular(vec![vec![0.0, 1.0]; 2]).unwrap();
        let v = exact_value_dp(&env, &pi, &env.initial_distribution(), 2).unwrap();
        let expected = 0.7 + (0.7 * 0.3 + 0.3 * 0.7);
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_mdp_has_zero_value() {
        let outcomes = vec![vec![Outcome { next: Some(0), prob: 1.0, reward: 0.0 }]; 2];
        let env = TabularMdp::new("z", "", 1, 2, outcomes, vec![(0, 1.0)]).unwrap();
        let pi = Policy::uniform(1, 2).unwrap();
        assert_eq!(exact_value_dp(&env, &pi, &env.initial_distribution(), 9).unwrap(), 0.0);
    }

    #[test]
    fn padding_matches_unpadded_value() {
        // A chain that terminates w.p. 0.25 per step. The unpadded episodic
        // value is a geometric sum: sum_{t<H} 0.75^t * r with r = 1 per live step.
        let outcomes = vec![vec![
            Outcome { next: Some(0), prob: 0.75, reward: 1.0 },
            Outcome { next: None, prob: 0.25, reward: 1.0 },
        ]];
        let env = TabularMdp::new("g", "", 1, 1, outcomes, vec![(0, 1.0)]).unwrap();
        let pi = Policy::uniform(1, 1).unwrap();
        let v = exact_value_dp(&env, &pi, &env.initial_distribution(), 4).unwrap();
        let expected: f64 = (0..4).map(|t| 0.75f64.powi(t)).sum();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_agrees_with_dp() {
        let env = two_state_chain(ChainConfig { terminate_prob: 0.05, ..Default::default() }).unwrap();
        let pi = Policy::tabular(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let xi = env.initial_distribution();
        let v = exact_value_dp(&env, &pi, &xi, 6).unwrap();
        let mut within = 0;
        for seed in 0..20 {
            let mc = monte_carlo_value(&env, &pi, &xi, 6, 4000, seed).unwrap();
            if (mc.mean - v).abs() <= 3.0 * mc.std_error {
                within += 1;
            }
        }
        assert!(within >= 17, "{within}/20 within 3 standard errors");
    }

    #[test]
    fn continuous_environment_is_unsupported() {
        let env = mountain_car_env(0.0).unwrap();
        let pi = Policy::uniform(1, 3).unwrap();
        let err = exact_value_dp(&env, &pi, &InitialDistribution::point(0), 3).unwrap_err();
        assert!(matches!(err, FqeError::UnsupportedEnvironment(_)));
    }
}

//! Builds environments, policies, feature maps and ground truth from a config.

use std::sync::Arc;

use fqe_core::features::{rbf_grid, tabular_one_hot, FeatureMap};
use fqe_core::fqe::{FqeConfig, Regularization};
use fqe_core::mdp::{
    cliff_walking_env, exact_value_dp, monte_carlo_value, train_q_learning, two_state_chain, ChainConfig,
    EnergyPumping, Environment, MountainCar, MountainCarConfig, Policy, PolicyKind, QLearningConfig,
};
use fqe_core::rng::derive_seed;

use crate::config::{EnvKind, ExperimentConfig, LambdaSpec, PolicySpec};
use crate::error::ExpResult;

/// How the true policy value was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truth {
    Exact(f64),
    MonteCarlo { mean: f64, std_error: f64, rollouts: usize },
}

impl Truth {
    pub fn value(&self) -> f64 {
        match *self {
            Truth::Exact(v) | Truth::MonteCarlo { mean: v, .. } => v,
        }
    }
}

#[derive(Clone)]
pub struct Problem {
    pub env: Arc<dyn Environment>,
    pub behavior: Policy,
    pub target: Policy,
    pub target2: Policy,
    pub features: Arc<dyn FeatureMap>,
    pub horizon: usize,
    pub lambda: Regularization,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> ExpResult<Self> {
        let mut car_bounds = None;
        let (env, reference): (Arc<dyn Environment>, Reference) = match cfg.env {
            EnvKind::CliffWalking => {
                let env = cliff_walking_env(cfg.cliff_noise, cfg.cliff_penalty)?;
                let qcfg = QLearningConfig { episodes: cfg.q_episodes, ..QLearningConfig::default() };
                let q = train_q_learning(&env, &qcfg, cfg.q_seed)?;
                (Arc::new(env), Reference::Scores(Arc::new(q)))
            }
            EnvKind::MountainCar => {
                let env = MountainCar::new(MountainCarConfig {
                    force_noise_scale: cfg.car_noise_scale,
                    ..MountainCarConfig::default()
                })?;
                car_bounds = Some(env.state_bounds());
                (Arc::new(env), Reference::Scores(Arc::new(EnergyPumping)))
            }
            EnvKind::Chain => {
                let env = two_state_chain(ChainConfig {
                    stay_prob: cfg.chain_stay,
                    switch_prob: cfg.chain_switch,
                    terminate_prob: cfg.chain_terminate,
                })?;
                (Arc::new(env), Reference::Chain)
            }
        };
        let features: Arc<dyn FeatureMap> = match car_bounds {
            Some(bounds) => {
                let m = cfg.rbf_centers;
                Arc::new(rbf_grid(&[m, m], cfg.rbf_bandwidth, &bounds, env.n_actions())?)
            }
            None => {
                let mdp = env.as_tabular().expect("tabular environment");
                Arc::new(tabular_one_hot(mdp.n_states(), mdp.n_actions())?)
            }
        };
        let lambda = match cfg.lambda {
            LambdaSpec::PerSample(c) => Regularization::PerSample(c),
            LambdaSpec::Fixed(l) => Regularization::Fixed(l),
        };
        Ok(Problem {
            behavior: reference.policy(cfg.behavior, env.as_ref())?,
            target: reference.policy(cfg.target, env.as_ref())?,
            target2: reference.policy(cfg.target2, env.as_ref())?,
            env,
            features,
            horizon: cfg.horizon,
            lambda,
        })
    }

    pub fn fqe_config(&self, target: &Policy, seed: u64) -> ExpResult<FqeConfig> {
        Ok(FqeConfig::new(
            self.features.clone(),
            target.clone(),
            &self.env.initial_distribution(),
            self.horizon,
            self.lambda,
            seed,
        )?)
    }

    /// Reward span used to scale value envelopes.
    pub fn reward_range(&self) -> f64 {
        let (lo, hi) = self.env.reward_bounds();
        hi - lo
    }

    pub fn truth(&self, target: &Policy, rollouts: usize, seed: u64) -> ExpResult<Truth> {
        let init = self.env.initial_distribution();
        if self.env.as_tabular().is_some() {
            return Ok(Truth::Exact(exact_value_dp(self.env.as_ref(), target, &init, self.horizon)?));
        }
        let mc = monte_carlo_value(self.env.as_ref(), target, &init, self.horizon, rollouts, derive_seed(seed, 0x7472))?;
        Ok(Truth::MonteCarlo { mean: mc.mean, std_error: mc.std_error, rollouts: mc.n_rollouts })
    }
}

enum Reference {
    Scores(Arc<dyn fqe_core::mdp::ActionPreference>),
    /// The chain has no learned scores: "greedy" means always switch, the
    /// reward-seeking choice from state 0.
    Chain,
}

impl Reference {
    fn policy(&self, spec: PolicySpec, env: &dyn Environment) -> ExpResult<Policy> {
        let na = env.n_actions();
        match (self, spec) {
            (_, PolicySpec::Uniform) => {
                let ns = env.as_tabular().map_or(1, |m| m.n_states());
                if env.as_tabular().is_some() {
                    Ok(Policy::uniform(ns, na)?)
                } else {
                    Ok(Policy::from_preferences(Arc::new(Flat(na)), PolicyKind::Softmax(1.0))?)
                }
            }
            (Reference::Scores(prefs), spec) => Ok(Policy::from_preferences(prefs.clone(), kind(spec))?),
            (Reference::Chain, spec) => {
                let base: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
                let table = base
                    .iter()
                    .map(|row| match spec {
                        PolicySpec::EpsilonGreedy(e) => row.iter().map(|p| (1.0 - e) * p + e / na as f64).collect(),
                        PolicySpec::Softmax(t) => {
                            let z: Vec<f64> = row.iter().map(|p| (p / t).exp()).collect();
                            let s: f64 = z.iter().sum();
                            z.into_iter().map(|v| v / s).collect()
                        }
                        _ => row.clone(),
                    })
                    .collect();
                Ok(Policy::tabular(table)?)
            }
        }
    }
}

fn kind(spec: PolicySpec) -> PolicyKind {
    match spec {
        PolicySpec::Greedy | PolicySpec::Uniform => PolicyKind::Greedy,
        PolicySpec::EpsilonGreedy(e) => PolicyKind::EpsilonGreedy(e),
        PolicySpec::Softmax(t) => PolicyKind::Softmax(t),
    }
}

/// Equal scores for every action.
struct Flat(usize);

impl fqe_core::mdp::ActionPreference for Flat {
    fn n_actions(&self) -> usize {
        self.0
    }

    fn preferences(&self, _: &fqe_core::mdp::State, out: &mut [f64]) {
        out.fill(0.0);
    }
}

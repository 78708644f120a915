//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. `schema_version`
//! must be present and equal to [`SCHEMA_VERSION`]. Unknown keys and
//! repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{ExpError, ExpResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    CliffWalking,
    MountainCar,
    Chain,
}

impl FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cliff_walking" => Ok(EnvKind::CliffWalking),
            "mountain_car" => Ok(EnvKind::MountainCar),
            "chain" => Ok(EnvKind::Chain),
            _ => Err(format!("unknown environment '{s}'")),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::CliffWalking => "cliff_walking",
            EnvKind::MountainCar => "mountain_car",
            EnvKind::Chain => "chain",
        })
    }
}

/// A policy derived from the environment's reference action scores
/// (Q-learning for tabular problems, energy pumping for Mountain Car).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicySpec {
    Greedy,
    EpsilonGreedy(f64),
    Softmax(f64),
    Uniform,
}

impl FromStr for PolicySpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64, String> {
            a.ok_or_else(|| format!("policy '{name}' needs a parameter"))?
                .parse::<f64>()
                .map_err(|e| format!("bad policy parameter in '{s}': {e}"))
        };
        match name {
            "greedy" => Ok(PolicySpec::Greedy),
            "uniform" => Ok(PolicySpec::Uniform),
            "epsilon_greedy" => Ok(PolicySpec::EpsilonGreedy(num(arg)?)),
            "softmax" => Ok(PolicySpec::Softmax(num(arg)?)),
            _ => Err(format!("unknown policy '{s}'")),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Greedy => f.write_str("greedy"),
            PolicySpec::Uniform => f.write_str("uniform"),
            PolicySpec::EpsilonGreedy(e) => write!(f, "epsilon_greedy:{e}"),
            PolicySpec::Softmax(t) => write!(f, "softmax:{t}"),
        }
    }
}

/// Ridge setting: `per_sample:c` gives `lambda = c K H`, `fixed:l` a constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSpec {
    PerSample(f64),
    Fixed(f64),
}

impl FromStr for LambdaSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, v) = s.split_once(':').ok_or_else(|| format!("lambda '{s}' must be per_sample:<c> or fixed:<l>"))?;
        let v: f64 = v.parse().map_err(|e| format!("bad lambda value in '{s}': {e}"))?;
        match kind {
            "per_sample" => Ok(LambdaSpec::PerSample(v)),
            "fixed" => Ok(LambdaSpec::Fixed(v)),
            _ => Err(format!("lambda '{s}' must be per_sample:<c> or fixed:<l>")),
        }
    }
}

impl fmt::Display for LambdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSpec::PerSample(c) => write!(f, "per_sample:{c}"),
            LambdaSpec::Fixed(l) => write!(f, "fixed:{l}"),
        }
    }
}

/// Interval constructions compared by the coverage command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    Vanilla,
    Subsampled,
    Bernstein,
    Oracle,
}

impl FromStr for MethodSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "vanilla" => Ok(MethodSpec::Vanilla),
            "subsampled" => Ok(MethodSpec::Subsampled),
            "bernstein" => Ok(MethodSpec::Bernstein),
            "oracle" => Ok(MethodSpec::Oracle),
            other => Err(format!("unknown interval method '{other}'")),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodSpec::Vanilla => "vanilla",
            MethodSpec::Subsampled => "subsampled",
            MethodSpec::Bernstein => "bernstein",
            MethodSpec::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub cliff_noise: f64,
    pub cliff_penalty: f64,
    pub chain_stay: f64,
    pub chain_switch: f64,
    pub chain_terminate: f64,
    pub car_noise_scale: f64,
    pub rbf_centers: usize,
    pub rbf_bandwidth: Option<f64>,
    pub behavior: PolicySpec,
    pub target: PolicySpec,
    pub target2: PolicySpec,
    pub q_episodes: usize,
    pub q_seed: u64,
    pub k_schedule: Vec<usize>,
    pub horizon: usize,
    pub replicates: usize,
    pub replicate_schedule: Vec<usize>,
    pub gamma: f64,
    pub delta: f64,
    pub trials: usize,
    pub methods: Vec<MethodSpec>,
    pub mc_datasets: usize,
    pub truth_rollouts: usize,
    pub lambda: LambdaSpec,
    pub seed: u64,
    pub bins: usize,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvKind::CliffWalking,
            cliff_noise: 0.1,
            cliff_penalty: -50.0,
            chain_stay: 0.8,
            chain_switch: 0.7,
            chain_terminate: 0.0,
            car_noise_scale: 0.1f64.sqrt(),
            rbf_centers: 20,
            rbf_bandwidth: None,
            behavior: PolicySpec::EpsilonGreedy(0.1),
            target: PolicySpec::Greedy,
            target2: PolicySpec::EpsilonGreedy(0.1),
            q_episodes: 20_000,
            q_seed: 2021,
            k_schedule: vec![10, 50, 100, 200, 500, 1000],
            horizon: 100,
            replicates: 100,
            replicate_schedule: vec![10, 50, 100],
            gamma: 0.5,
            delta: 0.1,
            trials: 200,
            methods: vec![MethodSpec::Vanilla, MethodSpec::Subsampled, MethodSpec::Bernstein, MethodSpec::Oracle],
            mc_datasets: 10_000,
            truth_rollouts: 10_000,
            lambda: LambdaSpec::PerSample(1e-6),
            seed: 0,
            bins: 40,
            dataset: None,
            out: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "schema_version",
    "env",
    "cliff_noise",
    "cliff_penalty",
    "chain_stay",
    "chain_switch",
    "chain_terminate",
    "car_noise_scale",
    "rbf_centers",
    "rbf_bandwidth",
    "behavior",
    "target",
    "target2",
    "q_episodes",
    "q_seed",
    "k_schedule",
    "horizon",
    "replicates",
    "replicate_schedule",
    "gamma",
    "delta",
    "trials",
    "methods",
    "mc_datasets",
    "truth_rollouts",
    "lambda",
    "seed",
    "bins",
    "dataset",
    "out",
];

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',').map(|x| x.trim().parse::<usize>().map_err(|e| format!("bad count '{x}': {e}"))).collect()
}

fn list_string(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> ExpResult<Self> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExpError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ExpError::Config(format!("line {}: unknown key '{k}'", i + 1)));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ExpError::Config(format!("line {}: duplicate key '{k}'", i + 1)));
            }
        }
        match seen.remove("schema_version") {
            None => return Err(ExpError::Config("missing schema_version".into())),
            Some(v) if v != SCHEMA_VERSION.to_string() => {
                return Err(ExpError::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")))
            }
            Some(_) => {}
        }
        let mut cfg = ExperimentConfig::default();
        for (k, v) in &seen {
            cfg.set(k, v).map_err(|e| ExpError::Config(format!("{k}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("cannot parse '{v}': {e}"))
        }
        match key {
            "env" => self.env = v.parse()?,
            "cliff_noise" => self.cliff_noise = num(v)?,
            "cliff_penalty" => self.cliff_penalty = num(v)?,
            "chain_stay" => self.chain_stay = num(v)?,
            "chain_switch" => self.chain_switch = num(v)?,
            "chain_terminate" => self.chain_terminate = num(v)?,
            "car_noise_scale" => self.car_noise_scale = num(v)?,
            "rbf_centers" => self.rbf_centers = num(v)?,
            "rbf_bandwidth" => self.rbf_bandwidth = if v == "auto" { None } else { Some(num(v)?) },
            "behavior" => self.behavior = v.parse()?,
            "target" => self.target = v.parse()?,
            "target2" => self.target2 = v.parse()?,
            "q_episodes" => self.q_episodes = num(v)?,
            "q_seed" => self.q_seed = num(v)?,
            "k_schedule" => self.k_schedule = parse_list(v)?,
            "horizon" => self.horizon = num(v)?,
            "replicates" => self.replicates = num(v)?,
            "replicate_schedule" => self.replicate_schedule = parse_list(v)?,
            "gamma" => self.gamma = num(v)?,
            "delta" => self.delta = num(v)?,
            "trials" => self.trials = num(v)?,
            "methods" => self.methods = v.split(',').map(str::parse).collect::<Result<_, _>>()?,
            "mc_datasets" => self.mc_datasets = num(v)?,
            "truth_rollouts" => self.truth_rollouts = num(v)?,
            "lambda" => self.lambda = v.parse()?,
            "seed" => self.seed = num(v)?,
            "bins" => self.bins = num(v)?,
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            _ => unreachable!("keys are checked before assignment"),
        }
        Ok(())
    }

    pub fn validate(&self) -> ExpResult<()> {
        let bad = |m: String| Err(ExpError::Config(m));
        if self.k_schedule.is_empty() || self.k_schedule.contains(&0) {
            return bad("k_schedule must list positive episode counts".into());
        }
        if self.k_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("k_schedule must be strictly increasing".into());
        }
        if self.replicate_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("replicate_schedule must be strictly increasing".into());
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("trials", self.trials),
            ("mc_datasets", self.mc_datasets),
            ("bins", self.bins),
            ("rbf_centers", self.rbf_centers),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.methods.is_empty() {
            return bad("methods must name at least one interval method".into());
        }
        if self.truth_rollouts < 2 {
            return bad("truth_rollouts must be at least 2".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        Ok(())
    }

    /// The configuration as `key = value` text, parseable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("env", self.env.to_string()),
            ("cliff_noise", self.cliff_noise.to_string()),
            ("cliff_penalty", self.cliff_penalty.to_string()),
            ("chain_stay", self.chain_stay.to_string()),
            ("chain_switch", self.chain_switch.to_string()),
            ("chain_terminate", self.chain_terminate.to_string()),
            ("car_noise_scale", self.car_noise_scale.to_string()),
            ("rbf_centers", self.rbf_centers.to_string()),
            ("rbf_bandwidth", self.rbf_bandwidth.map_or("auto".to_string(), |b| b.to_string())),
            ("behavior", self.behavior.to_string()),
            ("target", self.target.to_string()),
            ("target2", self.target2.to_string()),
            ("q_episodes", self.q_episodes.to_string()),
            ("q_seed", self.q_seed.to_string()),
            ("k_schedule", list_string(&self.k_schedule)),
            ("horizon", self.horizon.to_string()),
            ("replicates", self.replicates.to_string()),
            ("replicate_schedule", list_string(&self.replicate_schedule)),
            ("gamma", self.gamma.to_string()),
            ("delta", self.delta.to_string()),
            ("trials", self.trials.to_string()),
            ("methods", self.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")),
            ("mc_datasets", self.mc_datasets.to_string()),
            ("truth_rollouts", self.truth_rollouts.to_string()),
            ("lambda", self.lambda.to_string()),
            ("seed", self.seed.to_string()),
            ("bins", self.bins.to_string()),
        ];
        if let Some(d) = &self.dataset {
            out.push(("dataset", d.display().to_string()));
        }
        out.push(("out", self.out.display().to_string()));
        out
    }
}

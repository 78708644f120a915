//! Bootstrap resampling of episodic datasets and the subsampled bootstrap.
//!
//! Replicate `b` of a plan draws from its own stream `stream(seed, b)`, so
//! replicates can run in any order or in parallel. Results are always
//! gathered in replicate order.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fqe::engine::{self, PreparedData, PreparedTransition};
use crate::fqe::FqeConfig;
use crate::mdp::{Dataset, Episode, State};
use crate::rng::{stream, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Scheme {
    ByEpisode,
    ByTransition,
    /// Subset size `s`.
    Subsampled(usize),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::ByEpisode => f.write_str("by_episode"),
            Scheme::ByTransition => f.write_str("by_transition"),
            Scheme::Subsampled(s) => write!(f, "subsampled({s})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ResamplePlan {
    pub scheme: Scheme,
    pub replicates: usize,
    pub seed: u64,
}

impl ResamplePlan {
    pub fn new(scheme: Scheme, replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(invalid("a bootstrap plan needs at least one replicate"));
        }
        if scheme == Scheme::Subsampled(0) {
            return Err(invalid("subset size must be at least 1"));
        }
        Ok(ResamplePlan { scheme, replicates, seed })
    }

    /// Subsampled plan with `s = ceil(K^gamma)`.
    pub fn subsampled_gamma(n_episodes: usize, gamma: f64, replicates: usize, seed: u64) -> Result<Self> {
        ResamplePlan::new(Scheme::Subsampled(subset_size(n_episodes, gamma)?), replicates, seed)
    }

    fn check(&self, n_episodes: usize) -> Result<()> {
        if let Scheme::Subsampled(s) = self.scheme {
            if s > n_episodes {
                return Err(invalid(format!("subset size {s} exceeds the {n_episodes} available episodes")));
            }
        }
        Ok(())
    }
}

/// `ceil(K^gamma)` clamped to `1..=K`. A tiny tolerance keeps exact powers
/// such as `100^0.5` from rounding up.
pub fn subset_size(n_episodes: usize, gamma: f64) -> Result<usize> {
    if n_episodes == 0 {
        return Err(invalid("need at least one episode"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("subset exponent {gamma} not in (0, 1]")));
    }
    let raw = (n_episodes as f64).powf(gamma);
    Ok(((raw - 1e-9).ceil() as usize).clamp(1, n_episodes))
}

/// Identifies the resample indices of a plan on a dataset. Two runs carry the
/// same token exactly when their replicate `b` used the same draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PlanToken(pub u64);

impl PlanToken {
    pub fn new(plan: &ResamplePlan, dataset: &Dataset) -> Self {
        let mut h = DefaultHasher::new();
        plan.hash(&mut h);
        dataset_fingerprint(dataset).hash(&mut h);
        PlanToken(h.finish())
    }
}

/// Content hash of a dataset.
pub fn dataset_fingerprint(dataset: &Dataset) -> u64 {
    fn state(s: &State, h: &mut DefaultHasher) {
        match s {
            State::Discrete(i) => (0u8, *i).hash(h),
            State::Absorbing => 1u8.hash(h),
            State::Continuous(x) => {
                2u8.hash(h);
                x.iter().for_each(|v| v.to_bits().hash(h));
            }
        }
    }
    let mut h = DefaultHasher::new();
    (dataset.n_episodes(), dataset.horizon(), dataset.env_name(), dataset.env_config()).hash(&mut h);
    for t in dataset.transitions() {
        state(&t.state, &mut h);
        t.action.hash(&mut h);
        t.reward.to_bits().hash(&mut h);
        state(&t.next_state, &mut h);
    }
    h.finish()
}

/// Bootstrap errors `eps_b = v(D*_b) - v(D_b)` for one plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapErrors {
    pub errors: Vec<f64>,
    /// `v(D)` on the full dataset.
    pub point_estimate: f64,
    /// `v(D_b)`, the center of each error. Equal to `point_estimate` unless
    /// the plan subsamples.
    pub centers: Vec<f64>,
    pub plan: ResamplePlan,
    pub n_episodes: usize,
    pub horizon: usize,
    pub token: PlanToken,
}

impl BootstrapErrors {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Writes a metadata comment line followed by one row per replicate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let s = match self.plan.scheme {
            Scheme::Subsampled(s) => s,
            _ => self.n_episodes,
        };
        writeln!(
            w,
            "# scheme={} B={} s={} K={} H={} seed={} point_estimate={}",
            match self.plan.scheme {
                Scheme::Subsampled(_) => "subsampled".to_string(),
                other => other.to_string(),
            },
            self.plan.replicates,
            s,
            self.n_episodes,
            self.horizon,
            self.plan.seed,
            self.point_estimate
        )?;
        writeln!(w, "replicate,error,center")?;
        for (b, (e, c)) in self.errors.iter().zip(&self.centers).enumerate() {
            writeln!(w, "{b},{e},{c}")?;
        }
        Ok(())
    }
}

/// `K` episode indices drawn uniformly with replacement.
pub fn draw_episode_indices(n_episodes: usize, rng: &mut StreamRng) -> Vec<usize> {
    (0..n_episodes).map(|_| rng.random_range(0..n_episodes)).collect()
}

/// `s` distinct indices from `0..n`, via a partial Fisher-Yates shuffle.
pub fn draw_subset(n: usize, s: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..s.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(s);
    idx
}

/// Efron bootstrap over episodes. Episodes are shared, not copied.
pub fn resample_by_episode(dataset: &Dataset, rng: &mut StreamRng) -> Dataset {
    let eps = dataset.episodes();
    let picked = draw_episode_indices(eps.len(), rng).into_iter().map(|i| eps[i].clone()).collect();
    dataset.with_episodes(picked).expect("resample keeps the horizon")
}

/// Resamples `N = K H` pooled transitions with replacement and fills `K`
/// pseudo-episodes sequentially. The regrouping is arbitrary, which is
/// harmless for FQE since it pools transitions.
pub fn resample_by_transition(dataset: &Dataset, rng: &mut StreamRng) -> Dataset {
    let h = dataset.horizon();
    let n = dataset.n_transitions();
    let eps = dataset.episodes();
    let picks: Vec<_> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            eps[i / h].transitions()[i % h].clone()
        })
        .collect();
    let pseudo = picks.chunks(h).map(|c| Arc::new(Episode::pooled(c.to_vec()).expect("nonempty"))).collect();
    dataset.with_episodes(pseudo).expect("resample keeps the horizon")
}

/// Per-replicate draws in original indices: which episodes (or pooled
/// transitions) `D*_b` contains, and which episodes form `D_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateDraw {
    pub subset: Option<Vec<usize>>,
    pub resample: Vec<usize>,
}

/// The draws replicate `b` of `plan` makes on a dataset of `K` episodes of
/// length `H`.
pub fn replicate_draw(plan: &ResamplePlan, n_episodes: usize, horizon: usize, b: usize) -> ReplicateDraw {
    let mut rng = stream(plan.seed, b as u64);
    match plan.scheme {
        Scheme::ByEpisode => ReplicateDraw { subset: None, resample: draw_episode_indices(n_episodes, &mut rng) },
        Scheme::ByTransition => {
            let n = n_episodes * horizon;
            ReplicateDraw { subset: None, resample: (0..n).map(|_| rng.random_range(0..n)).collect() }
        }
        Scheme::Subsampled(s) if s >= n_episodes => {
            ReplicateDraw { subset: None, resample: draw_episode_indices(n_episodes, &mut rng) }
        }
        Scheme::Subsampled(s) => {
            let subset = draw_subset(n_episodes, s, &mut rng);
            let resample = (0..n_episodes).map(|_| subset[rng.random_range(0..s)]).collect();
            ReplicateDraw { subset: Some(subset), resample }
        }
    }
}

fn multiplicities(indices: &[usize], n: usize) -> Vec<(usize, f64)> {
    let mut counts = vec![0u32; n];
    indices.iter().for_each(|&i| counts[i] += 1);
    counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, c)| (i, *c as f64)).collect()
}

struct Runner<'a> {
    prepared: PreparedData,
    config: &'a FqeConfig,
    n_episodes: usize,
    horizon: usize,
}

impl Runner<'_> {
    fn value(&self, items: &engine::Weighted<'_>, n_episodes: usize) -> Result<f64> {
        let lambda = self.config.regularization().lambda(n_episodes * self.horizon);
        engine::value_aggregated(items, self.config.nu1(), self.horizon, lambda)
    }

    fn replicate(&self, plan: &ResamplePlan, b: usize, point: f64) -> Result<(f64, f64)> {
        let draw = replicate_draw(plan, self.n_episodes, self.horizon, b);
        let k = self.n_episodes;
        let star = if plan.scheme == Scheme::ByTransition {
            let items: Vec<(&PreparedTransition, f64)> = multiplicities(&draw.resample, k * self.horizon)
                .into_iter()
                .filter_map(|(n, c)| self.prepared.pooled(n).map(|t| (t, c)))
                .collect();
            self.value(&items, k)?
        } else {
            self.value(&self.prepared.weighted(&multiplicities(&draw.resample, k)), k)?
        };
        let center = match &draw.subset {
            None => point,
            Some(subset) => {
                let ones: Vec<(usize, f64)> = subset.iter().map(|&i| (i, 1.0)).collect();
                self.value(&self.prepared.weighted(&ones), subset.len())?
            }
        };
        Ok((star - center, center))
    }
}

/// Runs `plan` with FQE as the estimator.
pub fn run_bootstrap(dataset: &Dataset, config: &FqeConfig, plan: &ResamplePlan) -> Result<BootstrapErrors> {
    plan.check(dataset.n_episodes())?;
    if dataset.horizon() != config.horizon() {
        return Err(invalid(format!(
            "dataset horizon {} does not match configured horizon {}",
            dataset.horizon(),
            config.horizon()
        )));
    }
    let runner = Runner {
        prepared: PreparedData::new(dataset, config),
        config,
        n_episodes: dataset.n_episodes(),
        horizon: dataset.horizon(),
    };
    let point = runner.value(&runner.prepared.all(), runner.n_episodes)?;
    let results = (0..plan.replicates)
        .into_par_iter()
        .map(|b| runner.replicate(plan, b, point))
        .collect::<Result<Vec<_>>>()?;
    let (errors, centers) = results.into_iter().unzip();
    Ok(BootstrapErrors {
        errors,
        point_estimate: point,
        centers,
        plan: *plan,
        n_episodes: runner.n_episodes,
        horizon: runner.horizon,
        token: PlanToken::new(plan, dataset),
    })
}

/// The subsampled bootstrap with subset size `s`. With `s = K` it is the
/// vanilla episode bootstrap, draw for draw.
pub fn subsampled_bootstrap(
    dataset: &Dataset,
    s: usize,
    replicates: usize,
    config: &FqeConfig,
    seed: u64,
) -> Result<BootstrapErrors> {
    let plan = ResamplePlan::new(Scheme::Subsampled(s), replicates, seed)?;
    run_bootstrap(dataset, config, &plan)
}

/// One plan evaluated for several target policies on shared resamples.
pub fn paired_bootstrap(dataset: &Dataset, configs: &[FqeConfig], plan: &ResamplePlan) -> Result<Vec<BootstrapErrors>> {
    configs.iter().map(|c| run_bootstrap(dataset, c, plan)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tabular_one_hot;
    use crate::fqe::{fqe_value, Regularization};
    use crate::inference::ks_two_sample;
    use crate::mdp::{generate_episodes, two_state_chain, ChainConfig, Environment, Policy, TabularMdp};

    fn chain() -> TabularMdp {
        two_state_chain(ChainConfig::default()).unwrap()
    }

    fn setup(k: usize, h: usize, seed: u64) -> (Dataset, FqeConfig) {
        let mdp = chain();
        let behavior = Policy::uniform(2, 2).unwrap();
        let target = Policy::tabular(vec![vec![0.3, 0.7], vec![0.8, 0.2]]).unwrap();
        let data = generate_episodes(&mdp, &behavior, k, h, seed).unwrap();
        let features = Arc::new(tabular_one_hot(2, 2).unwrap());
        let cfg =
            FqeConfig::new(features, target, &mdp.initial_distribution(), h, Regularization::default(), 0).unwrap();
        (data, cfg)
    }

    #[test]
    fn subset_size_rounding() {
        assert_eq!(subset_size(100, 0.5).unwrap(), 10);
        assert_eq!(subset_size(101, 0.5).unwrap(), 11);
        assert_eq!(subset_size(2000, 0.5).unwrap(), 45);
        assert_eq!(subset_size(7, 1.0).unwrap(), 7);
        assert_eq!(subset_size(1, 0.3).unwrap(), 1);
        assert!(subset_size(10, 0.0).is_err());
        assert!(subset_size(10, 1.5).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(ResamplePlan::new(Scheme::ByEpisode, 0, 1).is_err());
        assert!(ResamplePlan::new(Scheme::Subsampled(0), 5, 1).is_err());
        let (data, cfg) = setup(5, 2, 1);
        let plan = ResamplePlan::new(Scheme::Subsampled(6), 5, 1).unwrap();
        assert!(run_bootstrap(&data, &cfg, &plan).is_err());
    }

    #[test]
    fn singleton_dataset_resamples_to_itself() {
        let (data, cfg) = setup(1, 4, 3);
        let mut rng = stream(1, 0);
        for _ in 0..10 {
            assert_eq!(resample_by_episode(&data, &mut rng), data);
        }
        let out = subsampled_bootstrap(&data, 1, 20, &cfg, 9).unwrap();
        assert!(out.errors.iter().all(|e| *e == 0.0));

        let (one, _) = setup(1, 1, 3);
        assert_eq!(resample_by_transition(&one, &mut rng), one);
    }

    #[test]
    fn episode_selection_is_uniform() {
        let mut counts = [0usize; 10];
        let mut rng = stream(5, 0);
        let rounds = 100_000;
        for _ in 0..rounds {
            for i in draw_episode_indices(10, &mut rng) {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / (rounds * 10) as f64 - 0.1).abs() < 0.002);
        }
    }

    #[test]
    fn distinct_episode_fraction_matches_occupancy_law() {
        let k = 500;
        let mut rng = stream(6, 0);
        let trials = 200;
        let mut total = 0.0;
        for _ in 0..trials {
            let mut seen = vec![false; k];
            draw_episode_indices(k, &mut rng).into_iter().for_each(|i| seen[i] = true);
            total += seen.iter().filter(|s| **s).count() as f64;
        }
        let expected = k as f64 * (1.0 - (1.0 - 1.0 / k as f64).powi(k as i32));
        assert!((total / trials as f64 / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn transition_selection_is_uniform() {
        let (data, _) = setup(4, 5, 1);
        let n = data.n_transitions();
        let mut counts = vec![0usize; n];
        let plan = ResamplePlan::new(Scheme::ByTransition, 1, 3).unwrap();
        let rounds = 50_000;
        for b in 0..rounds {
            for i in replicate_draw(&plan, 4, 5, b).resample {
                counts[i] += 1;
            }
        }
        let total = (rounds * n) as f64;
        let sd = ((1.0 / n as f64) * (1.0 - 1.0 / n as f64) / total).sqrt();
        for c in counts {
            assert!((c as f64 / total - 1.0 / n as f64).abs() < 5.0 * sd);
        }
        let mut rng = stream(3, 0);
        let pseudo = resample_by_transition(&data, &mut rng);
        assert_eq!((pseudo.n_episodes(), pseudo.horizon()), (4, 5));
    }

    #[test]
    fn subset_draws_are_distinct_and_uniform() {
        let mut rng = stream(8, 0);
        let mut counts = [0usize; 12];
        for _ in 0..60_000 {
            let s = draw_subset(12, 4, &mut rng);
            let mut sorted = s.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
            s.into_iter().for_each(|i| counts[i] += 1);
        }
        for c in counts {
            assert!((c as f64 / 60_000.0 - 4.0 / 12.0).abs() < 0.01);
        }
    }

    #[test]
    fn full_subset_reduces_to_vanilla_bootstrap() {
        let (data, cfg) = setup(20, 4, 2);
        let sub = subsampled_bootstrap(&data, 20, 50, &cfg, 77).unwrap();
        let van = run_bootstrap(&data, &cfg, &ResamplePlan::new(Scheme::ByEpisode, 50, 77).unwrap()).unwrap();
        assert_eq!(sub.errors, van.errors);
        assert!(sub.centers.iter().all(|c| *c == sub.point_estimate));
    }

    #[test]
    fn errors_match_direct_resample_and_refit() {
        let (data, cfg) = setup(15, 3, 4);
        let plan = ResamplePlan::new(Scheme::ByEpisode, 10, 5).unwrap();
        let out = run_bootstrap(&data, &cfg, &plan).unwrap();
        let point = fqe_value(&data, &cfg).unwrap();
        assert!((out.point_estimate - point).abs() < 1e-12);
        for b in 0..10 {
            let mut rng = stream(5, b as u64);
            let star = fqe_value(&resample_by_episode(&data, &mut rng), &cfg).unwrap();
            assert!((out.errors[b] - (star - point)).abs() < 1e-10);
        }

        let plan = ResamplePlan::new(Scheme::ByTransition, 10, 5).unwrap();
        let out = run_bootstrap(&data, &cfg, &plan).unwrap();
        for b in 0..10 {
            let draw = replicate_draw(&plan, 15, 3, b);
            let eps = data.episodes();
            let picks: Vec<_> = draw.resample.iter().map(|&i| eps[i / 3].transitions()[i % 3].clone()).collect();
            let pseudo = data
                .with_episodes(picks.chunks(3).map(|c| Arc::new(Episode::pooled(c.to_vec()).unwrap())).collect())
                .unwrap();
            let star = fqe_value(&pseudo, &cfg).unwrap();
            assert!((out.errors[b] - (star - point)).abs() < 1e-10);
        }

        let plan = ResamplePlan::new(Scheme::Subsampled(4), 10, 5).unwrap();
        let out = run_bootstrap(&data, &cfg, &plan).unwrap();
        for b in 0..10 {
            let draw = replicate_draw(&plan, 15, 3, b);
            let subset = draw.subset.unwrap();
            let pick = |idx: &[usize]| data.with_episodes(idx.iter().map(|&i| data.episodes()[i].clone()).collect()).unwrap();
            let center = fqe_value(&pick(&subset), &cfg).unwrap();
            let star = fqe_value(&pick(&draw.resample), &cfg).unwrap();
            assert!((out.centers[b] - center).abs() < 1e-10);
            assert!((out.errors[b] - (star - center)).abs() < 1e-10);
            assert!(draw.resample.iter().all(|i| subset.contains(i)));
        }
    }

    #[test]
    fn reproducible_and_order_independent() {
        let (data, cfg) = setup(30, 3, 7);
        let plan = ResamplePlan::new(Scheme::Subsampled(6), 40, 1).unwrap();
        let a = run_bootstrap(&data, &cfg, &plan).unwrap();
        let b = run_bootstrap(&data, &cfg, &plan).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_bootstrap(&data, &cfg, &plan).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn vanilla_reduction_in_distribution() {
        let (data, cfg) = setup(25, 3, 11);
        let b = 5000;
        let sub = subsampled_bootstrap(&data, 25, b, &cfg, 1).unwrap();
        let point = sub.point_estimate;
        let direct: Vec<f64> = (0..b)
            .map(|i| {
                let mut rng = stream(987_654, i as u64);
                fqe_value(&resample_by_episode(&data, &mut rng), &cfg).unwrap() - point
            })
            .collect();
        let ks = ks_two_sample(&sub.errors, &direct).unwrap();
        assert!(ks < 0.05, "KS = {ks}");
    }

    #[test]
    fn paired_runs_share_token() {
        let (data, cfg) = setup(10, 3, 1);
        let plan = ResamplePlan::new(Scheme::ByEpisode, 5, 2).unwrap();
        let other = cfg.with_regularization(Regularization::Fixed(0.5)).unwrap();
        let out = paired_bootstrap(&data, &[cfg, other], &plan).unwrap();
        assert_eq!(out[0].token, out[1].token);
        let plan2 = ResamplePlan::new(Scheme::ByEpisode, 5, 3).unwrap();
        assert_ne!(PlanToken::new(&plan, &data), PlanToken::new(&plan2, &data));
    }

    #[test]
    fn csv_layout() {
        let (data, cfg) = setup(9, 2, 1);
        let out = subsampled_bootstrap(&data, 3, 4, &cfg, 8).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# scheme=subsampled B=4 s=3 K=9 H=2 seed=8 point_estimate="));
        assert_eq!(lines[1], "replicate,error,center");
        assert_eq!(lines.len(), 6);
        let _ = chain().n_actions();
    }
}

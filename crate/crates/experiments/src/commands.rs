//! One function per CLI subcommand. Each writes its tables into the
//! configured output directory, finishes a manifest, and returns a typed
//! summary so callers can check results without reparsing CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use fqe_core::bootstrap::{paired_bootstrap, run_bootstrap, subset_size, BootstrapErrors, ResamplePlan, Scheme};
use fqe_core::fqe::{fit_fqe, fqe_value, plugin_value, FitReport, FqeConfig};
use fqe_core::inference::{
    asymptotic_variance_plugin, bernstein_ci, bootstrap_correlation, bootstrap_variance, empirical_coverage,
    ks_two_sample, monte_carlo_errors, pearson, percentile_ci, percentile_interval, sample_variance, CiMethod,
    ConfidenceInterval, CoverageConfig, CoverageMethod, InferenceReport,
};
use fqe_core::mdp::{generate_episodes, read_dataset, write_dataset, Dataset};
use fqe_core::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, MethodSpec};
use crate::error::{ExpError, ExpResult};
use crate::output::{Output, RunManifest};
use crate::setup::{Problem, Truth};

const TAG_DATA: u64 = 0x64617461;
const TAG_BOOT: u64 = 0x626f6f74;
const TAG_MC: u64 = 0x6d63;
const TAG_TRUTH: u64 = 0x7472;
const TAG_COVER: u64 = 0x636f76;

fn seed_for(cfg: &ExperimentConfig, tag: u64, k: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, tag), k as u64)
}

fn fmt(x: f64) -> String {
    x.to_string()
}

fn truth_of(problem: &Problem, cfg: &ExperimentConfig, out: &mut Output, target: &fqe_core::mdp::Policy) -> ExpResult<Truth> {
    let seed = derive_seed(cfg.seed, TAG_TRUTH);
    out.seed("truth", seed);
    out.time("truth", || problem.truth(target, cfg.truth_rollouts, seed))
}

fn collect_dataset(problem: &Problem, cfg: &ExperimentConfig, k: usize, out: &mut Output) -> ExpResult<Dataset> {
    let seed = seed_for(cfg, TAG_DATA, k);
    out.seed(format!("data_k{k}"), seed);
    Ok(out.time("collect", || generate_episodes(problem.env.as_ref(), &problem.behavior, k, cfg.horizon, seed))?)
}

#[derive(Clone, Debug, Serialize)]
pub struct CollectSummary {
    pub files: Vec<PathBuf>,
    pub manifest: RunManifest,
}

pub fn run_collect(cfg: &ExperimentConfig) -> ExpResult<CollectSummary> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let mut files = Vec::new();
    for &k in &cfg.k_schedule {
        let data = collect_dataset(&problem, cfg, k, &mut out)?;
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &data)?;
        files.push(out.write(&format!("dataset_k{k}.txt"), &bytes)?);
    }
    let manifest = out.finish("collect", cfg)?;
    Ok(CollectSummary { files, manifest })
}

pub fn load_dataset(path: &std::path::Path) -> ExpResult<Dataset> {
    let file = File::open(path).map_err(|e| ExpError::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        fqe_core::FqeError::Io(m) => ExpError::Io { path: path.display().to_string(), message: m },
        other => ExpError::Core(other),
    })
}

pub fn save_dataset(path: &std::path::Path, data: &Dataset) -> ExpResult<()> {
    let file = File::create(path).map_err(|e| ExpError::io(path, e))?;
    write_dataset(BufWriter::new(file), data)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct FqeSummary {
    pub fit: FitReport,
    pub plugin_value: f64,
    pub truth: f64,
    pub inference: InferenceReport,
    pub bernstein: ConfidenceInterval,
}

fn bootstrap_plan(cfg: &ExperimentConfig, k: usize, seed: u64) -> ExpResult<ResamplePlan> {
    Ok(ResamplePlan::new(Scheme::Subsampled(subset_size(k, cfg.gamma)?), cfg.replicates.max(1), seed)?)
}

/// Fits one dataset (read from `dataset` or freshly collected at the first
/// scheduled K) and reports point estimate, bootstrap inference, the
/// plug-in variance and the Bernstein interval.
pub fn run_fqe(cfg: &ExperimentConfig) -> ExpResult<FqeSummary> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let data = match &cfg.dataset {
        Some(path) => load_dataset(path)?,
        None => collect_dataset(&problem, cfg, cfg.k_schedule[0], &mut out)?,
    };
    let fq = problem.fqe_config(&problem.target, cfg.seed)?;
    let fit = out.time("fit", || fit_fqe(&data, &fq))?;
    let (plug, _) = plugin_value(&data, &fq)?;
    let sigma2 = asymptotic_variance_plugin(&data, &fit)?;
    let seed = seed_for(cfg, TAG_BOOT, data.n_episodes());
    out.seed("bootstrap", seed);
    let plan = bootstrap_plan(cfg, data.n_episodes(), seed)?;
    let boot = out.time("bootstrap", || run_bootstrap(&data, &fq, &plan))?;
    let mut inference = InferenceReport::from_errors(&boot, cfg.delta)?;
    inference.sigma2_plugin = Some(sigma2);
    let bernstein = bernstein_ci(&data, &fit, cfg.delta, problem.reward_range())?;
    let truth = truth_of(&problem, cfg, &mut out, &problem.target)?.value();
    let summary = FqeSummary { fit: fit.report(), plugin_value: plug, truth, inference, bernstein };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| ExpError::io(&cfg.out, e))?;
    out.write("fqe_report.json", json.as_bytes())?;
    write_errors(&mut out, "bootstrap_errors.csv", &boot)?;
    out.finish("fqe", cfg)?;
    Ok(summary)
}

fn write_errors(out: &mut Output, name: &str, boot: &BootstrapErrors) -> ExpResult<()> {
    let mut bytes = Vec::new();
    boot.write_csv(&mut bytes)?;
    out.write(name, &bytes)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct DistributionSummary {
    pub n_episodes: usize,
    pub ks_by_episode: f64,
    pub ks_by_transition: f64,
    pub var_truth: f64,
    pub var_by_episode: f64,
    pub var_by_transition: f64,
}

/// Histogram densities of several samples on shared equal-width bins.
pub fn histograms(samples: &[&[f64]], bins: usize) -> (Vec<(f64, f64)>, Vec<Vec<f64>>) {
    let lo = samples.iter().flat_map(|s| s.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().flat_map(|s| s.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..bins).map(|i| (lo + i as f64 * width, lo + (i + 1) as f64 * width)).collect();
    let dens = samples
        .iter()
        .map(|s| {
            let mut c = vec![0.0; bins];
            for v in s.iter() {
                let i = (((v - lo) / width) as usize).min(bins - 1);
                c[i] += 1.0;
            }
            c.into_iter().map(|x| x / (s.len() as f64 * width)).collect()
        })
        .collect();
    (edges, dens)
}

fn mc_errors(problem: &Problem, cfg: &ExperimentConfig, fq: &FqeConfig, k: usize, truth: f64, out: &mut Output) -> ExpResult<Vec<f64>> {
    let seed = seed_for(cfg, TAG_MC, k);
    out.seed(format!("monte_carlo_k{k}"), seed);
    Ok(out.time("monte_carlo", || {
        monte_carlo_errors(problem.env.as_ref(), &problem.behavior, fq, k, cfg.mc_datasets, truth, seed)
    })?)
}

/// Error distributions at the first scheduled K: Monte Carlo truth against
/// the episode and transition bootstraps of one dataset.
pub fn run_distribution(cfg: &ExperimentConfig) -> ExpResult<DistributionSummary> {
    let problem = Problem::build(cfg)?;
    if problem.env.as_tabular().is_none() {
        return Err(fqe_core::FqeError::UnsupportedEnvironment(problem.env.name().to_string()).into());
    }
    let mut out = Output::create(&cfg.out)?;
    let k = cfg.k_schedule[0];
    let fq = problem.fqe_config(&problem.target, cfg.seed)?;
    let truth = truth_of(&problem, cfg, &mut out, &problem.target)?.value();
    let mc = mc_errors(&problem, cfg, &fq, k, truth, &mut out)?;
    let data = collect_dataset(&problem, cfg, k, &mut out)?;
    let seed = seed_for(cfg, TAG_BOOT, k);
    out.seed("bootstrap", seed);
    let ep = out.time("bootstrap", || {
        run_bootstrap(&data, &fq, &ResamplePlan::new(Scheme::ByEpisode, cfg.replicates.max(1), seed)?)
    })?;
    let tr = out.time("bootstrap", || {
        run_bootstrap(&data, &fq, &ResamplePlan::new(Scheme::ByTransition, cfg.replicates.max(1), seed)?)
    })?;
    let (edges, dens) = histograms(&[&mc, &ep.errors, &tr.errors], cfg.bins);
    let rows: Vec<Vec<String>> = edges
        .iter()
        .enumerate()
        .map(|(i, (a, b))| vec![fmt(*a), fmt(*b), fmt(dens[0][i]), fmt(dens[1][i]), fmt(dens[2][i])])
        .collect();
    out.csv(
        "distribution.csv",
        &["bin_lower", "bin_upper", "truth_density", "by_episode_density", "by_transition_density"],
        &rows,
    )?;
    let summary = DistributionSummary {
        n_episodes: k,
        ks_by_episode: ks_two_sample(&ep.errors, &mc)?,
        ks_by_transition: ks_two_sample(&tr.errors, &mc)?,
        var_truth: variance_or_zero(&mc),
        var_by_episode: variance_or_zero(&ep.errors),
        var_by_transition: variance_or_zero(&tr.errors),
    };
    out.csv(
        "distribution_summary.csv",
        &["k", "ks_by_episode", "ks_by_transition", "var_truth", "var_by_episode", "var_by_transition"],
        &[vec![
            k.to_string(),
            fmt(summary.ks_by_episode),
            fmt(summary.ks_by_transition),
            fmt(summary.var_truth),
            fmt(summary.var_by_episode),
            fmt(summary.var_by_transition),
        ]],
    )?;
    out.finish("distribution", cfg)?;
    Ok(summary)
}

fn variance_or_zero(x: &[f64]) -> f64 {
    sample_variance(x).unwrap_or(0.0)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CoverageRow {
    pub n_episodes: usize,
    pub method: String,
    pub coverage: f64,
    pub mean_width: f64,
    pub trials: usize,
}

/// Coverage and mean width of each configured interval method at each K.
pub fn run_coverage(cfg: &ExperimentConfig) -> ExpResult<Vec<CoverageRow>> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let fq = problem.fqe_config(&problem.target, cfg.seed)?;
    let truth = truth_of(&problem, cfg, &mut out, &problem.target)?.value();
    let mut rows = Vec::new();
    for &k in &cfg.k_schedule {
        let seed = seed_for(cfg, TAG_COVER, k);
        out.seed(format!("coverage_k{k}"), seed);
        for &m in &cfg.methods {
            let method = match m {
                MethodSpec::Vanilla => CoverageMethod::Bootstrap { scheme: Scheme::ByEpisode, replicates: cfg.replicates },
                MethodSpec::Subsampled => CoverageMethod::Bootstrap {
                    scheme: Scheme::Subsampled(subset_size(k, cfg.gamma)?),
                    replicates: cfg.replicates,
                },
                MethodSpec::Bernstein => CoverageMethod::Bernstein { reward_range: problem.reward_range() },
                MethodSpec::Oracle => {
                    CoverageMethod::OracleMc { errors: Arc::new(mc_errors(&problem, cfg, &fq, k, truth, &mut out)?) }
                }
            };
            let cc = CoverageConfig {
                env: problem.env.clone(),
                behavior: problem.behavior.clone(),
                fqe: fq.clone(),
                n_episodes: k,
                trials: cfg.trials,
                delta: cfg.delta,
                truth,
                method,
                seed,
            };
            let res = out.time(&format!("coverage_{m}"), || empirical_coverage(&cc))?;
            rows.push(CoverageRow {
                n_episodes: k,
                method: m.to_string(),
                coverage: res.coverage,
                mean_width: res.mean_width,
                trials: res.trials,
            });
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n_episodes.to_string(), r.method.clone(), fmt(r.coverage), fmt(r.mean_width), r.trials.to_string()])
        .collect();
    out.csv("coverage.csv", &["k", "method", "coverage", "mean_width", "trials"], &table)?;
    out.finish("coverage", cfg)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BenchRow {
    pub n_episodes: usize,
    pub subset: usize,
    pub replicates: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    /// `(K, vanilla seconds / subsampled seconds)`.
    pub speedups: Vec<(usize, f64)>,
}

fn time_bootstrap(data: &Dataset, fq: &FqeConfig, s: usize, b: usize, seed: u64) -> ExpResult<f64> {
    if b == 0 {
        return Ok(0.0);
    }
    let plan = ResamplePlan::new(Scheme::Subsampled(s), b, seed)?;
    let start = Instant::now();
    run_bootstrap(data, fq, &plan)?;
    Ok(start.elapsed().as_secs_f64())
}

/// Wall-clock of the vanilla and subsampled bootstraps across the K
/// schedule, and of the vanilla bootstrap across the replicate schedule at
/// the largest K. Timings are not reproducible by nature.
pub fn run_bench(cfg: &ExperimentConfig) -> ExpResult<BenchSummary> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let fq = problem.fqe_config(&problem.target, cfg.seed)?;
    let mut rows = Vec::new();
    let mut speedups = Vec::new();
    let mut last = None;
    for &k in &cfg.k_schedule {
        let data = collect_dataset(&problem, cfg, k, &mut out)?;
        let seed = seed_for(cfg, TAG_BOOT, k);
        let s = subset_size(k, cfg.gamma)?;
        let full = time_bootstrap(&data, &fq, k, cfg.replicates, seed)?;
        let sub = time_bootstrap(&data, &fq, s, cfg.replicates, seed)?;
        rows.push(BenchRow { n_episodes: k, subset: k, replicates: cfg.replicates, seconds: full });
        rows.push(BenchRow { n_episodes: k, subset: s, replicates: cfg.replicates, seconds: sub });
        speedups.push((k, if sub > 0.0 { full / sub } else { f64::NAN }));
        last = Some(data);
    }
    if let Some(data) = last {
        let k = data.n_episodes();
        for &b in &cfg.replicate_schedule {
            let secs = time_bootstrap(&data, &fq, k, b, seed_for(cfg, TAG_BOOT, k))?;
            rows.push(BenchRow { n_episodes: k, subset: k, replicates: b, seconds: secs });
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n_episodes.to_string(), r.subset.to_string(), r.replicates.to_string(), fmt(r.seconds)])
        .collect();
    out.csv("runtime.csv", &["k", "subset_size", "replicates", "seconds"], &table)?;
    let sp: Vec<Vec<String>> = speedups.iter().map(|(k, x)| vec![k.to_string(), fmt(*x)]).collect();
    out.csv("speedup.csv", &["k", "vanilla_over_subsampled"], &sp)?;
    out.finish("bench", cfg)?;
    Ok(BenchSummary { rows, speedups })
}

#[derive(Clone, Debug, Serialize)]
pub struct C2Column {
    pub ci: ConfidenceInterval,
    pub variance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableC2 {
    pub n_episodes: usize,
    pub point_estimate: f64,
    pub truth_value: f64,
    pub truth: C2Column,
    pub by_episode: C2Column,
    pub by_transition: C2Column,
}

/// Interval and variance from the Monte Carlo error distribution and from
/// both bootstrap schemes. All intervals are centered at the estimate on
/// the one collected dataset, so they differ only through their error
/// quantiles.
pub fn run_table_c2(cfg: &ExperimentConfig) -> ExpResult<TableC2> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let k = cfg.k_schedule[0];
    let fq = problem.fqe_config(&problem.target, cfg.seed)?;
    let truth = truth_of(&problem, cfg, &mut out, &problem.target)?.value();
    let mc = mc_errors(&problem, cfg, &fq, k, truth, &mut out)?;
    let data = collect_dataset(&problem, cfg, k, &mut out)?;
    let seed = seed_for(cfg, TAG_BOOT, k);
    out.seed("bootstrap", seed);
    let b = cfg.replicates.max(2);
    let ep = out.time("bootstrap", || run_bootstrap(&data, &fq, &ResamplePlan::new(Scheme::ByEpisode, b, seed)?))?;
    let tr = out.time("bootstrap", || run_bootstrap(&data, &fq, &ResamplePlan::new(Scheme::ByTransition, b, seed)?))?;
    let point = ep.point_estimate;
    let table = TableC2 {
        n_episodes: k,
        point_estimate: point,
        truth_value: truth,
        truth: C2Column {
            ci: percentile_interval(point, &mc, cfg.delta, CiMethod::OracleMc)?,
            variance: sample_variance(&mc)?,
        },
        by_episode: C2Column { ci: percentile_ci(&ep, cfg.delta)?, variance: bootstrap_variance(&ep)? },
        by_transition: C2Column { ci: percentile_ci(&tr, cfg.delta)?, variance: bootstrap_variance(&tr)? },
    };
    let row = |name: &str, f: &dyn Fn(&C2Column) -> f64| {
        vec![name.to_string(), fmt(f(&table.truth)), fmt(f(&table.by_episode)), fmt(f(&table.by_transition))]
    };
    out.csv(
        "table_c2.csv",
        &["quantity", "true_distribution", "by_episode", "by_transition"],
        &[row("ci_lower", &|c| c.ci.lower), row("ci_upper", &|c| c.ci.upper), row("variance", &|c| c.variance)],
    )?;
    out.finish("table-c2", cfg)?;
    Ok(table)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CorrelationRow {
    pub n_episodes: usize,
    pub truth_correlation: f64,
    pub median_estimate: f64,
    pub median_abs_error: f64,
    pub trials: usize,
}

/// Bootstrap correlation between the values of `target` and `target2`
/// against the Monte Carlo correlation of the two estimates.
pub fn run_correlation(cfg: &ExperimentConfig) -> ExpResult<Vec<CorrelationRow>> {
    let problem = Problem::build(cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let configs = [problem.fqe_config(&problem.target, cfg.seed)?, problem.fqe_config(&problem.target2, cfg.seed)?];
    let mut rows = Vec::new();
    for &k in &cfg.k_schedule {
        let mc_seed = seed_for(cfg, TAG_MC, k);
        out.seed(format!("monte_carlo_k{k}"), mc_seed);
        let pairs = out.time("monte_carlo", || {
            (0..cfg.mc_datasets)
                .into_par_iter()
                .map(|i| {
                    let d = generate_episodes(problem.env.as_ref(), &problem.behavior, k, cfg.horizon, derive_seed(mc_seed, i as u64))?;
                    Ok((fqe_value(&d, &configs[0])?, fqe_value(&d, &configs[1])?))
                })
                .collect::<fqe_core::Result<Vec<_>>>()
        })?;
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let truth = pearson(&a, &b)?;
        let seed = seed_for(cfg, TAG_COVER, k);
        out.seed(format!("trials_k{k}"), seed);
        let mut est = out.time("bootstrap", || {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let d = generate_episodes(problem.env.as_ref(), &problem.behavior, k, cfg.horizon, derive_seed(seed, 2 * t as u64))?;
                    let plan = bootstrap_plan(cfg, k, derive_seed(seed, 2 * t as u64 + 1)).map_err(|e| match e {
                        ExpError::Core(c) => c,
                        other => fqe_core::FqeError::InvalidArgument(other.to_string()),
                    })?;
                    let runs = paired_bootstrap(&d, &configs, &plan)?;
                    bootstrap_correlation(&runs[0], &runs[1])
                })
                .collect::<fqe_core::Result<Vec<_>>>()
        })?;
        est.sort_by(f64::total_cmp);
        let mut errs: Vec<f64> = est.iter().map(|r| (r - truth).abs()).collect();
        errs.sort_by(f64::total_cmp);
        rows.push(CorrelationRow {
            n_episodes: k,
            truth_correlation: truth,
            median_estimate: median_sorted(&est),
            median_abs_error: median_sorted(&errs),
            trials: cfg.trials,
        });
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n_episodes.to_string(),
                fmt(r.truth_correlation),
                fmt(r.median_estimate),
                fmt(r.median_abs_error),
                r.trials.to_string(),
            ]
        })
        .collect();
    out.csv("correlation.csv", &["k", "truth_correlation", "median_estimate", "median_abs_error", "trials"], &table)?;
    out.finish("correlation", cfg)?;
    Ok(rows)
}

pub fn median_sorted(x: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { x[n / 2] } else { (x[n / 2 - 1] + x[n / 2]) / 2.0 }
}

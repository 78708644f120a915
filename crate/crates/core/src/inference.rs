//! Confidence intervals, variances and correlations from bootstrap errors,
//! plus the two model-based baselines: the plug-in asymptotic variance and
//! an empirical-Bernstein interval.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{run_bootstrap, BootstrapErrors, ResamplePlan, Scheme};
use crate::error::{invalid, FqeError, Result};
use crate::fqe::engine::PreparedData;
use crate::fqe::{fit_fqe, fqe_value, FqeConfig, FqeFit};
use crate::mdp::{generate_episodes, Dataset, Environment, Policy};
use crate::rng::derive_seed;

/// Quantile convention used by every percentile interval: linear
/// interpolation between order statistics at position `(n - 1) p`.
pub const QUANTILE_RULE: &str = "type7";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    PercentileBootstrap,
    Bernstein,
    OracleMc,
    Unbounded,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::PercentileBootstrap => "percentile_bootstrap",
            CiMethod::Bernstein => "bernstein",
            CiMethod::OracleMc => "oracle_mc",
            CiMethod::Unbounded => "unbounded",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: CiMethod,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceReport {
    pub point_estimate: f64,
    pub variance_estimate: f64,
    pub ci: ConfidenceInterval,
    pub quantile_rule: &'static str,
    pub sigma2_plugin: Option<f64>,
    pub correlation: Option<f64>,
}

impl InferenceReport {
    pub fn from_errors(errors: &BootstrapErrors, delta: f64) -> Result<Self> {
        Ok(InferenceReport {
            point_estimate: errors.point_estimate,
            variance_estimate: bootstrap_variance(errors)?,
            ci: percentile_ci(errors, delta)?,
            quantile_rule: QUANTILE_RULE,
            sigma2_plugin: None,
            correlation: None,
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Type-7 quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `[v - q_{1-delta/2}, v - q_{delta/2}]` from a sample of errors.
pub fn percentile_interval(point: f64, errors: &[f64], delta: f64, method: CiMethod) -> Result<ConfidenceInterval> {
    check_delta(delta)?;
    if errors.len() < 2 {
        return Err(invalid("percentile interval needs at least two errors"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        lower: point - quantile_sorted(&sorted, 1.0 - delta / 2.0),
        upper: point - quantile_sorted(&sorted, delta / 2.0),
        level: 1.0 - delta,
        method,
    })
}

pub fn percentile_ci(errors: &BootstrapErrors, delta: f64) -> Result<ConfidenceInterval> {
    percentile_interval(errors.point_estimate, &errors.errors, delta, CiMethod::PercentileBootstrap)
}

/// Unbiased sample variance, two-pass.
pub fn sample_variance(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(invalid("variance needs at least two values"));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64)
}

pub fn bootstrap_variance(errors: &BootstrapErrors) -> Result<f64> {
    sample_variance(&errors.errors)
}

/// Pearson correlation of two equally long sequences.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("correlation needs two sequences of equal length >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FqeError::UndefinedCorrelation("one sequence has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of two bootstrap runs that share resamples.
pub fn bootstrap_correlation(first: &BootstrapErrors, second: &BootstrapErrors) -> Result<f64> {
    if first.len() != second.len() {
        return Err(FqeError::Pairing(format!("replicate counts differ: {} vs {}", first.len(), second.len())));
    }
    if first.token != second.token {
        return Err(FqeError::Pairing("runs were drawn from different resample plans".into()));
    }
    pearson(&first.errors, &second.errors)
}

/// Plug-in estimate of the asymptotic variance of `sqrt(N) (v-hat - v)`.
///
/// With `S = Sigma-hat / N` and `u_h = S^{-1} nu-hat_h`, the double sum over
/// `(h1, h2)` collapses to `(1/N) sum_n (sum_h (u_h . phi_n) eps_{h,n})^2`,
/// which only pairs residuals of the same transition and is nonnegative by
/// construction.
pub fn asymptotic_variance_plugin(dataset: &Dataset, fit: &FqeFit) -> Result<f64> {
    if dataset.horizon() != fit.horizon() {
        return Err(invalid("dataset horizon differs from the fit"));
    }
    let n = dataset.n_transitions() as f64;
    let horizon = fit.horizon();
    let u: Vec<Vec<f64>> =
        fit.nu_hats().iter().map(|nu| (fit.sigma_solve(nu) * n).as_slice().to_vec()).collect();
    let w: Vec<&[f64]> = fit.weights.iter().map(|w| w.as_slice()).collect();
    let prepared = PreparedData::from_parts(dataset, fit.features(), fit.target());
    let total: f64 = prepared
        .episodes
        .par_iter()
        .map(|ep| {
            let mut acc = 0.0;
            for t in &ep.transitions {
                let mut s = 0.0;
                for h in 0..horizon {
                    let next = if h + 1 < horizon { t.next_pi.dot(w[h + 1]) } else { 0.0 };
                    let eps = t.phi.dot(w[h]) - t.reward - next;
                    s += t.phi.dot(&u[h]) * eps;
                }
                acc += s * s;
            }
            acc
        })
        .sum();
    Ok(total / n)
}

/// Empirical-Bernstein interval around the FQE estimate. `reward_range`
/// scales the per-step value envelope `H - h + 1` from unit rewards to the
/// environment's reward span.
pub fn bernstein_ci(dataset: &Dataset, fit: &FqeFit, delta: f64, reward_range: f64) -> Result<ConfidenceInterval> {
    check_delta(delta)?;
    if fit.lambda <= 0.0 {
        return Err(invalid("the Bernstein interval requires a positive ridge parameter"));
    }
    if !(reward_range > 0.0 && reward_range.is_finite()) {
        return Err(invalid(format!("reward range must be positive, got {reward_range}")));
    }
    let horizon = fit.horizon() as f64;
    let n = dataset.n_transitions() as f64;
    let d = fit.dim() as f64;
    let lambda = fit.lambda;
    let log_conf = (3.0 * n * n * horizon / delta).ln();
    let log_det = (1.0 + n / (lambda * d)).ln();
    let factor = (2.0 * lambda).sqrt() + 2.0 * (2.0 * d * log_det * log_conf).sqrt() + 4.0 / 3.0 * log_conf;
    let half: f64 = fit
        .nu_hats()
        .iter()
        .enumerate()
        .map(|(i, nu)| {
            let q = nu.dot(&fit.sigma_solve(nu)).max(0.0);
            (horizon - i as f64) * reward_range * q.sqrt() * factor
        })
        .sum();
    Ok(ConfidenceInterval {
        lower: fit.value - half,
        upper: fit.value + half,
        level: 1.0 - delta,
        method: CiMethod::Bernstein,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS statistic needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// How each trial's interval is built.
#[derive(Clone, Debug)]
pub enum CoverageMethod {
    Bootstrap { scheme: Scheme, replicates: usize },
    Bernstein { reward_range: f64 },
    /// Quantiles of `v-hat - v` from independent datasets.
    OracleMc { errors: Arc<Vec<f64>> },
    /// `(-inf, inf)`.
    Unbounded,
}

#[derive(Clone)]
pub struct CoverageConfig {
    pub env: Arc<dyn Environment>,
    pub behavior: Policy,
    pub fqe: FqeConfig,
    pub n_episodes: usize,
    pub trials: usize,
    pub delta: f64,
    pub truth: f64,
    pub method: CoverageMethod,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageResult {
    pub coverage: f64,
    pub mean_width: f64,
    pub trials: usize,
    pub hits: usize,
}

/// Seed of the fresh dataset in trial `t`.
pub fn trial_data_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, 2 * trial as u64)
}

fn trial_interval(cfg: &CoverageConfig, trial: usize) -> Result<ConfidenceInterval> {
    let horizon = cfg.fqe.horizon();
    let data = generate_episodes(cfg.env.as_ref(), &cfg.behavior, cfg.n_episodes, horizon, trial_data_seed(cfg.seed, trial))?;
    match &cfg.method {
        CoverageMethod::Bootstrap { scheme, replicates } => {
            let plan = ResamplePlan::new(*scheme, *replicates, derive_seed(cfg.seed, 2 * trial as u64 + 1))?;
            percentile_ci(&run_bootstrap(&data, &cfg.fqe, &plan)?, cfg.delta)
        }
        CoverageMethod::Bernstein { reward_range } => bernstein_ci(&data, &fit_fqe(&data, &cfg.fqe)?, cfg.delta, *reward_range),
        CoverageMethod::OracleMc { errors } => {
            percentile_interval(fqe_value(&data, &cfg.fqe)?, errors, cfg.delta, CiMethod::OracleMc)
        }
        CoverageMethod::Unbounded => Ok(ConfidenceInterval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            level: 1.0 - cfg.delta,
            method: CiMethod::Unbounded,
        }),
    }
}

/// Fraction of fresh datasets whose interval contains the true value, and
/// the mean interval width.
pub fn empirical_coverage(cfg: &CoverageConfig) -> Result<CoverageResult> {
    if cfg.trials == 0 {
        return Err(invalid("coverage needs at least one trial"));
    }
    check_delta(cfg.delta)?;
    let cis = (0..cfg.trials).into_par_iter().map(|t| trial_interval(cfg, t)).collect::<Result<Vec<_>>>()?;
    let hits = cis.iter().filter(|c| c.contains(cfg.truth)).count();
    Ok(CoverageResult {
        coverage: hits as f64 / cfg.trials as f64,
        mean_width: cis.iter().map(|c| c.width()).sum::<f64>() / cfg.trials as f64,
        trials: cfg.trials,
        hits,
    })
}

/// `v-hat(D_i) - v` over `n` independent datasets.
pub fn monte_carlo_errors(
    env: &dyn Environment,
    behavior: &Policy,
    fqe: &FqeConfig,
    n_episodes: usize,
    n: usize,
    truth: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let data = generate_episodes(env, behavior, n_episodes, fqe.horizon(), derive_seed(seed, i as u64))?;
            Ok(fqe_value(&data, fqe)? - truth)
        })
        .collect()
}

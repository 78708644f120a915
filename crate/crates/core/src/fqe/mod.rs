//! Fitted Q-Evaluation with linear function approximation.
//!
//! The regression objective is the unnormalized ridge loss
//! `sum_n (phi_n^T w - y_n)^2 + lambda |w|^2`, so `Sigma-hat = sum phi phi^T + lambda I`.
//! Normalizing the loss by `1/N` instead is the same estimator with ridge
//! `lambda / N`.

pub mod engine;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::features::FeatureMap;
use crate::mdp::{Dataset, InitialDistribution, Policy, State, Transition};
use crate::rng::{derive_seed, stream};

pub use engine::{PreparedData, PreparedEpisode, PreparedTransition};

/// Number of draws used to estimate `nu_1` from a sampling initial distribution.
pub const NU1_SAMPLES: usize = 10_000;

/// How the ridge parameter is chosen for a dataset of `N = K H` transitions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Regularization {
    Fixed(f64),
    /// `lambda = c N`.
    PerSample(f64),
}

impl Regularization {
    pub fn lambda(&self, n_transitions: usize) -> f64 {
        match *self {
            Regularization::Fixed(l) => l,
            Regularization::PerSample(c) => c * n_transitions as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = match *self {
            Regularization::Fixed(l) | Regularization::PerSample(l) => l,
        };
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid(format!("ridge parameter must be finite and >= 0, got {c}")));
        }
        Ok(())
    }
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::PerSample(1e-6)
    }
}

#[derive(Clone)]
pub struct FqeConfig {
    regularization: Regularization,
    horizon: usize,
    features: Arc<dyn FeatureMap>,
    target: Policy,
    nu1: DVector<f64>,
    nu1_samples: Option<usize>,
}

impl std::fmt::Debug for FqeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FqeConfig")
            .field("regularization", &self.regularization)
            .field("horizon", &self.horizon)
            .field("features", &self.features.describe())
            .field("nu1_samples", &self.nu1_samples)
            .finish()
    }
}

impl FqeConfig {
    /// `nu_1 = E_{s ~ xi_1}[phi^pi(s)]` is computed exactly for a discrete
    /// `initial`, otherwise from [`NU1_SAMPLES`] draws seeded by `seed`.
    pub fn new(
        features: Arc<dyn FeatureMap>,
        target: Policy,
        initial: &InitialDistribution,
        horizon: usize,
        regularization: Regularization,
        seed: u64,
    ) -> Result<Self> {
        regularization.validate()?;
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if features.n_actions() != target.n_actions() {
            return Err(invalid(format!(
                "feature map has {} actions but the target policy has {}",
                features.n_actions(),
                target.n_actions()
            )));
        }
        let d = features.dim();
        let mut nu1 = vec![0.0; d];
        let nu1_samples = match initial {
            InitialDistribution::Discrete(support) => {
                for &(s, p) in support {
                    features.pi_segment(&State::Discrete(s), &target).add_scaled_to(&mut nu1, p);
                }
                None
            }
            InitialDistribution::Sampler(_) => {
                let mut rng = stream(derive_seed(seed, 0x6e75_3100), 0);
                let w = 1.0 / NU1_SAMPLES as f64;
                for _ in 0..NU1_SAMPLES {
                    let s = initial.sample(&mut rng);
                    features.pi_segment(&s, &target).add_scaled_to(&mut nu1, w);
                }
                Some(NU1_SAMPLES)
            }
        };
        Ok(FqeConfig {
            regularization,
            horizon,
            features,
            target,
            nu1: DVector::from_vec(nu1),
            nu1_samples,
        })
    }

    pub fn with_regularization(&self, regularization: Regularization) -> Result<Self> {
        regularization.validate()?;
        Ok(FqeConfig { regularization, ..self.clone() })
    }

    pub fn regularization(&self) -> Regularization {
        self.regularization
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn features(&self) -> &dyn FeatureMap {
        self.features.as_ref()
    }

    pub fn features_arc(&self) -> &Arc<dyn FeatureMap> {
        &self.features
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    pub fn nu1(&self) -> &DVector<f64> {
        &self.nu1
    }

    /// Monte Carlo sample count behind `nu1`, `None` when exact.
    pub fn nu1_samples(&self) -> Option<usize> {
        self.nu1_samples
    }

    pub fn dim(&self) -> usize {
        self.nu1.len()
    }

    fn check(&self, dataset: &Dataset) -> Result<()> {
        if dataset.horizon() != self.horizon {
            return Err(invalid(format!(
                "dataset horizon {} does not match configured horizon {}",
                dataset.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Output of a linear FQE fit.
#[derive(Clone, Debug)]
pub struct FqeFit {
    /// `weights[h - 1]` is `w_h`.
    pub weights: Vec<DVector<f64>>,
    pub sigma_hat: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    pub r_hat: DVector<f64>,
    pub nu1: DVector<f64>,
    pub value: f64,
    pub lambda: f64,
    pub n_transitions: usize,
    pub nu1_samples: Option<usize>,
    sigma_chol: Cholesky<f64, Dyn>,
    features: Arc<dyn FeatureMap>,
    target: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub value: f64,
    pub lambda: f64,
    pub dim: usize,
    pub horizon: usize,
    pub n_transitions: usize,
    pub condition_number: f64,
}

impl FqeFit {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.nu1.len()
    }

    pub fn features(&self) -> &dyn FeatureMap {
        self.features.as_ref()
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    /// `w_h` for `1 <= h <= H + 1`, the last being zero.
    pub fn weight(&self, h: usize) -> Option<DVector<f64>> {
        match h {
            0 => None,
            h if h <= self.horizon() => Some(self.weights[h - 1].clone()),
            h if h == self.horizon() + 1 => Some(DVector::zeros(self.dim())),
            _ => None,
        }
    }

    /// `Q-hat_h(s, a)`.
    pub fn q_value(&self, h: usize, state: &State, action: usize) -> Result<f64> {
        let w = self.weight(h).ok_or_else(|| invalid(format!("step {h} outside 1..={}", self.horizon() + 1)))?;
        Ok(self.features.segment(state, action).dot(w.as_slice()))
    }

    /// `Sigma-hat^{-1} x`.
    pub fn sigma_solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sigma_chol.solve(x)
    }

    /// `nu-hat_1, ..., nu-hat_H`.
    pub fn nu_hats(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.horizon());
        let mut nu = self.nu1.clone();
        for h in 0..self.horizon() {
            if h > 0 {
                nu = self.m_hat.tr_mul(&nu);
            }
            out.push(nu.clone());
        }
        out
    }

    /// Ratio of extreme eigenvalues of `Sigma-hat`.
    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.sigma_hat.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if min <= 0.0 { f64::INFINITY } else { max / min }
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            value: self.value,
            lambda: self.lambda,
            dim: self.dim(),
            horizon: self.horizon(),
            n_transitions: self.n_transitions,
            condition_number: self.condition_number(),
        }
    }
}

struct Model {
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    m_hat: DMatrix<f64>,
    r_hat: DVector<f64>,
}

fn model(items: &engine::Weighted<'_>, dim: usize, lambda: f64) -> Result<Model> {
    let (sigma, cross, b) = engine::moments(items, dim, lambda);
    let chol = engine::factor(sigma.clone(), dim)?;
    let m_hat = chol.solve(&cross);
    let r_hat = chol.solve(&b);
    Ok(Model { sigma, chol, m_hat, r_hat })
}

/// Linear FQE: `H` backward ridge regressions on targets
/// `y_n = r_n + phi^pi(s'_n)^T w_{h+1}`.
pub fn fit_fqe(dataset: &Dataset, config: &FqeConfig) -> Result<FqeFit> {
    config.check(dataset)?;
    let prepared = PreparedData::new(dataset, config);
    fit_prepared(&prepared, config, dataset.n_transitions())
}

pub(crate) fn fit_prepared(prepared: &PreparedData, config: &FqeConfig, n_transitions: usize) -> Result<FqeFit> {
    let dim = config.dim();
    let lambda = config.regularization.lambda(n_transitions);
    let items = prepared.all();
    let weights = engine::weights_by_targets(&items, dim, config.horizon, lambda)?;
    let model = model(&items, dim, lambda)?;
    let value = config.nu1.dot(&weights[0]);
    Ok(FqeFit {
        weights,
        sigma_hat: model.sigma,
        m_hat: model.m_hat,
        r_hat: model.r_hat,
        nu1: config.nu1.clone(),
        value,
        lambda,
        n_transitions,
        nu1_samples: config.nu1_samples,
        sigma_chol: model.chol,
        features: config.features.clone(),
        target: config.target.clone(),
    })
}

/// Model-based plug-in estimator `nu_1^T sum_{h<H} M-hat^h R-hat`,
/// evaluated forward through `nu_h`. The returned fit carries weights from
/// `w_h = R-hat + M-hat w_{h+1}`.
pub fn plugin_value(dataset: &Dataset, config: &FqeConfig) -> Result<(f64, FqeFit)> {
    config.check(dataset)?;
    let dim = config.dim();
    let n_transitions = dataset.n_transitions();
    let lambda = config.regularization.lambda(n_transitions);
    let prepared = PreparedData::new(dataset, config);
    let items = prepared.all();
    let model = model(&items, dim, lambda)?;

    let mut value = 0.0;
    let mut nu = config.nu1.clone();
    for h in 0..config.horizon {
        if h > 0 {
            nu = model.m_hat.tr_mul(&nu);
        }
        value += nu.dot(&model.r_hat);
    }

    let mut weights = vec![DVector::zeros(dim); config.horizon];
    let mut next = DVector::zeros(dim);
    for h in (0..config.horizon).rev() {
        next = &model.r_hat + &model.m_hat * &next;
        weights[h] = next.clone();
    }
    let fit_value = config.nu1.dot(&weights[0]);
    let fit = FqeFit {
        weights,
        sigma_hat: model.sigma,
        m_hat: model.m_hat,
        r_hat: model.r_hat,
        nu1: config.nu1.clone(),
        value: fit_value,
        lambda,
        n_transitions,
        nu1_samples: config.nu1_samples,
        sigma_chol: model.chol,
        features: config.features.clone(),
        target: config.target.clone(),
    };
    Ok((value, fit))
}

/// FQE value alone, skipping the full-dimension model.
pub fn fqe_value(dataset: &Dataset, config: &FqeConfig) -> Result<f64> {
    config.check(dataset)?;
    let prepared = PreparedData::new(dataset, config);
    let lambda = config.regularization.lambda(dataset.n_transitions());
    engine::value_aggregated(&prepared.all(), &config.nu1, config.horizon, lambda)
}

/// `nu-hat_h^T = nu_1^T M-hat^{h-1}`.
pub fn nu_hat(fit: &FqeFit, h: usize) -> Result<DVector<f64>> {
    if h == 0 || h > fit.horizon() {
        return Err(invalid(format!("step {h} outside 1..={}", fit.horizon())));
    }
    let mut nu = fit.nu1.clone();
    for _ in 1..h {
        nu = fit.m_hat.tr_mul(&nu);
    }
    Ok(nu)
}

/// `phi(s, a)^T w_h - (r + phi^pi(s')^T w_{h+1})` with `w_{H+1} = 0`.
pub fn bellman_residual(fit: &FqeFit, transition: &Transition, h: usize) -> Result<f64> {
    if h == 0 || h > fit.horizon() {
        return Err(invalid(format!("step {h} outside 1..={}", fit.horizon())));
    }
    let q = fit.features.segment(&transition.state, transition.action).dot(fit.weights[h - 1].as_slice());
    let next = if h == fit.horizon() {
        0.0
    } else {
        fit.features.pi_segment(&transition.next_state, &fit.target).dot(fit.weights[h].as_slice())
    };
    Ok(q - (transition.reward + next))
}

//! Ridge-regression machinery shared by FQE fits and bootstrap replicates.
//!
//! A dataset is first *prepared*: every informative transition is reduced to
//! its feature segment `phi(s, a)`, its next-state policy average
//! `phi^pi(s')` and its reward. Padding transitions have zero features and
//! are dropped, since they add nothing to any regression sum.
//!
//! Solves run over the *active* coordinates only, i.e. those where some
//! `phi(s, a)` in the weighted sample is nonzero. Every other coordinate
//! gets a zero right-hand side and a `lambda` diagonal, so its weight is
//! exactly zero and it can be left out of the system. This is what makes a
//! fit on `s` distinct episodes cheaper than a fit on `K`.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::FqeConfig;
use crate::error::{FqeError, Result};
use crate::features::{FeatureMap, Segment};
use crate::mdp::{Dataset, Policy, State};

#[derive(Clone, Debug)]
pub struct PreparedTransition {
    pub phi: Segment,
    pub next_pi: Segment,
    pub reward: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PreparedEpisode {
    pub transitions: Vec<PreparedTransition>,
}

/// A dataset reduced to the quantities linear FQE needs.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub episodes: Vec<PreparedEpisode>,
    pub horizon: usize,
    /// For pooled index `k * H + h`, the position of that transition within
    /// `episodes[k]`, or `None` for padding.
    pub slots: Vec<Option<u32>>,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, config: &FqeConfig) -> Self {
        PreparedData::from_parts(dataset, config.features(), config.target())
    }

    pub fn from_parts(dataset: &Dataset, features: &dyn FeatureMap, target: &Policy) -> Self {
        let mut memo: HashMap<usize, Segment> = HashMap::new();
        let mut next_pi = |s: &State| -> Segment {
            match (features.memoizable(), s) {
                (true, State::Discrete(i)) => {
                    memo.entry(*i).or_insert_with(|| features.pi_segment(s, target)).clone()
                }
                _ => features.pi_segment(s, target),
            }
        };
        let mut slots = Vec::with_capacity(dataset.n_transitions());
        let mut episodes = Vec::with_capacity(dataset.n_episodes());
        for ep in dataset.episodes() {
            let mut transitions = Vec::new();
            for t in ep.transitions() {
                let phi = features.segment(&t.state, t.action);
                if phi.is_empty() {
                    slots.push(None);
                    continue;
                }
                slots.push(Some(transitions.len() as u32));
                transitions.push(PreparedTransition { phi, next_pi: next_pi(&t.next_state), reward: t.reward });
            }
            episodes.push(PreparedEpisode { transitions });
        }
        PreparedData { episodes, horizon: dataset.horizon(), slots }
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Every informative transition with unit weight.
    pub fn all(&self) -> Vec<(&PreparedTransition, f64)> {
        self.episodes.iter().flat_map(|e| e.transitions.iter().map(|t| (t, 1.0))).collect()
    }

    /// The transition at pooled index `n`, `None` for padding.
    pub fn pooled(&self, n: usize) -> Option<&PreparedTransition> {
        self.slots[n].map(|i| &self.episodes[n / self.horizon].transitions[i as usize])
    }

    /// Transitions of episodes weighted by multiplicity.
    pub fn weighted(&self, counts: &[(usize, f64)]) -> Vec<(&PreparedTransition, f64)> {
        counts
            .iter()
            .flat_map(|&(k, w)| self.episodes[k].transitions.iter().map(move |t| (t, w)))
            .collect()
    }
}

pub type Weighted<'a> = [(&'a PreparedTransition, f64)];

const INACTIVE: u32 = u32::MAX;

/// Mapping from full coordinates to the compact active set.
struct Compact {
    map: Vec<u32>,
    len: usize,
}

impl Compact {
    fn new(items: &Weighted<'_>, dim: usize) -> Self {
        let mut active = vec![false; dim];
        for (t, _) in items {
            for (i, v) in t.phi.values.iter().enumerate() {
                if *v != 0.0 {
                    active[t.phi.offset + i] = true;
                }
            }
        }
        let mut map = vec![INACTIVE; dim];
        let mut len = 0;
        for (i, a) in active.iter().enumerate() {
            if *a {
                map[i] = len as u32;
                len += 1;
            }
        }
        Compact { map, len }
    }

    fn entries<'s>(&'s self, seg: &'s Segment) -> impl Iterator<Item = (usize, f64)> + 's {
        seg.values
            .iter()
            .enumerate()
            .filter_map(move |(i, v)| {
                let c = self.map[seg.offset + i];
                (c != INACTIVE).then_some((c as usize, *v))
            })
    }
}

/// Rank of a symmetric positive semidefinite matrix.
pub(crate) fn psd_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let tol = sv.max() * (m.nrows() as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|s| **s > tol).count()
}

/// Factorizes a symmetric matrix, reporting rank deficiency relative to `dim`.
pub(crate) fn factor(m: DMatrix<f64>, dim: usize) -> Result<Cholesky<f64, Dyn>> {
    let backup = m.clone();
    match Cholesky::new(m) {
        Some(c) if psd_rank_ok(&c) => Ok(c),
        _ => Err(FqeError::SingularMatrix { rank: psd_rank(&backup), dim }),
    }
}

fn psd_rank_ok(c: &Cholesky<f64, Dyn>) -> bool {
    let l = c.l_dirty();
    let diag = l.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    diag.iter().all(|v| v.is_finite() && *v > max * 1e-12)
}

struct CompactSystem {
    compact: Compact,
    chol: Cholesky<f64, Dyn>,
}

fn compact_system(items: &Weighted<'_>, dim: usize, lambda: f64) -> Result<CompactSystem> {
    let compact = Compact::new(items, dim);
    if lambda == 0.0 && compact.len < dim {
        // Untouched coordinates leave Sigma-hat singular without a ridge.
        let mut gram = DMatrix::zeros(compact.len, compact.len);
        accumulate_gram(items, &compact, &mut gram);
        return Err(FqeError::SingularMatrix { rank: psd_rank(&gram), dim });
    }
    let n = compact.len;
    let mut gram = DMatrix::from_diagonal_element(n, n, lambda);
    accumulate_gram(items, &compact, &mut gram);
    let chol = factor(gram, dim)?;
    Ok(CompactSystem { compact, chol })
}

fn accumulate_gram(items: &Weighted<'_>, compact: &Compact, gram: &mut DMatrix<f64>) {
    let n = compact.len;
    let g = gram.as_mut_slice();
    let mut idx: Vec<(usize, f64)> = Vec::new();
    for (t, w) in items {
        idx.clear();
        idx.extend(compact.entries(&t.phi));
        for &(j, vj) in &idx {
            let col = &mut g[j * n..(j + 1) * n];
            let s = w * vj;
            for &(i, vi) in &idx {
                col[i] += s * vi;
            }
        }
    }
}

fn scatter(compact: &Compact, src: &DVector<f64>, dst: &mut [f64]) {
    for (full, c) in compact.map.iter().enumerate() {
        dst[full] = if *c == INACTIVE { 0.0 } else { src[*c as usize] };
    }
}

/// FQE by explicit regression targets. Returns `w_1, ..., w_H` in full
/// coordinates.
pub(crate) fn weights_by_targets(
    items: &Weighted<'_>,
    dim: usize,
    horizon: usize,
    lambda: f64,
) -> Result<Vec<DVector<f64>>> {
    let sys = compact_system(items, dim, lambda)?;
    let n = sys.compact.len;
    let mut next = vec![0.0; dim];
    let mut out = vec![DVector::zeros(dim); horizon];
    let mut rhs = DVector::zeros(n);
    for h in (0..horizon).rev() {
        rhs.fill(0.0);
        for (t, w) in items {
            let y = t.reward + t.next_pi.dot(&next);
            for (i, v) in sys.compact.entries(&t.phi) {
                rhs[i] += w * y * v;
            }
        }
        sys.chol.solve_mut(&mut rhs);
        scatter(&sys.compact, &rhs, &mut next);
        out[h] = DVector::from_column_slice(&next);
    }
    Ok(out)
}

/// FQE value with the regression right-hand side aggregated once into
/// `b = sum w r phi` and `C = sum w phi phi_pi'^T`, restricted to active
/// coordinates. Used for bootstrap replicates.
pub(crate) fn value_aggregated(items: &Weighted<'_>, nu1: &DVector<f64>, horizon: usize, lambda: f64) -> Result<f64> {
    let dim = nu1.len();
    let sys = compact_system(items, dim, lambda)?;
    let n = sys.compact.len;
    let mut b = DVector::zeros(n);
    let mut c = DMatrix::zeros(n, n);
    {
        let cs = c.as_mut_slice();
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for (t, w) in items {
            rows.clear();
            rows.extend(sys.compact.entries(&t.phi));
            for &(i, vi) in &rows {
                b[i] += w * t.reward * vi;
            }
            for (j, vj) in sys.compact.entries(&t.next_pi) {
                let col = &mut cs[j * n..(j + 1) * n];
                let s = w * vj;
                for &(i, vi) in &rows {
                    col[i] += s * vi;
                }
            }
        }
    }
    let mut w = DVector::zeros(n);
    let mut rhs = DVector::zeros(n);
    for _ in 0..horizon {
        rhs.copy_from(&b);
        rhs.gemv(1.0, &c, &w, 1.0);
        sys.chol.solve_mut(&mut rhs);
        std::mem::swap(&mut w, &mut rhs);
    }
    let mut full = vec![0.0; dim];
    scatter(&sys.compact, &w, &mut full);
    Ok(full.iter().zip(nu1.iter()).map(|(a, b)| a * b).sum())
}

/// Full-dimension moments `(Sigma-hat, C, b)` with `Sigma-hat` including
/// the ridge term.
pub(crate) fn moments(items: &Weighted<'_>, dim: usize, lambda: f64) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let mut sigma = DMatrix::from_diagonal_element(dim, dim, lambda);
    let mut cross = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for (t, w) in items {
        for (i, vi) in t.phi.values.iter().enumerate() {
            let r = t.phi.offset + i;
            b[r] += w * t.reward * vi;
            for (j, vj) in t.phi.values.iter().enumerate() {
                sigma[(r, t.phi.offset + j)] += w * vi * vj;
            }
            for (j, vj) in t.next_pi.values.iter().enumerate() {
                cross[(r, t.next_pi.offset + j)] += w * vi * vj;
            }
        }
    }
    (sigma, cross, b)
}

//! Feature maps `phi(s, a)` for linear function approximation.
//!
//! Both maps here are block structured: the nonzero entries of `phi(s, a)`
//! always form one contiguous run of coordinates. [`Segment`] stores just
//! that run, which keeps regression cost proportional to the active block
//! instead of the full dimension.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Result};
use crate::mdp::{Policy, State};

/// Contiguous nonzero support `values` starting at coordinate `offset`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segment {
    pub offset: usize,
    pub values: Vec<f64>,
}

impl Segment {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> usize {
        self.offset + self.values.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.values.iter().zip(&dense[self.offset..self.end()]).map(|(a, b)| a * b).sum()
    }

    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for (d, v) in dense[self.offset..self.end()].iter_mut().zip(&self.values) {
            *d += scale * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_scaled_to(&mut out, 1.0);
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::fmt::Debug for dyn FeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Nonzero support of `phi(state, action)`. Absorbing states map to the
    /// zero vector, i.e. an empty segment.
    fn segment(&self, state: &State, action: usize) -> Segment;

    /// Whether evaluations may be memoized per discrete state.
    fn memoizable(&self) -> bool {
        false
    }

    fn describe(&self) -> String;

    fn evaluate(&self, state: &State, action: usize) -> Vec<f64> {
        self.segment(state, action).to_dense(self.dim())
    }

    /// Support of `phi^pi(s) = sum_a pi(a|s) phi(s, a)`.
    fn pi_segment(&self, state: &State, policy: &Policy) -> Segment {
        if state.is_absorbing() {
            return Segment::default();
        }
        let probs = policy.probabilities(state);
        let parts: Vec<(f64, Segment)> = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(a, p)| (*p, self.segment(state, a)))
            .filter(|(_, s)| !s.is_empty())
            .collect();
        let Some(lo) = parts.iter().map(|(_, s)| s.offset).min() else {
            return Segment::default();
        };
        let hi = parts.iter().map(|(_, s)| s.end()).max().unwrap_or(lo);
        let mut values = vec![0.0; hi - lo];
        for (p, s) in &parts {
            for (i, v) in s.values.iter().enumerate() {
                values[s.offset - lo + i] += p * v;
            }
        }
        Segment { offset: lo, values }
    }

    fn pi_average(&self, state: &State, policy: &Policy) -> Vec<f64> {
        self.pi_segment(state, policy).to_dense(self.dim())
    }
}

/// Indicator features: `phi(s, a) = e_{s * n_actions + a}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularOneHot {
    n_states: usize,
    n_actions: usize,
}

pub fn tabular_one_hot(n_states: usize, n_actions: usize) -> Result<TabularOneHot> {
    if n_states == 0 || n_actions == 0 {
        return Err(invalid("one-hot features need at least one state and one action"));
    }
    Ok(TabularOneHot { n_states, n_actions })
}

impl FeatureMap for TabularOneHot {
    fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn segment(&self, state: &State, action: usize) -> Segment {
        match state {
            State::Discrete(s) => Segment { offset: s * self.n_actions + action, values: vec![1.0] },
            _ => Segment::default(),
        }
    }

    fn memoizable(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("one_hot({}x{})", self.n_states, self.n_actions)
    }

    fn pi_segment(&self, state: &State, policy: &Policy) -> Segment {
        match state {
            State::Discrete(s) => Segment { offset: s * self.n_actions, values: policy.probabilities(state) },
            _ => Segment::default(),
        }
    }
}

/// Gaussian bumps on a regular grid over a normalized state box, one block
/// of `n_centers` coordinates per action.
#[derive(Debug)]
pub struct RbfGrid {
    centers_per_dim: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    bandwidth: f64,
    n_actions: usize,
    centers: Vec<Vec<f64>>,
    clamped: AtomicU64,
}

/// `bandwidth` is in normalized `[0, 1]` units; `None` selects
/// `1 / max(centers_per_dim)`.
pub fn rbf_grid(
    centers_per_dim: &[usize],
    bandwidth: Option<f64>,
    state_bounds: &[(f64, f64)],
    n_actions: usize,
) -> Result<RbfGrid> {
    if centers_per_dim.is_empty() || centers_per_dim.len() != state_bounds.len() {
        return Err(invalid("need one center count and one bound pair per state dimension"));
    }
    if centers_per_dim.contains(&0) || n_actions == 0 {
        return Err(invalid("center counts and action count must be positive"));
    }
    if state_bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(invalid("state bounds must be nondegenerate"));
    }
    let max_centers = *centers_per_dim.iter().max().unwrap_or(&1);
    let bandwidth = bandwidth.unwrap_or(1.0 / max_centers as f64);
    if !(bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth {bandwidth} must be positive")));
    }
    let axes: Vec<Vec<f64>> = centers_per_dim
        .iter()
        .map(|&m| {
            if m == 1 {
                vec![0.5]
            } else {
                (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
            }
        })
        .collect();
    let mut centers: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        centers = centers
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |c| {
                    let mut p = prefix.clone();
                    p.push(*c);
                    p
                })
            })
            .collect();
    }
    Ok(RbfGrid {
        centers_per_dim: centers_per_dim.to_vec(),
        bounds: state_bounds.to_vec(),
        bandwidth,
        n_actions,
        centers,
        clamped: AtomicU64::new(0),
    })
}

impl RbfGrid {
    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Number of queries whose state fell outside the declared box.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Center `i` mapped back to raw state coordinates.
    pub fn center_state(&self, i: usize) -> Vec<f64> {
        self.centers[i].iter().zip(&self.bounds).map(|(c, (lo, hi))| lo + c * (hi - lo)).collect()
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut clamped = false;
        let z = x
            .iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| {
                let t = (v - lo) / (hi - lo);
                clamped |= !(0.0..=1.0).contains(&t);
                t.clamp(0.0, 1.0)
            })
            .collect();
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        z
    }

    fn bumps(&self, x: &[f64]) -> Vec<f64> {
        let z = self.normalize(x);
        let scale = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        self.centers
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 * scale).exp()
            })
            .collect()
    }
}

impl FeatureMap for RbfGrid {
    fn dim(&self) -> usize {
        self.centers.len() * self.n_actions
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn segment(&self, state: &State, action: usize) -> Segment {
        match state {
            State::Continuous(x) if x.len() == self.bounds.len() => {
                Segment { offset: action * self.centers.len(), values: self.bumps(x) }
            }
            _ => Segment::default(),
        }
    }

    fn describe(&self) -> String {
        format!("rbf({:?}, bw={}, actions={})", self.centers_per_dim, self.bandwidth, self.n_actions)
    }

    fn pi_segment(&self, state: &State, policy: &Policy) -> Segment {
        let State::Continuous(x) = state else { return Segment::default() };
        let probs = policy.probabilities(state);
        let Some(first) = probs.iter().position(|p| *p > 0.0) else { return Segment::default() };
        let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(first);
        let bumps = self.bumps(x);
        let m = bumps.len();
        let mut values = Vec::with_capacity((last - first + 1) * m);
        for p in &probs[first..=last] {
            values.extend(bumps.iter().map(|b| p * b));
        }
        Segment { offset: first * m, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{EnergyPumping, PolicyKind};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn one_hot_index_layout() {
        let phi = tabular_one_hot(2, 2).unwrap();
        assert_eq!(phi.evaluate(&State::Discrete(1), 0), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(phi.evaluate(&State::Absorbing, 1), vec![0.0; 4]);
    }

    #[test]
    fn one_hot_uniform_pi_average() {
        let phi = tabular_one_hot(2, 2).unwrap();
        let pi = Policy::uniform(2, 2).unwrap();
        assert_eq!(phi.pi_average(&State::Discrete(1), &pi), vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn one_hot_sup_norm_is_one() {
        let phi = tabular_one_hot(5, 3).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                assert_eq!(phi.segment(&State::Discrete(s), a).sup_norm(), 1.0);
            }
        }
    }

    #[test]
    fn rbf_equals_one_at_center() {
        let grid = rbf_grid(&[20, 20], None, &[(-1.2, 0.6), (-0.2, 0.2)], 3).unwrap();
        assert_eq!(grid.dim(), 1200);
        assert_eq!(grid.n_centers(), 400);
        let c = grid.center_state(137);
        let seg = grid.segment(&State::Continuous(c), 1);
        assert_eq!(seg.offset, 400);
        assert!((seg.values[137] - 1.0).abs() < 1e-12);
        assert!((seg.sup_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rbf_symmetric_offsets_agree() {
        let grid = rbf_grid(&[5, 5], Some(0.3), &[(0.0, 1.0), (0.0, 1.0)], 1).unwrap();
        let c = grid.center_state(12); // (0.5, 0.5)
        let delta = 0.07;
        let plus = grid.evaluate(&State::Continuous(vec![c[0] + delta, c[1]]), 0)[12];
        let minus = grid.evaluate(&State::Continuous(vec![c[0] - delta, c[1]]), 0)[12];
        let expected = (-(delta * delta) / (2.0 * 0.09f64)).exp();
        assert!((plus - minus).abs() < 1e-15);
        assert!((plus - expected).abs() < 1e-12);
    }

    #[test]
    fn rbf_clamps_out_of_bounds_states() {
        let grid = rbf_grid(&[3, 3], None, &[(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
        let inside = grid.evaluate(&State::Continuous(vec![1.0, 0.0]), 0);
        let outside = grid.evaluate(&State::Continuous(vec![4.0, -2.0]), 0);
        assert_eq!(inside, outside);
        assert_eq!(grid.clamped_queries(), 1);
    }

    #[test]
    fn rbf_rejects_bad_bandwidth() {
        assert!(rbf_grid(&[3], Some(0.0), &[(0.0, 1.0)], 1).is_err());
        assert!(rbf_grid(&[3, 3], None, &[(0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn rbf_pi_segment_matches_direct_sum() {
        let grid = rbf_grid(&[4, 4], None, &[(-1.2, 0.6), (-0.2, 0.2)], 3).unwrap();
        let pi = Policy::from_preferences(Arc::new(EnergyPumping), PolicyKind::EpsilonGreedy(0.3)).unwrap();
        let s = State::Continuous(vec![-0.4, 0.01]);
        let fast = grid.pi_average(&s, &pi);
        let probs = pi.probabilities(&s);
        let mut direct = vec![0.0; grid.dim()];
        for (a, p) in probs.iter().enumerate() {
            for (d, v) in direct.iter_mut().zip(grid.evaluate(&s, a)) {
                *d += p * v;
            }
        }
        for (x, y) in fast.iter().zip(&direct) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn rbf_sup_norm_and_block_orthogonality(
            x in -2.0f64..2.0, v in -0.5f64..0.5, a in 0usize..3, b in 0usize..3,
        ) {
            let grid = rbf_grid(&[6, 6], None, &[(-1.2, 0.6), (-0.2, 0.2)], 3).unwrap();
            let s = State::Continuous(vec![x, v]);
            let fa = grid.evaluate(&s, a);
            prop_assert!(fa.iter().all(|f| f.abs() <= 1.0));
            if a != b {
                let fb = grid.evaluate(&s, b);
                let dot: f64 = fa.iter().zip(&fb).map(|(p, q)| p * q).sum();
                prop_assert_eq!(dot, 0.0);
            }
        }

        #[test]
        fn one_hot_pi_average_matches_sum(s in 0usize..4, w in proptest::collection::vec(0.01f64..1.0, 3)) {
            let phi = tabular_one_hot(4, 3).unwrap();
            let total: f64 = w.iter().sum();
            let row: Vec<f64> = w.iter().map(|x| x / total).collect();
            let mut table = vec![vec![1.0 / 3.0; 3]; 4];
            table[s] = row.clone();
            let fix = 1.0 - table[s].iter().sum::<f64>();
            table[s][0] += fix;
            let pi = Policy::tabular(table.clone()).unwrap();
            let avg = phi.pi_average(&State::Discrete(s), &pi);
            for a in 0..3 {
                prop_assert!((avg[s * 3 + a] - table[s][a]).abs() <= 1e-12);
            }
        }
    }
}

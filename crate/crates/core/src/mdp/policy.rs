use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::{pick_index, State};
use crate::error::{invalid, Result};
use crate::rng::StreamRng;

/// Per-action scores (e.g. Q-values) that a [`Policy`] turns into action
/// probabilities.
pub trait ActionPreference: Send + Sync {
    fn n_actions(&self) -> usize;
    fn preferences(&self, state: &State, out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    Greedy,
    EpsilonGreedy(f64),
    Softmax(f64),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Greedy => write!(f, "greedy"),
            PolicyKind::EpsilonGreedy(e) => write!(f, "epsilon_greedy({e})"),
            PolicyKind::Softmax(t) => write!(f, "softmax({t})"),
        }
    }
}

#[derive(Clone)]
enum Repr {
    Scored { prefs: Arc<dyn ActionPreference>, kind: PolicyKind },
    Table(Arc<Vec<Vec<f64>>>),
}

/// A stochastic policy. In the absorbing state every policy plays action 0.
#[derive(Clone)]
pub struct Policy {
    repr: Repr,
    n_actions: usize,
}

impl Policy {
    pub fn from_preferences(prefs: Arc<dyn ActionPreference>, kind: PolicyKind) -> Result<Self> {
        match kind {
            PolicyKind::EpsilonGreedy(e) if !(0.0..=1.0).contains(&e) => {
                return Err(invalid(format!("epsilon {e} not in [0, 1]")))
            }
            PolicyKind::Softmax(t) if !(t > 0.0) => {
                return Err(invalid(format!("softmax temperature {t} must be positive")))
            }
            _ => {}
        }
        let n_actions = prefs.n_actions();
        if n_actions == 0 {
            return Err(invalid("policy needs at least one action"));
        }
        Ok(Policy { repr: Repr::Scored { prefs, kind }, n_actions })
    }

    /// Explicit tabular action probabilities, `table[state][action]`.
    pub fn tabular(table: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = table.first().map_or(0, Vec::len);
        if n_actions == 0 {
            return Err(invalid("policy table is empty"));
        }
        for (s, row) in table.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.len() != n_actions || row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("policy row for state {s} is not a distribution")));
            }
        }
        Ok(Policy { repr: Repr::Table(Arc::new(table)), n_actions })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        Policy::tabular(vec![vec![1.0 / n_actions as f64; n_actions]; n_states])
    }

    /// The same preferences under a different action-selection rule.
    pub fn with_kind(&self, kind: PolicyKind) -> Result<Self> {
        match &self.repr {
            Repr::Scored { prefs, .. } => Policy::from_preferences(prefs.clone(), kind),
            Repr::Table(_) => Err(invalid("explicit policy tables have no preferences to rewrap")),
        }
    }

    pub fn kind(&self) -> Option<PolicyKind> {
        match &self.repr {
            Repr::Scored { kind, .. } => Some(*kind),
            Repr::Table(_) => None,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probabilities_into(&self, state: &State, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_actions);
        if state.is_absorbing() {
            out.fill(0.0);
            out[0] = 1.0;
            return;
        }
        match &self.repr {
            Repr::Table(table) => {
                let s = state.as_discrete().expect("tabular policy queried with a non-discrete state");
                out.copy_from_slice(&table[s]);
            }
            Repr::Scored { prefs, kind } => {
                prefs.preferences(state, out);
                apply_kind(*kind, out);
            }
        }
    }

    pub fn probabilities(&self, state: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.probabilities_into(state, &mut out);
        out
    }

    pub fn sample(&self, state: &State, rng: &mut StreamRng) -> usize {
        let probs = self.probabilities(state);
        let u: f64 = rng.random();
        pick_index(probs.into_iter(), u)
    }
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Scored { kind, .. } => write!(f, "Policy({kind}, {} actions)", self.n_actions),
            Repr::Table(t) => write!(f, "Policy(table, {} states)", t.len()),
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Turns preferences in `buf` into probabilities in place.
fn apply_kind(kind: PolicyKind, buf: &mut [f64]) {
    let n = buf.len() as f64;
    match kind {
        PolicyKind::Greedy | PolicyKind::EpsilonGreedy(_) => {
            let eps = match kind {
                PolicyKind::EpsilonGreedy(e) => e,
                _ => 0.0,
            };
            let best = argmax(buf);
            buf.fill(eps / n);
            buf[best] += 1.0 - eps;
        }
        PolicyKind::Softmax(t) => {
            let m = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in buf.iter_mut() {
                *v = ((*v - m) / t).exp();
                total += *v;
            }
            for v in buf.iter_mut() {
                *v /= total;
            }
        }
    }
}

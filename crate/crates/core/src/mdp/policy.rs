use serde::{Deserialize, Serialize};

use crate::error::dim;
use crate::stats::{check_distribution, sample_index};
use crate::Result;

/// Stochastic policy `pi(a | s, t)` over a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeIndexedPolicy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TimeIndexedPolicy {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(dim("policy dimensions must be positive"));
        }
        if probs.len() != horizon * num_states * num_actions {
            return Err(dim(format!(
                "expected {} policy entries, got {}",
                horizon * num_states * num_actions,
                probs.len()
            )));
        }
        for (i, row) in probs.chunks(num_actions).enumerate() {
            check_distribution(
                row,
                &format!("policy row (t={}, s={})", i / num_states, i % num_states),
            )?;
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Builds a policy from a function returning the action distribution at `(t, s)`.
    pub fn from_fn<F>(horizon: usize, num_states: usize, num_actions: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
        for t in 0..horizon {
            for s in 0..num_states {
                let row = f(t, s);
                if row.len() != num_actions {
                    return Err(dim(format!("row (t={t}, s={s}) has {} actions", row.len())));
                }
                probs.extend(row);
            }
        }
        Self::new(horizon, num_states, num_actions, probs)
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self::new(horizon, num_states, num_actions, vec![p; horizon * num_states * num_actions])
            .expect("uniform policy is valid")
    }

    /// Deterministic policy from an action table indexed `[t][s]`.
    pub fn deterministic(horizon: usize, num_states: usize, num_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(dim("action table length must be horizon * num_states"));
        }
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for (i, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(dim(format!("action {a} out of range")));
            }
            probs[i * num_actions + a] = 1.0;
        }
        Self::new(horizon, num_states, num_actions, probs)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.num_states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.action_probs(t, s)[a]
    }

    /// Inverse-CDF action draw from one uniform.
    #[inline]
    pub fn sample_action(&self, t: usize, s: usize, u: f64) -> usize {
        sample_index(self.action_probs(t, s), u)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolicyFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PolicyFile = serde_json::from_str(s)?;
        f.try_into()
    }
}

/// JSON layout of a [`TimeIndexedPolicy`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// `[t][s][a]`
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl From<&TimeIndexedPolicy> for PolicyFile {
    fn from(p: &TimeIndexedPolicy) -> Self {
        PolicyFile {
            horizon: p.horizon,
            num_states: p.num_states,
            num_actions: p.num_actions,
            probs: (0..p.horizon)
                .map(|t| (0..p.num_states).map(|s| p.action_probs(t, s).to_vec()).collect())
                .collect(),
        }
    }
}

impl TryFrom<PolicyFile> for TimeIndexedPolicy {
    type Error = crate::Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        if f.probs.len() != f.horizon || f.probs.iter().any(|ts| ts.len() != f.num_states) {
            return Err(dim("nested policy array does not match the declared shape"));
        }
        TimeIndexedPolicy::new(
            f.horizon,
            f.num_states,
            f.num_actions,
            f.probs.into_iter().flatten().flatten().collect(),
        )
    }
}

//! Finite-horizon, time-indexed tabular MDPs and policies.
//!
//! All tables are dense and row-major: transitions are indexed
//! `[t][s][a][s']`, rewards and policies `[t][s][a]`.

mod policy;
mod trajectory;
pub(crate) mod value;

pub use policy::TimeIndexedPolicy;
pub use trajectory::{Dataset, Provenance, Trajectory};
pub use value::{
    q_value, sample_dataset, sample_trajectory, value_backward_induction, value_monte_carlo, value_table,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::dim;
use crate::stats::{check_distribution, sample_index, PROB_TOL};
use crate::{Error, Result};

/// How rewards at step `j` are weighted when computing a value at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discounting {
    /// `gamma^j`, with `j` counted from the start of the episode.
    #[default]
    Absolute,
    /// `gamma^(j - t)`, counted from the evaluation time.
    Relative,
}

/// Reward model of a single `(t, s, a)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardDist {
    Scalar { mean: f64 },
    Categorical { support: Vec<f64>, probs: Vec<f64> },
    Gaussian { mean: f64, precision: f64 },
}

impl RewardDist {
    pub fn scalar(mean: f64) -> Self {
        RewardDist::Scalar { mean }
    }

    pub fn mean(&self) -> f64 {
        match self {
            RewardDist::Scalar { mean } | RewardDist::Gaussian { mean, .. } => *mean,
            RewardDist::Categorical { support, probs } => {
                support.iter().zip(probs).map(|(r, p)| r * p).sum()
            }
        }
    }

    /// Draws a realised reward.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RewardDist::Scalar { mean } => *mean,
            RewardDist::Categorical { support, probs } => {
                support[sample_index(probs, rng.random::<f64>())]
            }
            RewardDist::Gaussian { mean, precision } => {
                if precision.is_infinite() {
                    return *mean;
                }
                Normal::new(*mean, precision.recip().sqrt())
                    .expect("precision validated at construction")
                    .sample(rng)
            }
        }
    }

    /// Same distribution with every reward multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            RewardDist::Scalar { mean } => RewardDist::Scalar { mean: mean * k },
            RewardDist::Categorical { support, probs } => RewardDist::Categorical {
                support: support.iter().map(|r| r * k).collect(),
                probs: probs.clone(),
            },
            RewardDist::Gaussian { mean, precision } => RewardDist::Gaussian {
                mean: mean * k,
                precision: precision / (k * k),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RewardDist::Scalar { mean } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidDistribution(format!(
                        "non-finite scalar reward {mean}"
                    )));
                }
            }
            RewardDist::Categorical { support, probs } => {
                if support.len() != probs.len() {
                    return Err(dim("categorical reward support and probabilities differ in length"));
                }
                if support.iter().any(|r| !r.is_finite()) {
                    return Err(Error::InvalidDistribution(
                        "categorical reward support has non-finite values".into(),
                    ));
                }
                check_distribution(probs, "categorical reward")?;
            }
            RewardDist::Gaussian { mean, precision } => {
                if !mean.is_finite() || !(*precision > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "gaussian reward needs finite mean and positive precision, got ({mean}, {precision})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A finite-horizon MDP whose dynamics and rewards depend on the time index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeIndexedMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<f64>,
    rewards: Vec<RewardDist>,
    mean_rewards: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
    discounting: Discounting,
}

impl TimeIndexedMdp {
    /// Builds and validates an MDP from flat row-major tables.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<RewardDist>,
        initial: Vec<f64>,
        gamma: f64,
        discounting: Discounting,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(dim("num_states, num_actions and horizon must be positive"));
        }
        let cells = horizon * num_states * num_actions;
        if transitions.len() != cells * num_states {
            return Err(dim(format!(
                "expected {} transition entries, got {}",
                cells * num_states,
                transitions.len()
            )));
        }
        if rewards.len() != cells {
            return Err(dim(format!(
                "expected {cells} reward cells, got {}",
                rewards.len()
            )));
        }
        if initial.len() != num_states {
            return Err(dim("initial distribution length differs from num_states"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        for (i, row) in transitions.chunks(num_states).enumerate() {
            let t = i / (num_states * num_actions);
            let s = (i / num_actions) % num_states;
            let a = i % num_actions;
            check_distribution(row, &format!("transition row (t={t}, s={s}, a={a})"))?;
        }
        for r in &rewards {
            r.validate()?;
        }
        check_distribution(&initial, "initial state distribution")?;
        let mean_rewards = rewards.iter().map(RewardDist::mean).collect();
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            rewards,
            mean_rewards,
            initial,
            gamma,
            discounting,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn discounting(&self) -> Discounting {
        self.discounting
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn cell(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.num_states + s) * self.num_actions + a
    }

    #[inline]
    pub fn transition_row(&self, t: usize, s: usize, a: usize) -> &[f64] {
        let start = self.cell(t, s, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, t: usize, s: usize, a: usize) -> &RewardDist {
        &self.rewards[self.cell(t, s, a)]
    }

    #[inline]
    pub fn mean_reward(&self, t: usize, s: usize, a: usize) -> f64 {
        self.mean_rewards[self.cell(t, s, a)]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[RewardDist] {
        &self.rewards
    }

    /// Weight applied to a reward collected at step `j` when valuing from `t0`.
    #[inline]
    pub fn discount_weight(&self, j: usize, t0: usize) -> f64 {
        match self.discounting {
            Discounting::Absolute => self.gamma.powi(j as i32),
            Discounting::Relative => self.gamma.powi((j - t0) as i32),
        }
    }

    /// One dynamic-programming backup at time `t`: combines an immediate
    /// (expected) reward with the expected next-step value table entry.
    #[inline]
    pub fn backup(&self, t: usize, immediate: f64, expected_next: f64) -> f64 {
        match self.discounting {
            Discounting::Absolute => self.gamma.powi(t as i32) * immediate + expected_next,
            Discounting::Relative => immediate + self.gamma * expected_next,
        }
    }

    /// Weight of a per-step cost charged at time `t`, consistent with [`Self::backup`].
    #[inline]
    pub fn step_weight(&self, t: usize) -> f64 {
        match self.discounting {
            Discounting::Absolute => self.gamma.powi(t as i32),
            Discounting::Relative => 1.0,
        }
    }

    /// Copy of this MDP with all rewards multiplied by `k`.
    pub fn with_scaled_rewards(&self, k: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.transitions.clone(),
            self.rewards.iter().map(|r| r.scaled(k)).collect(),
            self.initial.clone(),
            self.gamma,
            self.discounting,
        )
    }

    /// Copy of this MDP with a different initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.transitions.clone(),
            self.rewards.clone(),
            initial,
            self.gamma,
            self.discounting,
        )
    }

    pub fn with_discount(&self, gamma: f64, discounting: Discounting) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.transitions.clone(),
            self.rewards.clone(),
            self.initial.clone(),
            gamma,
            discounting,
        )
    }

    /// Largest absolute mean reward; used to scale default deferral costs.
    pub fn reward_scale(&self) -> f64 {
        self.mean_rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn check_policy(&self, policy: &TimeIndexedPolicy) -> Result<()> {
        if policy.horizon() != self.horizon
            || policy.num_states() != self.num_states
            || policy.num_actions() != self.num_actions
        {
            return Err(dim(format!(
                "policy is (T={}, S={}, A={}) but mdp is (T={}, S={}, A={})",
                policy.horizon(),
                policy.num_states(),
                policy.num_actions(),
                self.horizon,
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// JSON layout of a [`TimeIndexedMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    #[serde(default)]
    pub discounting: Discounting,
    pub initial_state_dist: Vec<f64>,
    /// `[t][s][a][s']`
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[t][s][a]`
    pub rewards: Vec<Vec<Vec<RewardDist>>>,
}

impl From<&TimeIndexedMdp> for MdpFile {
    fn from(m: &TimeIndexedMdp) -> Self {
        let (s_n, a_n) = (m.num_states, m.num_actions);
        let transitions = (0..m.horizon)
            .map(|t| {
                (0..s_n)
                    .map(|s| (0..a_n).map(|a| m.transition_row(t, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let rewards = (0..m.horizon)
            .map(|t| {
                (0..s_n)
                    .map(|s| (0..a_n).map(|a| m.reward(t, s, a).clone()).collect())
                    .collect()
            })
            .collect();
        MdpFile {
            horizon: m.horizon,
            num_states: s_n,
            num_actions: a_n,
            gamma: m.gamma,
            discounting: m.discounting,
            initial_state_dist: m.initial.clone(),
            transitions,
            rewards,
        }
    }
}

impl TryFrom<MdpFile> for TimeIndexedMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        let shape_ok = f.transitions.len() == f.horizon
            && f.rewards.len() == f.horizon
            && f.transitions.iter().all(|ts| {
                ts.len() == f.num_states
                    && ts.iter().all(|sa| {
                        sa.len() == f.num_actions && sa.iter().all(|row| row.len() == f.num_states)
                    })
            })
            && f
                .rewards
                .iter()
                .all(|ts| ts.len() == f.num_states && ts.iter().all(|sa| sa.len() == f.num_actions));
        if !shape_ok {
            return Err(dim("nested transition/reward arrays do not match the declared shape"));
        }
        let transitions = f.transitions.into_iter().flatten().flatten().flatten().collect();
        let rewards = f.rewards.into_iter().flatten().flatten().collect();
        TimeIndexedMdp::new(
            f.num_states,
            f.num_actions,
            f.horizon,
            transitions,
            rewards,
            f.initial_state_dist,
            f.gamma,
            f.discounting,
        )
    }
}

/// Renormalises a non-negative vector in place; all-zero input becomes uniform.
pub(crate) fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|p| *p = u);
    } else {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    debug_assert!((row.iter().sum::<f64>() - 1.0).abs() < PROB_TOL);
}

//! The 8-state synthetic chain.
//!
//! Episodes start in state 0 and drift toward the absorbing sink 7. State 6
//! is a trap off the main path with reward `reward_state6`; every other
//! non-sink state pays `reward_other`. Advancing from state 5 (or 6) lands in
//! the sink, so only action 1 or noise leads into the trap.
//!
//! - action 0: advance with probability `good_action_success`, stay otherwise
//! - action 1: jump to state 6 with probability `bad_action_risk`, advance otherwise
//!
//! Each non-sink row is then mixed with the uniform distribution with weight
//! `w(t, s) = min(max_mixing, nonstationarity_rate * (t / T) * (s + 1) / 8)`.

use serde::{Deserialize, Serialize};

use super::BuiltEnv;
use crate::mdp::{Discounting, RewardDist, TimeIndexedMdp, TimeIndexedPolicy};
use crate::{Error, Result};

pub const CHAIN_NUM_STATES: usize = 8;
pub const TRAP_STATE: usize = 6;
pub const SINK_STATE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticChainConfig {
    pub horizon: usize,
    pub good_action_success: f64,
    pub bad_action_risk: f64,
    pub nonstationarity_rate: f64,
    pub max_mixing: f64,
    pub reward_state6: f64,
    pub reward_other: f64,
    /// Exploration of the expert: it takes action 1 with probability `epsilon / 2`.
    pub expert_epsilon: f64,
    /// States in which the target policy takes action 1 ...
    pub target_states: Vec<usize>,
    /// ... at times `target_window.0 <= t <= target_window.1`.
    pub target_window: (usize, usize),
    pub gamma: f64,
    pub discounting: Discounting,
}

impl Default for SyntheticChainConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            good_action_success: 0.9,
            bad_action_risk: 0.6,
            nonstationarity_rate: 1.0,
            max_mixing: 0.5,
            reward_state6: -5.0,
            reward_other: 1.0,
            expert_epsilon: 0.2,
            target_states: vec![2, 3, 4],
            target_window: (3, 8),
            gamma: 1.0,
            discounting: Discounting::Absolute,
        }
    }
}

impl SyntheticChainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("synthetic_chain.{name} = {x} is outside [0, 1]")))
            }
        };
        if self.horizon == 0 {
            return Err(Error::Config("synthetic_chain.horizon must be positive".into()));
        }
        unit("good_action_success", self.good_action_success)?;
        unit("bad_action_risk", self.bad_action_risk)?;
        unit("max_mixing", self.max_mixing)?;
        unit("expert_epsilon", self.expert_epsilon)?;
        if !(self.nonstationarity_rate >= 0.0) || !self.nonstationarity_rate.is_finite() {
            return Err(Error::Config("synthetic_chain.nonstationarity_rate must be >= 0".into()));
        }
        if self.target_states.iter().any(|&s| s >= CHAIN_NUM_STATES) {
            return Err(Error::Config("synthetic_chain.target_states out of range".into()));
        }
        Ok(())
    }

    /// Uniform-mixing weight of the row at `(t, s)`.
    pub fn mixing_weight(&self, t: usize, s: usize) -> f64 {
        let frac_t = t as f64 / self.horizon as f64;
        let frac_s = (s + 1) as f64 / CHAIN_NUM_STATES as f64;
        (self.nonstationarity_rate * frac_t * frac_s).min(self.max_mixing)
    }

    fn in_target_region(&self, t: usize, s: usize) -> bool {
        t >= self.target_window.0 && t <= self.target_window.1 && self.target_states.contains(&s)
    }
}

fn advance(s: usize) -> usize {
    match s {
        5 | TRAP_STATE => SINK_STATE,
        _ => s + 1,
    }
}

fn base_row(cfg: &SyntheticChainConfig, s: usize, a: usize) -> [f64; CHAIN_NUM_STATES] {
    let mut row = [0.0; CHAIN_NUM_STATES];
    if s == SINK_STATE {
        row[SINK_STATE] = 1.0;
        return row;
    }
    if a == 0 {
        row[advance(s)] += cfg.good_action_success;
        row[s] += 1.0 - cfg.good_action_success;
    } else {
        row[TRAP_STATE] += cfg.bad_action_risk;
        row[advance(s)] += 1.0 - cfg.bad_action_risk;
    }
    row
}

/// Builds the chain MDP with its target policy and expert policy.
pub fn build_synthetic_chain(cfg: &SyntheticChainConfig) -> Result<BuiltEnv> {
    cfg.validate()?;
    let (n, horizon) = (CHAIN_NUM_STATES, cfg.horizon);
    let uniform = 1.0 / n as f64;
    let mut transitions = Vec::with_capacity(horizon * n * 2 * n);
    let mut rewards = Vec::with_capacity(horizon * n * 2);
    for t in 0..horizon {
        for s in 0..n {
            let w = if s == SINK_STATE { 0.0 } else { cfg.mixing_weight(t, s) };
            let r = match s {
                TRAP_STATE => cfg.reward_state6,
                SINK_STATE => 0.0,
                _ => cfg.reward_other,
            };
            for a in 0..2 {
                transitions.extend(base_row(cfg, s, a).iter().map(|p| (1.0 - w) * p + w * uniform));
                rewards.push(RewardDist::scalar(r));
            }
        }
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let mdp = TimeIndexedMdp::new(n, 2, horizon, transitions, rewards, initial, cfg.gamma, cfg.discounting)?;

    let explore = cfg.expert_epsilon / 2.0;
    let pi_0 = TimeIndexedPolicy::from_fn(horizon, n, 2, |_, _| vec![1.0 - explore, explore])?;
    let pi_tar = TimeIndexedPolicy::from_fn(horizon, n, 2, |t, s| {
        if cfg.in_target_region(t, s) {
            vec![0.0, 1.0]
        } else {
            vec![1.0 - explore, explore]
        }
    })?;
    Ok(BuiltEnv { mdp, pi_tar, pi_0 })
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DeferralMethod, DeferralPolicy};
use crate::error::{dim, invalid};
use crate::mdp::{TimeIndexedMdp, TimeIndexedPolicy};
use crate::posterior::{DynamicsPosterior, ModelPosterior};
use crate::Result;

/// What deferring at `(t, s)` is worth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferValue {
    /// One expert step at cost `c`, then the already-learned rule for later times.
    #[default]
    SingleStep,
    /// The expert keeps control for the rest of the episode, at cost `c` per step.
    Permanent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSettings {
    pub tau: f64,
    pub cost: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub defer_value: DeferValue,
}

impl Default for LearnSettings {
    fn default() -> Self {
        Self {
            tau: 0.5,
            cost: 0.25,
            n_samples: 50,
            seed: 0,
            defer_value: DeferValue::SingleStep,
        }
    }
}

impl LearnSettings {
    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(invalid(format!("n_samples must be at least 2, got {}", self.n_samples)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return Err(invalid(format!("cost must be finite and >= 0, got {}", self.cost)));
        }
        Ok(())
    }
}

fn check_inputs<P: ModelPosterior + ?Sized>(
    post: &P,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
) -> Result<()> {
    for pi in [pi_tar, pi_0] {
        if pi.horizon() != post.horizon() || pi.num_states() != post.num_states() || pi.num_actions() != post.num_actions() {
            return Err(dim(format!(
                "policy is (T={}, S={}, A={}) but posterior is (T={}, S={}, A={})",
                pi.horizon(),
                pi.num_states(),
                pi.num_actions(),
                post.horizon(),
                post.num_states(),
                post.num_actions()
            )));
        }
    }
    Ok(())
}

/// `E_{a ~ pi}[backup(t, r(t, s, a), E V_next)]`.
fn policy_backup(mdp: &TimeIndexedMdp, pi: &TimeIndexedPolicy, t: usize, s: usize, next: &[f64]) -> f64 {
    pi.action_probs(t, s)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(a, &p)| p * crate::mdp::q_value(mdp, t, s, a, next))
        .sum()
}

/// Per-draw state carried through the backward pass.
struct DrawState {
    mdp: TimeIndexedMdp,
    v_eff: Vec<f64>,
    v_expert: Vec<f64>,
}

fn learn_backward<P: ModelPosterior + ?Sized>(
    post: &P,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    settings: &LearnSettings,
    method: DeferralMethod,
) -> Result<DeferralPolicy> {
    settings.validate()?;
    check_inputs(post, pi_tar, pi_0)?;
    let (n_s, horizon, n) = (post.num_states(), post.horizon(), settings.n_samples);
    let mut draws: Vec<DrawState> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            post.sample_mdp_indexed(i, settings.seed).map(|mdp| DrawState {
                mdp,
                v_eff: vec![0.0; n_s],
                v_expert: vec![0.0; n_s],
            })
        })
        .collect::<Result<_>>()?;

    let mut scores = vec![0.0; horizon * n_s];
    for t in (0..horizon).rev() {
        // per draw: (defer indicator, V_tar, V_def, V_expert) for every state
        let evaluated: Vec<(Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>)> = draws
            .par_iter()
            .map(|d| {
                let m = &d.mdp;
                let step_cost = settings.cost * m.step_weight(t);
                let mut ind = vec![false; n_s];
                let mut v_tar = vec![0.0; n_s];
                let mut v_def = vec![0.0; n_s];
                let mut v_exp = vec![0.0; n_s];
                for s in 0..n_s {
                    if method == DeferralMethod::OneStep {
                        let r = |pi: &TimeIndexedPolicy| -> f64 {
                            pi.action_probs(t, s).iter().enumerate().map(|(a, p)| p * m.mean_reward(t, s, a)).sum()
                        };
                        ind[s] = r(pi_tar) < r(pi_0) - settings.cost;
                        continue;
                    }
                    v_tar[s] = policy_backup(m, pi_tar, t, s, &d.v_eff);
                    v_def[s] = match settings.defer_value {
                        DeferValue::SingleStep => policy_backup(m, pi_0, t, s, &d.v_eff) - step_cost,
                        DeferValue::Permanent => {
                            v_exp[s] = policy_backup(m, pi_0, t, s, &d.v_expert);
                            let remaining: f64 = (t..horizon).map(|j| settings.cost * m.discount_weight(j, t)).sum();
                            v_exp[s] - remaining
                        }
                    };
                    ind[s] = v_tar[s] < v_def[s];
                }
                (ind, v_tar, v_def, v_exp)
            })
            .collect();

        let row = &mut scores[t * n_s..(t + 1) * n_s];
        for (ind, ..) in &evaluated {
            for (p, &hit) in row.iter_mut().zip(ind) {
                if hit {
                    *p += 1.0;
                }
            }
        }
        row.iter_mut().for_each(|p| *p /= n as f64);
        let g: Vec<bool> = row.iter().map(|&p| p > settings.tau).collect();
        for (d, (_, v_tar, v_def, v_exp)) in draws.iter_mut().zip(evaluated) {
            for s in 0..n_s {
                d.v_eff[s] = if g[s] { v_def[s] } else { v_tar[s] };
            }
            d.v_expert = v_exp;
        }
    }
    DeferralPolicy::from_scores(
        horizon,
        n_s,
        scores,
        settings.tau,
        settings.cost,
        n,
        method,
        settings.defer_value == DeferValue::Permanent,
    )
}

/// Sequential deferral learner: a backward pass over time shared by `n`
/// posterior draws. At each `t` the rule at later times is already fixed, so
/// both the continue and the defer values account for future deferrals.
pub fn learn_deferral<P: ModelPosterior + ?Sized>(
    post: &P,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    settings: &LearnSettings,
) -> Result<DeferralPolicy> {
    learn_backward(post, pi_tar, pi_0, settings, DeferralMethod::Sltd)
}

/// Compares expected immediate rewards only.
pub fn learn_deferral_one_step<P: ModelPosterior + ?Sized>(
    post: &P,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    settings: &LearnSettings,
) -> Result<DeferralPolicy> {
    learn_backward(post, pi_tar, pi_0, settings, DeferralMethod::OneStep)
}

/// The sequential learner on a pooled (time-homogeneous) posterior.
pub fn learn_deferral_stationary(
    post: &DynamicsPosterior,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    settings: &LearnSettings,
) -> Result<DeferralPolicy> {
    if !post.is_pooled() {
        return Err(invalid("the stationary learner requires a pooled posterior"));
    }
    learn_backward(post, pi_tar, pi_0, settings, DeferralMethod::Stationary)
}

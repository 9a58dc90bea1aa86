use serde::{Deserialize, Serialize};

use super::{DeferralMethod, DeferralPolicy};
use crate::error::invalid;
use crate::mdp::{value_table, TimeIndexedMdp, TimeIndexedPolicy};
use crate::posterior::DynamicsPosterior;
use crate::Result;

/// Where the defer action leads in the augmented MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedMode {
    /// A single absorbing `s_defer` state: no further reward, cost `c` per remaining step.
    #[default]
    AbsorbingDeferState,
    /// A deferred copy of the state space driven by the expert, cost `c` per remaining step.
    ExpertCopy,
}

/// Solves the augmented MDP on `model` for the optimal permanent choice
/// between following the target and deferring. Ties keep the target.
pub fn augmented_mdp_plan(
    model: &TimeIndexedMdp,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    cost: f64,
    mode: AugmentedMode,
) -> Result<DeferralPolicy> {
    model.check_policy(pi_tar)?;
    model.check_policy(pi_0)?;
    if !(cost >= 0.0) || !cost.is_finite() {
        return Err(invalid(format!("cost must be finite and >= 0, got {cost}")));
    }
    let (n_s, horizon) = (model.num_states(), model.horizon());
    let expert_values = match mode {
        AugmentedMode::ExpertCopy => Some(value_table(model, pi_0)?),
        AugmentedMode::AbsorbingDeferState => None,
    };
    let mut next = vec![0.0; n_s];
    let mut scores = vec![0.0; horizon * n_s];
    for t in (0..horizon).rev() {
        let remaining: f64 = (t..horizon).map(|j| cost * model.discount_weight(j, t)).sum();
        let mut current = vec![0.0; n_s];
        for s in 0..n_s {
            let q_cont: f64 = pi_tar
                .action_probs(t, s)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| p * crate::mdp::q_value(model, t, s, a, &next))
                .sum();
            let q_defer = match &expert_values {
                Some(v) => v[t][s] - remaining,
                None => -remaining,
            };
            if q_defer > q_cont {
                scores[t * n_s + s] = 1.0;
                current[s] = q_defer;
            } else {
                current[s] = q_cont;
            }
        }
        next = current;
    }
    DeferralPolicy::from_scores(horizon, n_s, scores, 0.5, cost, 1, DeferralMethod::Augmented, true)
}

/// Augmented-MDP baseline planned on the posterior-mean dynamics.
pub fn augmented_mdp_baseline(
    post: &DynamicsPosterior,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    cost: f64,
    mode: AugmentedMode,
) -> Result<DeferralPolicy> {
    augmented_mdp_plan(&post.posterior_mean_mdp()?, pi_tar, pi_0, cost, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_synthetic_chain, SyntheticChainConfig, TRAP_STATE};

    #[test]
    fn cost_above_value_range_never_defers() {
        let env = build_synthetic_chain(&SyntheticChainConfig::default()).unwrap();
        // T * (max reward - min reward) = 10 * 6
        for mode in [AugmentedMode::AbsorbingDeferState, AugmentedMode::ExpertCopy] {
            let d = augmented_mdp_plan(&env.mdp, &env.pi_tar, &env.pi_0, 61.0, mode).unwrap();
            assert!(d.deferral_set().is_empty());
        }
    }

    #[test]
    fn chain_defers_only_in_trap_state() {
        let env = build_synthetic_chain(&SyntheticChainConfig::default()).unwrap();
        let d = augmented_mdp_plan(&env.mdp, &env.pi_tar, &env.pi_0, 0.25, AugmentedMode::AbsorbingDeferState).unwrap();
        let set = d.deferral_set();
        assert!(!set.is_empty());
        assert!(set.iter().all(|&(_, s)| s == TRAP_STATE), "{set:?}");
        assert!(d.is_permanent());
    }
}

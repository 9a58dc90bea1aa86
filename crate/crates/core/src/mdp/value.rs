use rayon::prelude::*;

use super::{Dataset, Provenance, RewardDist, TimeIndexedMdp, TimeIndexedPolicy, Trajectory};
use crate::error::{dim, invalid};
use crate::seed::{self, StepNoise, Stream};
use crate::stats::{mean_and_std_err, sample_index};
use crate::Result;

/// Realised reward at step `t` using the episode's reward stream.
#[inline]
pub(crate) fn draw_reward(dist: &RewardDist, noise: &StepNoise, t: usize) -> f64 {
    match dist {
        RewardDist::Scalar { mean } => *mean,
        RewardDist::Categorical { support, probs } => {
            support[sample_index(probs, noise.uniform(Stream::Reward, t))]
        }
        RewardDist::Gaussian { .. } => dist.sample(&mut noise.rng(Stream::Reward, t)),
    }
}

/// Samples one episode: `s_0 ~ p0`, then `T` steps of action, reward and transition.
pub fn sample_trajectory(
    mdp: &TimeIndexedMdp,
    policy: &TimeIndexedPolicy,
    rng_seed: u64,
) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    let noise = StepNoise::new(rng_seed);
    let horizon = mdp.horizon();
    let mut s = sample_index(mdp.initial_distribution(), noise.uniform(Stream::Initial, 0));
    let mut tr = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        deferred: vec![false; horizon],
    };
    tr.states.push(s);
    for t in 0..horizon {
        let a = policy.sample_action(t, s, noise.uniform(Stream::Action, t));
        let r = draw_reward(mdp.reward(t, s, a), &noise, t);
        s = sample_index(mdp.transition_row(t, s, a), noise.uniform(Stream::Transition, t));
        tr.actions.push(a);
        tr.rewards.push(r);
        tr.states.push(s);
    }
    Ok(tr)
}

/// `n_episodes` episodes under `policy`; episode `i` uses seed `derive(rng_seed, i)`.
pub fn sample_dataset(
    mdp: &TimeIndexedMdp,
    policy: &TimeIndexedPolicy,
    n_episodes: usize,
    rng_seed: u64,
    label: &str,
) -> Result<Dataset> {
    mdp.check_policy(policy)?;
    let trajectories = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| sample_trajectory(mdp, policy, seed::derive(rng_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon(),
        Provenance {
            policy: label.to_string(),
            seed: rng_seed,
        },
        trajectories,
    )
}

/// Expected value of `next` under the transition row at `(t, s, a)`.
#[inline]
pub(crate) fn expected_next(mdp: &TimeIndexedMdp, t: usize, s: usize, a: usize, next: &[f64]) -> f64 {
    mdp.transition_row(t, s, a)
        .iter()
        .zip(next)
        .map(|(p, v)| p * v)
        .sum()
}

/// `Q_t(s, a)` given the value table at `t + 1`.
#[inline]
pub fn q_value(mdp: &TimeIndexedMdp, t: usize, s: usize, a: usize, next: &[f64]) -> f64 {
    mdp.backup(t, mdp.mean_reward(t, s, a), expected_next(mdp, t, s, a, next))
}

/// Exact value tables `V_t` for `t = 0..=T` (with `V_T = 0`).
pub fn value_table(mdp: &TimeIndexedMdp, policy: &TimeIndexedPolicy) -> Result<Vec<Vec<f64>>> {
    mdp.check_policy(policy)?;
    let (n_s, n_a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut table = vec![vec![0.0; n_s]; horizon + 1];
    for t in (0..horizon).rev() {
        let (head, tail) = table.split_at_mut(t + 1);
        let next = &tail[0];
        for s in 0..n_s {
            let probs = policy.action_probs(t, s);
            head[t][s] = (0..n_a)
                .filter(|&a| probs[a] > 0.0)
                .map(|a| probs[a] * q_value(mdp, t, s, a, next))
                .sum();
        }
    }
    Ok(table)
}

/// Exact `V_{pi,t}(s)` for every state by backward induction from `T`.
pub fn value_backward_induction(
    mdp: &TimeIndexedMdp,
    policy: &TimeIndexedPolicy,
    t: usize,
) -> Result<Vec<f64>> {
    if t > mdp.horizon() {
        return Err(dim(format!("t={t} exceeds horizon {}", mdp.horizon())));
    }
    let mut table = value_table(mdp, policy)?;
    Ok(table.swap_remove(t))
}

/// Discounted return of a single rollout started at `(t0, s0)`.
fn rollout_return(
    mdp: &TimeIndexedMdp,
    policy: &TimeIndexedPolicy,
    t0: usize,
    s0: usize,
    noise: &StepNoise,
) -> f64 {
    let mut s = s0;
    let mut ret = 0.0;
    for t in t0..mdp.horizon() {
        let a = policy.sample_action(t, s, noise.uniform(Stream::Action, t));
        ret += mdp.discount_weight(t, t0) * draw_reward(mdp.reward(t, s, a), noise, t);
        s = sample_index(mdp.transition_row(t, s, a), noise.uniform(Stream::Transition, t));
    }
    ret
}

/// Monte-Carlo estimate of `V_{pi,t}(start_state)` with its standard error.
///
/// Rollout `i` uses seed `derive(rng_seed, i)`. The standard error is `+inf`
/// when `n_rollouts == 1`.
pub fn value_monte_carlo(
    mdp: &TimeIndexedMdp,
    policy: &TimeIndexedPolicy,
    start_state: usize,
    t: usize,
    n_rollouts: usize,
    rng_seed: u64,
) -> Result<(f64, f64)> {
    mdp.check_policy(policy)?;
    if n_rollouts == 0 {
        return Err(invalid("n_rollouts must be at least 1"));
    }
    if start_state >= mdp.num_states() || t > mdp.horizon() {
        return Err(dim("start state or time out of range"));
    }
    let returns: Vec<f64> = (0..n_rollouts as u64)
        .into_par_iter()
        .map(|i| rollout_return(mdp, policy, t, start_state, &StepNoise::new(seed::derive(rng_seed, i))))
        .collect();
    Ok(mean_and_std_err(&returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Discounting;

    /// 4-state chain that always advances; last state is a reward-0 sink.
    fn chain(horizon: usize, gamma: f64) -> TimeIndexedMdp {
        let n = 4;
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for _t in 0..horizon {
            for s in 0..n {
                let mut row = vec![0.0; n];
                row[(s + 1).min(n - 1)] = 1.0;
                transitions.extend(row);
                rewards.push(RewardDist::scalar(if s == n - 1 { 0.0 } else { 1.0 }));
            }
        }
        TimeIndexedMdp::new(n, 1, horizon, transitions, rewards, vec![1.0, 0.0, 0.0, 0.0], gamma, Discounting::Absolute)
            .unwrap()
    }

    #[test]
    fn deterministic_chain_trajectory() {
        let m = chain(3, 1.0);
        let pi = TimeIndexedPolicy::uniform(3, 4, 1);
        for seed in [0, 1, 99] {
            let tr = sample_trajectory(&m, &pi, seed).unwrap();
            assert_eq!(tr.states, vec![0, 1, 2, 3]);
            assert_eq!(tr.rewards, vec![1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn point_mass_initial_state() {
        let n = 6;
        let horizon = 2;
        let transitions: Vec<f64> = (0..horizon * n).flat_map(|_| vec![1.0 / n as f64; n]).collect();
        let mut p0 = vec![0.0; n];
        p0[5] = 1.0;
        let m = TimeIndexedMdp::new(n, 1, horizon, transitions, vec![RewardDist::scalar(0.0); horizon * n], p0, 1.0, Discounting::Absolute)
            .unwrap();
        let pi = TimeIndexedPolicy::uniform(horizon, n, 1);
        for seed in 0..20 {
            assert_eq!(sample_trajectory(&m, &pi, seed).unwrap().states[0], 5);
        }
    }

    #[test]
    fn bernoulli_reward_mean_per_step() {
        let horizon = 1000;
        let r = RewardDist::Categorical {
            support: vec![0.0, 1.0],
            probs: vec![0.5, 0.5],
        };
        let m = TimeIndexedMdp::new(1, 1, horizon, vec![1.0; horizon], vec![r; horizon], vec![1.0], 1.0, Discounting::Absolute)
            .unwrap();
        let pi = TimeIndexedPolicy::uniform(horizon, 1, 1);
        let tr = sample_trajectory(&m, &pi, 5).unwrap();
        let mean = tr.total_reward() / horizon as f64;
        assert!((mean - 0.5).abs() <= 0.05, "mean {mean}");
    }

    #[test]
    fn policy_mdp_mismatch_is_an_error() {
        let m = chain(3, 1.0);
        let pi = TimeIndexedPolicy::uniform(4, 4, 1);
        assert!(sample_trajectory(&m, &pi, 0).is_err());
        assert!(value_backward_induction(&m, &pi, 0).is_err());
    }

    #[test]
    fn chain_value_is_sum_of_rewards() {
        let m = chain(3, 1.0);
        let pi = TimeIndexedPolicy::uniform(3, 4, 1);
        assert_eq!(value_backward_induction(&m, &pi, 0).unwrap()[0], 3.0);
    }

    #[test]
    fn zero_discount_uses_absolute_exponent() {
        let m = chain(3, 0.0);
        let pi = TimeIndexedPolicy::uniform(3, 4, 1);
        // gamma^0 = 1 at t = 0; every later reward is weighted 0^j = 0.
        assert_eq!(value_backward_induction(&m, &pi, 0).unwrap()[0], 1.0);
        assert_eq!(value_backward_induction(&m, &pi, 1).unwrap(), vec![0.0; 4]);
        let rel = m.with_discount(0.0, Discounting::Relative).unwrap();
        assert_eq!(value_backward_induction(&rel, &pi, 1).unwrap()[1], 1.0);
    }

    #[test]
    fn absolute_and_relative_differ_by_gamma_power() {
        let m = chain(4, 0.9);
        let rel = m.with_discount(0.9, Discounting::Relative).unwrap();
        let pi = TimeIndexedPolicy::uniform(4, 4, 1);
        let va = value_backward_induction(&m, &pi, 2).unwrap();
        let vr = value_backward_induction(&rel, &pi, 2).unwrap();
        for s in 0..4 {
            assert!((va[s] - 0.81 * vr[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn value_at_horizon_is_zero() {
        let m = chain(3, 1.0);
        let pi = TimeIndexedPolicy::uniform(3, 4, 1);
        assert_eq!(value_backward_induction(&m, &pi, 3).unwrap(), vec![0.0; 4]);
        assert!(value_backward_induction(&m, &pi, 4).is_err());
    }

    #[test]
    fn monte_carlo_on_deterministic_mdp_is_exact() {
        let m = chain(3, 1.0);
        let pi = TimeIndexedPolicy::uniform(3, 4, 1);
        let (mean, se) = value_monte_carlo(&m, &pi, 0, 0, 50, 3).unwrap();
        assert_eq!(mean, 3.0);
        assert_eq!(se, 0.0);
        let (mean1, se1) = value_monte_carlo(&m, &pi, 0, 0, 1, 3).unwrap();
        assert_eq!(mean1, 3.0);
        assert!(se1.is_infinite());
        assert!(value_monte_carlo(&m, &pi, 0, 0, 0, 3).is_err());
    }
}

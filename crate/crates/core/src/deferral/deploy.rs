use rayon::prelude::*;

use super::{DeferralPolicy, EffectivePolicy};
use crate::error::invalid;
use crate::mdp::{value::draw_reward, Dataset, Provenance, TimeIndexedMdp, TimeIndexedPolicy, Trajectory};
use crate::seed::{self, StepNoise, Stream};
use crate::stats::{mean_and_std_err, sample_index};
use crate::Result;

/// Result of rolling out an effective policy on the true environment.
#[derive(Debug, Clone)]
pub struct Deployment {
    /// Recorded rewards have the deferral cost subtracted at deferred steps.
    pub dataset: Dataset,
    pub mean_value: f64,
    pub std_err: f64,
}

/// One episode under the effective policy with episode seed `episode_seed`.
pub(crate) fn rollout_effective(
    env: &TimeIndexedMdp,
    eff: &EffectivePolicy<'_>,
    cost: f64,
    episode_seed: u64,
) -> (Trajectory, f64) {
    let noise = StepNoise::new(episode_seed);
    let horizon = env.horizon();
    let mut s = sample_index(env.initial_distribution(), noise.uniform(Stream::Initial, 0));
    let mut tr = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        deferred: Vec::with_capacity(horizon),
    };
    tr.states.push(s);
    let mut deferred_before = false;
    let mut value = 0.0;
    for t in 0..horizon {
        let deferred = eff.defers(t, s, deferred_before);
        deferred_before |= deferred;
        let a = sample_index(eff.action_probs(t, s, deferred), noise.uniform(Stream::Action, t));
        let mut r = draw_reward(env.reward(t, s, a), &noise, t);
        if deferred {
            r -= cost;
        }
        value += env.discount_weight(t, 0) * r;
        s = sample_index(env.transition_row(t, s, a), noise.uniform(Stream::Transition, t));
        tr.actions.push(a);
        tr.rewards.push(r);
        tr.deferred.push(deferred);
        tr.states.push(s);
    }
    (tr, value)
}

/// Rolls out the effective policy for `n_episodes` episodes. Episode `i`
/// uses seed `derive(rng_seed, i)`, so deployments of different deferral
/// policies with the same seed share their random numbers.
pub fn deploy(
    env: &TimeIndexedMdp,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    deferral: &DeferralPolicy,
    n_episodes: usize,
    rng_seed: u64,
) -> Result<Deployment> {
    env.check_policy(pi_tar)?;
    env.check_policy(pi_0)?;
    if n_episodes == 0 {
        return Err(invalid("n_episodes must be at least 1"));
    }
    let eff = EffectivePolicy::new(pi_tar, pi_0, deferral)?;
    let (trajectories, values): (Vec<Trajectory>, Vec<f64>) = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| rollout_effective(env, &eff, deferral.cost(), seed::derive(rng_seed, i)))
        .unzip();
    let (mean_value, std_err) = mean_and_std_err(&values);
    let dataset = Dataset::new(
        env.num_states(),
        env.num_actions(),
        env.horizon(),
        Provenance {
            policy: format!("deploy:{}", deferral.method()),
            seed: rng_seed,
        },
        trajectories,
    )?;
    Ok(Deployment {
        dataset,
        mean_value,
        std_err,
    })
}

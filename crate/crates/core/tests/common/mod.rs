//! Shared instance generators and exact oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use sltd::deferral::EffectivePolicy;
use sltd::mdp::{Discounting, RewardDist, TimeIndexedMdp, TimeIndexedPolicy};
use sltd::seed;
use sltd::Prng;

pub fn rng(s: u64) -> Prng {
    seed::rng(s)
}

/// Random distribution of length `n`; with probability 0.3 one entry is zeroed.
pub fn random_dist(rng: &mut Prng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    if n > 1 && rng.random::<f64>() < 0.3 {
        let k = rng.random_range(0..n);
        w[k] = 0.0;
    }
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

pub fn random_reward(rng: &mut Prng, stochastic: bool) -> RewardDist {
    if !stochastic || rng.random::<f64>() < 0.4 {
        return RewardDist::scalar(rng.random_range(-2.0..2.0));
    }
    if rng.random::<bool>() {
        let support: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        RewardDist::Categorical {
            support,
            probs: random_dist(rng, 3),
        }
    } else {
        RewardDist::Gaussian {
            mean: rng.random_range(-2.0..2.0),
            precision: rng.random_range(0.5..4.0),
        }
    }
}

pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

pub fn random_dims(rng: &mut Prng, max_s: usize, max_a: usize, max_t: usize) -> Dims {
    Dims {
        states: rng.random_range(1..=max_s),
        actions: rng.random_range(1..=max_a),
        horizon: rng.random_range(1..=max_t),
    }
}

pub fn random_mdp_with(rng: &mut Prng, d: &Dims, stochastic_rewards: bool, gamma: f64, discounting: Discounting) -> TimeIndexedMdp {
    let cells = d.horizon * d.states * d.actions;
    let transitions: Vec<f64> = (0..cells).flat_map(|_| random_dist(rng, d.states)).collect();
    let rewards = (0..cells).map(|_| random_reward(rng, stochastic_rewards)).collect();
    let initial = random_dist(rng, d.states);
    TimeIndexedMdp::new(d.states, d.actions, d.horizon, transitions, rewards, initial, gamma, discounting).unwrap()
}

/// Random MDP with random discount and convention.
pub fn random_mdp(rng: &mut Prng, d: &Dims, stochastic_rewards: bool) -> TimeIndexedMdp {
    let gamma = if rng.random::<f64>() < 0.3 { 1.0 } else { rng.random_range(0.0..1.0) };
    let discounting = if rng.random::<bool>() { Discounting::Absolute } else { Discounting::Relative };
    random_mdp_with(rng, d, stochastic_rewards, gamma, discounting)
}

pub fn random_policy(rng: &mut Prng, d: &Dims) -> TimeIndexedPolicy {
    let probs = (0..d.horizon * d.states).flat_map(|_| random_dist(rng, d.actions)).collect();
    TimeIndexedPolicy::new(d.horizon, d.states, d.actions, probs).unwrap()
}

/// `V_{pi,t0}(s0)` by enumerating every action/next-state path explicitly.
pub fn brute_force_value(mdp: &TimeIndexedMdp, pi: &TimeIndexedPolicy, t0: usize, s0: usize) -> f64 {
    fn walk(mdp: &TimeIndexedMdp, pi: &TimeIndexedPolicy, t0: usize, t: usize, s: usize, prob: f64, acc: f64, total: &mut f64) {
        if t == mdp.horizon() {
            *total += prob * acc;
            return;
        }
        for a in 0..mdp.num_actions() {
            let pa = pi.prob(t, s, a);
            if pa == 0.0 {
                continue;
            }
            let r = mdp.discount_weight(t, t0) * mdp.mean_reward(t, s, a);
            for (s2, &p) in mdp.transition_row(t, s, a).iter().enumerate() {
                if p > 0.0 {
                    walk(mdp, pi, t0, t + 1, s2, prob * pa * p, acc + r, total);
                }
            }
        }
    }
    let mut total = 0.0;
    walk(mdp, pi, t0, t0, s0, 1.0, 0.0, &mut total);
    total
}

/// Mean and variance of the realised reward.
pub fn reward_moments(r: &RewardDist) -> (f64, f64) {
    match r {
        RewardDist::Scalar { mean } => (*mean, *mean * *mean),
        RewardDist::Categorical { support, probs } => (
            support.iter().zip(probs).map(|(x, p)| x * p).sum(),
            support.iter().zip(probs).map(|(x, p)| x * x * p).sum(),
        ),
        RewardDist::Gaussian { mean, precision } => (*mean, mean * mean + 1.0 / precision),
    }
}

/// Exact `(E[Y], E[Y^2])` of the outcome after deferring at `(t_d, s_d)`.
///
/// `slice_at(t)` lists `(weight, model)` pairs for the dynamics used at time
/// `t`; a single pair means the model is known at that time. Rewards and the
/// next state at one step come from the same model. `terminal` selects the
/// last-step reward, otherwise the discounted sum from `t_d`.
pub fn exact_outcome_moments<'a>(
    slice_at: &dyn Fn(usize) -> Vec<(f64, &'a TimeIndexedMdp)>,
    eff: &EffectivePolicy<'_>,
    t_d: usize,
    s_d: usize,
    terminal: bool,
) -> (f64, f64) {
    let any = slice_at(t_d)[0].1;
    let (n_s, horizon) = (any.num_states(), any.horizon());
    let mut m1 = vec![0.0; n_s];
    let mut m2 = vec![0.0; n_s];
    for t in (t_d..horizon).rev() {
        let w = if terminal {
            if t == horizon - 1 {
                1.0
            } else {
                0.0
            }
        } else {
            any.discount_weight(t, t_d)
        };
        let mut n1 = vec![0.0; n_s];
        let mut n2 = vec![0.0; n_s];
        for s in 0..n_s {
            if t == t_d && s != s_d {
                continue;
            }
            let deferred = t == t_d || eff.defers(t, s, true);
            let probs = eff.action_probs(t, s, deferred);
            for (a, &pa) in probs.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (wm, m) in slice_at(t) {
                    let (er, er2) = reward_moments(m.reward(t, s, a));
                    let row = m.transition_row(t, s, a);
                    let f1: f64 = row.iter().zip(&m1).map(|(p, v)| p * v).sum();
                    let f2: f64 = row.iter().zip(&m2).map(|(p, v)| p * v).sum();
                    n1[s] += pa * wm * (w * er + f1);
                    n2[s] += pa * wm * (w * w * er2 + 2.0 * w * er * f1 + f2);
                }
            }
        }
        m1 = n1;
        m2 = n2;
    }
    (m1[s_d], m2[s_d])
}

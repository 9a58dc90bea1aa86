use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deferral::EffectivePolicy;
use crate::error::{dim, invalid};
use crate::mdp::{value::draw_reward, RewardDist, TimeIndexedMdp};
use crate::posterior::{CellDraw, ModelPosterior};
use crate::seed::{self, StepNoise, Stream};
use crate::stats::{mean, sample_index, sample_variance};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Reward collected at the last step `T - 1`.
    #[default]
    TerminalReward,
    /// Discounted sum of rewards from the deferral time to the horizon.
    CumulativeReward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSettings {
    pub n_outer: usize,
    pub n_inner: usize,
    pub outcome: OutcomeKind,
    pub seed: u64,
}

impl Default for DecomposeSettings {
    fn default() -> Self {
        Self {
            n_outer: 200,
            n_inner: 200,
            outcome: OutcomeKind::TerminalReward,
            seed: 0,
        }
    }
}

/// Jackknife standard errors over outer draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub mean_outcome: f64,
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl StdErrors {
    /// `sqrt(se_total^2 + se_aleatoric^2 + se_epistemic^2)`.
    pub fn combined(&self) -> f64 {
        (self.total.powi(2) + self.aleatoric.powi(2) + self.epistemic.powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub deferral_time: usize,
    pub deferral_state: usize,
    pub outcome_kind: OutcomeKind,
    pub n_outer: usize,
    pub n_inner: usize,
    pub mean_outcome: f64,
    /// Pooled variance of all `n_outer * n_inner` outcomes.
    pub total_variance: f64,
    /// Mean over outer draws of the within-draw variance.
    pub aleatoric_variance: f64,
    /// Variance over outer draws of the within-draw means, less the
    /// `aleatoric / n_inner` finite-sample bias, clamped at zero.
    pub epistemic_variance: f64,
    /// Amount removed by clamping the epistemic term at zero.
    pub epistemic_clamped: f64,
    pub std_errors: StdErrors,
}

impl UncertaintyReport {
    /// `total - (aleatoric + epistemic)`.
    pub fn identity_residual(&self) -> f64 {
        self.total_variance - (self.aleatoric_variance + self.epistemic_variance)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Dynamics at the deferral time for one outer draw.
enum OuterDraw {
    /// Cells `(t_d, s_d, a)` for every action; later times are redrawn per rollout.
    Cells(Vec<CellDraw>),
    /// A whole model, reused for every later time.
    Model(TimeIndexedMdp),
}

struct Rollout<'a, P: ?Sized> {
    post: &'a P,
    eff: EffectivePolicy<'a>,
    t_d: usize,
    s_d: usize,
    outcome: OutcomeKind,
    horizon: usize,
}

impl<P: ModelPosterior + ?Sized> Rollout<'_, P> {
    fn weight(&self, t: usize) -> f64 {
        let g = self.post.gamma();
        match self.post.discounting() {
            crate::mdp::Discounting::Absolute => g.powi(t as i32),
            crate::mdp::Discounting::Relative => g.powi((t - self.t_d) as i32),
        }
    }

    fn run(&self, outer: &OuterDraw, episode_seed: u64) -> f64 {
        let noise = StepNoise::new(episode_seed);
        let mut future = seed::rng(seed::derive(episode_seed, 0xF0));
        let mut s = self.s_d;
        let mut total = 0.0;
        let mut last = 0.0;
        for t in self.t_d..self.horizon {
            let deferred = t == self.t_d || self.eff.defers(t, s, true);
            let a = sample_index(self.eff.action_probs(t, s, deferred), noise.uniform(Stream::Action, t));
            let (r, next) = match outer {
                OuterDraw::Model(m) => step(m.reward(t, s, a), m.transition_row(t, s, a), &noise, t),
                OuterDraw::Cells(cells) if t == self.t_d => step(&cells[a].reward, &cells[a].transition, &noise, t),
                OuterDraw::Cells(_) => {
                    let c = self.post.sample_cell(t, s, a, &mut future);
                    step(&c.reward, &c.transition, &noise, t)
                }
            };
            total += self.weight(t) * r;
            last = r;
            s = next;
        }
        match self.outcome {
            OutcomeKind::TerminalReward => last,
            OutcomeKind::CumulativeReward => total,
        }
    }
}

#[inline]
fn step(reward: &RewardDist, row: &[f64], noise: &StepNoise, t: usize) -> (f64, usize) {
    (draw_reward(reward, noise, t), sample_index(row, noise.uniform(Stream::Transition, t)))
}

/// Per-outer-draw summary: inner mean, inner (n - 1) variance, within sum of squares.
#[derive(Clone, Copy)]
struct DrawSummary {
    mean: f64,
    var: f64,
    ss: f64,
}

struct Components {
    mean: f64,
    total: f64,
    aleatoric: f64,
    epistemic_raw: f64,
}

fn components(draws: &[DrawSummary], k: usize) -> Components {
    let n = draws.len();
    let means: Vec<f64> = draws.iter().map(|d| d.mean).collect();
    let grand = mean(&means);
    let between: f64 = means.iter().map(|m| (m - grand).powi(2)).sum();
    let within: f64 = draws.iter().map(|d| d.ss).sum();
    let aleatoric = mean(&draws.iter().map(|d| d.var).collect::<Vec<_>>());
    Components {
        mean: grand,
        total: (within + k as f64 * between) / (n * k - 1) as f64,
        aleatoric,
        epistemic_raw: sample_variance(&means) - aleatoric / k as f64,
    }
}

fn jackknife(draws: &[DrawSummary], k: usize) -> StdErrors {
    let n = draws.len();
    if n < 3 {
        let inf = f64::INFINITY;
        return StdErrors {
            mean_outcome: inf,
            total: inf,
            aleatoric: inf,
            epistemic: inf,
        };
    }
    let kf = k as f64;
    let (sa, sb, sc, sd) = draws.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, d| {
        (acc.0 + d.mean, acc.1 + d.mean * d.mean, acc.2 + d.var, acc.3 + d.ss)
    });
    let m = (n - 1) as f64;
    let loo: Vec<[f64; 4]> = draws
        .iter()
        .map(|d| {
            let (a, b, c, dd) = (sa - d.mean, sb - d.mean * d.mean, sc - d.var, sd - d.ss);
            let between = (b - a * a / m).max(0.0);
            let alea = c / m;
            [a / m, (dd + kf * between) / (m * kf - 1.0), alea, between / (m - 1.0) - alea / kf]
        })
        .collect();
    let se = |i: usize| {
        let xs: Vec<f64> = loo.iter().map(|v| v[i]).collect();
        let xbar = mean(&xs);
        ((m / n as f64) * xs.iter().map(|x| (x - xbar).powi(2)).sum::<f64>()).sqrt()
    };
    StdErrors {
        mean_outcome: se(0),
        total: se(1),
        aleatoric: se(2),
        epistemic: se(3),
    }
}

/// Nested Monte-Carlo decomposition of the outcome variance after deferring
/// at `(t_d, s_d)`.
///
/// Each outer draw samples the dynamics at `t_d` from the posterior. Each of
/// its inner rollouts takes the first action from the expert, then follows
/// the effective policy, drawing later-time dynamics from the posterior as
/// they are visited. For posteriors that couple time steps the outer draw is
/// a whole model and later steps reuse it. Outcomes are environment rewards
/// and do not include deferral costs.
pub fn decompose_at_deferral<P: ModelPosterior + ?Sized>(
    post: &P,
    eff: &EffectivePolicy<'_>,
    s_d: usize,
    t_d: usize,
    settings: &DecomposeSettings,
) -> Result<UncertaintyReport> {
    let horizon = post.horizon();
    if t_d >= horizon || s_d >= post.num_states() {
        return Err(dim(format!("deferral point (t={t_d}, s={s_d}) out of range")));
    }
    if settings.n_outer < 2 || settings.n_inner < 2 {
        return Err(invalid("n_outer and n_inner must both be at least 2"));
    }
    if eff.target.horizon() != horizon
        || eff.target.num_states() != post.num_states()
        || eff.target.num_actions() != post.num_actions()
    {
        return Err(dim("effective policy does not match the posterior"));
    }
    let ro = Rollout {
        post,
        eff: *eff,
        t_d,
        s_d,
        outcome: settings.outcome,
        horizon,
    };
    let k = settings.n_inner;
    let draws: Vec<DrawSummary> = (0..settings.n_outer as u64)
        .into_par_iter()
        .map(|j| {
            let outer_seed = seed::derive(settings.seed, j);
            let outer = if post.time_coupled() {
                OuterDraw::Model(post.sample_mdp_indexed(j, settings.seed)?)
            } else {
                OuterDraw::Cells(post.sample_state_rows(t_d, s_d, &mut seed::rng(outer_seed)))
            };
            let ys: Vec<f64> = (0..k as u64)
                .map(|i| ro.run(&outer, seed::derive(outer_seed, i + 1)))
                .collect();
            let m = mean(&ys);
            let ss: f64 = ys.iter().map(|y| (y - m).powi(2)).sum();
            Ok(DrawSummary {
                mean: m,
                var: ss / (k - 1) as f64,
                ss,
            })
        })
        .collect::<Result<_>>()?;

    let c = components(&draws, k);
    let std_errors = jackknife(&draws, k);
    let (epistemic, clamped) = if c.epistemic_raw < 0.0 {
        warn!(
            "epistemic variance estimate {:.3e} at (t={t_d}, s={s_d}) clamped to 0 (s.e. {:.3e})",
            c.epistemic_raw, std_errors.epistemic
        );
        (0.0, -c.epistemic_raw)
    } else {
        (c.epistemic_raw, 0.0)
    };
    Ok(UncertaintyReport {
        deferral_time: t_d,
        deferral_state: s_d,
        outcome_kind: settings.outcome,
        n_outer: settings.n_outer,
        n_inner: k,
        mean_outcome: c.mean,
        total_variance: c.total,
        aleatoric_variance: c.aleatoric,
        epistemic_variance: epistemic,
        epistemic_clamped: clamped,
        std_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deferral::DeferralPolicy;
    use crate::mdp::{Discounting, TimeIndexedPolicy};
    use crate::posterior::AtomicPosterior;

    fn coin_mdp(p_heads: f64, stochastic_reward: bool) -> TimeIndexedMdp {
        // 2 states, 1 action, T = 2; reward 1 in state 1
        let row = [1.0 - p_heads, p_heads];
        let transitions = (0..4).flat_map(|_| row).collect();
        let r1 = if stochastic_reward {
            RewardDist::Categorical {
                support: vec![0.0, 1.0],
                probs: vec![0.5, 0.5],
            }
        } else {
            RewardDist::scalar(1.0)
        };
        let rewards = vec![RewardDist::scalar(0.0), r1.clone(), RewardDist::scalar(0.0), r1];
        TimeIndexedMdp::new(2, 1, 2, transitions, rewards, vec![1.0, 0.0], 1.0, Discounting::Absolute).unwrap()
    }

    fn run(post: &AtomicPosterior, n: usize) -> UncertaintyReport {
        let pi = TimeIndexedPolicy::uniform(2, 2, 1);
        let never = DeferralPolicy::never(2, 2);
        let eff = EffectivePolicy::new(&pi, &pi, &never).unwrap();
        let settings = DecomposeSettings {
            n_outer: n,
            n_inner: n,
            outcome: OutcomeKind::CumulativeReward,
            seed: 5,
        };
        decompose_at_deferral(post, &eff, 0, 0, &settings).unwrap()
    }

    #[test]
    fn deterministic_point_mass_has_no_variance() {
        let r = run(&AtomicPosterior::point_mass(coin_mdp(1.0, false)), 20);
        assert_eq!(r.total_variance, 0.0);
        assert_eq!(r.aleatoric_variance, 0.0);
        assert_eq!(r.epistemic_variance, 0.0);
        assert_eq!(r.mean_outcome, 1.0);
    }

    #[test]
    fn point_mass_with_noise_is_all_aleatoric() {
        let r = run(&AtomicPosterior::point_mass(coin_mdp(0.5, true)), 60);
        assert!(r.total_variance > 0.1);
        assert!(r.epistemic_variance <= 3.0 * r.std_errors.epistemic);
        assert!((r.total_variance - r.aleatoric_variance).abs() <= 3.0 * r.std_errors.combined());
    }

    #[test]
    fn degenerate_sizes_are_rejected() {
        let post = AtomicPosterior::point_mass(coin_mdp(0.5, true));
        let pi = TimeIndexedPolicy::uniform(2, 2, 1);
        let never = DeferralPolicy::never(2, 2);
        let eff = EffectivePolicy::new(&pi, &pi, &never).unwrap();
        let bad = DecomposeSettings {
            n_outer: 1,
            ..Default::default()
        };
        assert!(decompose_at_deferral(&post, &eff, 0, 0, &bad).is_err());
        assert!(decompose_at_deferral(&post, &eff, 0, 2, &DecomposeSettings::default()).is_err());
    }

    #[test]
    fn seed_deterministic() {
        let post = AtomicPosterior::stratified(vec![coin_mdp(0.2, true), coin_mdp(0.8, true)]).unwrap();
        assert_eq!(run(&post, 10), run(&post, 10));
    }
}

//! Factored-vitals surrogate of a sepsis treatment simulator.
//!
//! The state is the tuple of discretised vital levels (heart rate, systolic
//! blood pressure, oxygen saturation, glucose), encoded mixed-radix with heart
//! rate as the fastest-varying digit. The action is a bit set of treatments:
//! bit 0 antibiotics (heart rate), bit 1 vasopressors (blood pressure), bit 2
//! mechanical ventilation (oxygen). Glucose has no associated treatment.
//!
//! Each vital evolves independently. While its treatment is active it moves
//! one level toward normal. Otherwise it fluctuates one level up or down
//! (equal odds) with a time-scheduled probability; moves past a boundary
//! leave the level unchanged. A vital at its normal level uses the first
//! schedule, an abnormal vital the second.

use serde::{Deserialize, Serialize};

use super::BuiltEnv;
use crate::mdp::{Discounting, RewardDist, TimeIndexedMdp, TimeIndexedPolicy};
use crate::{Error, Result};

/// `multiplier * min(cap, base + slope * t / T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationSchedule {
    pub base: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default = "one")]
    pub multiplier: f64,
}

fn one() -> f64 {
    1.0
}

impl FluctuationSchedule {
    pub const fn constant(p: f64) -> Self {
        Self {
            base: p,
            slope: 0.0,
            cap: None,
            multiplier: 1.0,
        }
    }

    pub const fn capped_ramp(base: f64, slope: f64, cap: f64, multiplier: f64) -> Self {
        Self {
            base,
            slope,
            cap: Some(cap),
            multiplier,
        }
    }

    /// Probability at step `t` of an episode of length `horizon`.
    pub fn at(&self, t: usize, horizon: usize) -> f64 {
        let ramp = self.base + self.slope * t as f64 / horizon as f64;
        let capped = match self.cap {
            Some(c) => ramp.min(c),
            None => ramp,
        };
        self.multiplier * capped
    }

    fn validate(&self, name: &str, horizon: usize) -> Result<()> {
        for t in 0..=horizon {
            let p = self.at(t, horizon);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "fluctuation schedule for {name} gives probability {p} at t={t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalSpec {
    pub levels: usize,
    pub normal: usize,
    /// Fluctuation schedule while at the normal level.
    pub at_normal: FluctuationSchedule,
    /// Fluctuation schedule while away from the normal level.
    pub off_normal: FluctuationSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitalsConfig {
    pub horizon: usize,
    pub heart_rate: VitalSpec,
    pub systolic_bp: VitalSpec,
    pub percoxyg: VitalSpec,
    pub glucose: VitalSpec,
    /// Expert exploration `eps(t) = min(1, epsilon_start + epsilon_growth * t / T)`.
    pub expert_epsilon_start: f64,
    pub expert_epsilon_growth: f64,
    /// The target policy acts uniformly at random from this step on.
    pub target_random_from: usize,
    pub gamma: f64,
    pub discounting: Discounting,
}

impl Default for VitalsConfig {
    fn default() -> Self {
        let ramp = |base, slope| VitalSpec {
            levels: 3,
            normal: 1,
            at_normal: FluctuationSchedule::capped_ramp(base, slope, 0.5, 1.0),
            off_normal: FluctuationSchedule::capped_ramp(base, slope, 0.5, 2.0),
        };
        Self {
            horizon: 10,
            heart_rate: ramp(0.1, 0.8),
            systolic_bp: ramp(0.1, 0.5),
            percoxyg: VitalSpec {
                levels: 2,
                normal: 1,
                ..ramp(0.1, 0.5)
            },
            glucose: VitalSpec {
                levels: 5,
                normal: 2,
                at_normal: FluctuationSchedule::capped_ramp(0.3, 0.5, 0.5, 1.0),
                off_normal: FluctuationSchedule::constant(0.6),
            },
            expert_epsilon_start: 0.1,
            expert_epsilon_growth: 0.3,
            target_random_from: 3,
            gamma: 1.0,
            discounting: Discounting::Absolute,
        }
    }
}

pub const NUM_TREATMENTS: usize = 3;

/// Mixed-radix codec between state indices and vital levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitalsLayout {
    pub radices: [usize; 4],
    pub normals: [usize; 4],
}

impl VitalsLayout {
    pub fn num_states(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn num_actions(&self) -> usize {
        1 << NUM_TREATMENTS
    }

    pub fn encode(&self, levels: [usize; 4]) -> usize {
        levels
            .iter()
            .zip(&self.radices)
            .rev()
            .fold(0, |acc, (&l, &r)| acc * r + l)
    }

    pub fn decode(&self, mut index: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for (slot, &r) in out.iter_mut().zip(&self.radices) {
            *slot = index % r;
            index /= r;
        }
        out
    }

    pub fn all_normal(&self, levels: [usize; 4]) -> bool {
        levels == self.normals
    }

    pub fn all_abnormal(&self, levels: [usize; 4]) -> bool {
        levels.iter().zip(&self.normals).all(|(l, n)| l != n)
    }
}

impl VitalsConfig {
    fn vitals(&self) -> [(&'static str, &VitalSpec); 4] {
        [
            ("heart_rate", &self.heart_rate),
            ("systolic_bp", &self.systolic_bp),
            ("percoxyg", &self.percoxyg),
            ("glucose", &self.glucose),
        ]
    }

    pub fn layout(&self) -> VitalsLayout {
        let v = self.vitals();
        VitalsLayout {
            radices: [v[0].1.levels, v[1].1.levels, v[2].1.levels, v[3].1.levels],
            normals: [v[0].1.normal, v[1].1.normal, v[2].1.normal, v[3].1.normal],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("vitals.horizon must be positive".into()));
        }
        for (name, spec) in self.vitals() {
            if spec.levels < 2 || spec.normal >= spec.levels {
                return Err(Error::Config(format!(
                    "vitals.{name}: need at least 2 levels and normal < levels"
                )));
            }
            spec.at_normal.validate(name, self.horizon)?;
            spec.off_normal.validate(name, self.horizon)?;
        }
        if !(0.0..=1.0).contains(&self.expert_epsilon_start) || self.expert_epsilon_growth < 0.0 {
            return Err(Error::Config("vitals expert epsilon schedule out of range".into()));
        }
        Ok(())
    }

    /// Fluctuation probability of the vital at `index` (0 = heart rate) at level `level`.
    pub fn fluctuation_probability(&self, index: usize, level: usize, t: usize) -> f64 {
        let spec = self.vitals()[index].1;
        let sched = if level == spec.normal { &spec.at_normal } else { &spec.off_normal };
        sched.at(t, self.horizon)
    }

    pub fn expert_epsilon(&self, t: usize) -> f64 {
        (self.expert_epsilon_start + self.expert_epsilon_growth * t as f64 / self.horizon as f64).min(1.0)
    }

    /// Next-level distribution of one vital.
    fn vital_marginal(&self, index: usize, level: usize, treated: bool, t: usize) -> Vec<f64> {
        let spec = self.vitals()[index].1;
        let mut row = vec![0.0; spec.levels];
        if treated {
            let next = match level.cmp(&spec.normal) {
                std::cmp::Ordering::Less => level + 1,
                std::cmp::Ordering::Greater => level - 1,
                std::cmp::Ordering::Equal => level,
            };
            row[next] = 1.0;
            return row;
        }
        let p = self.fluctuation_probability(index, level, t);
        row[level] += 1.0 - p;
        row[level.saturating_sub(1)] += p / 2.0;
        row[(level + 1).min(spec.levels - 1)] += p / 2.0;
        row
    }

    /// Greedy expert action: treat every abnormal vital that has a treatment.
    fn greedy_action(&self, layout: &VitalsLayout, s: usize) -> usize {
        let levels = layout.decode(s);
        (0..NUM_TREATMENTS)
            .filter(|&v| levels[v] != layout.normals[v])
            .fold(0, |acc, v| acc | (1 << v))
    }
}

/// Builds the vitals MDP with its target and expert policies.
pub fn build_vitals_env(cfg: &VitalsConfig) -> Result<BuiltEnv> {
    cfg.validate()?;
    let layout = cfg.layout();
    let (n_s, n_a, horizon) = (layout.num_states(), layout.num_actions(), cfg.horizon);
    let mut transitions = Vec::with_capacity(horizon * n_s * n_a * n_s);
    let mut rewards = Vec::with_capacity(horizon * n_s * n_a);
    for t in 0..horizon {
        for s in 0..n_s {
            let levels = layout.decode(s);
            for a in 0..n_a {
                let marginals: Vec<Vec<f64>> = (0..4)
                    .map(|v| {
                        let treated = v < NUM_TREATMENTS && a & (1 << v) != 0;
                        cfg.vital_marginal(v, levels[v], treated, t)
                    })
                    .collect();
                for s_next in 0..n_s {
                    let next = layout.decode(s_next);
                    transitions.push((0..4).map(|v| marginals[v][next[v]]).product::<f64>());
                }
                let r = if layout.all_normal(levels) && a == 0 {
                    1.0
                } else if layout.all_abnormal(levels) {
                    -1.0
                } else {
                    0.0
                };
                rewards.push(RewardDist::scalar(r));
            }
        }
    }
    let initial = vec![1.0 / n_s as f64; n_s];
    let mdp = TimeIndexedMdp::new(n_s, n_a, horizon, transitions, rewards, initial, cfg.gamma, cfg.discounting)?;

    let expert_row = |t: usize, s: usize| {
        let eps = cfg.expert_epsilon(t);
        let mut row = vec![eps / n_a as f64; n_a];
        row[cfg.greedy_action(&layout, s)] += 1.0 - eps;
        row
    };
    let pi_0 = TimeIndexedPolicy::from_fn(horizon, n_s, n_a, expert_row)?;
    let pi_tar = TimeIndexedPolicy::from_fn(horizon, n_s, n_a, |t, s| {
        if t >= cfg.target_random_from {
            vec![1.0 / n_a as f64; n_a]
        } else {
            expert_row(t, s)
        }
    })?;
    Ok(BuiltEnv { mdp, pi_tar, pi_0 })
}

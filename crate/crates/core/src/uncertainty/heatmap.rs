use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::deferral::{DeferralPolicy, EffectivePolicy};
use crate::error::invalid;
use crate::mdp::{value::draw_reward, TimeIndexedMdp, TimeIndexedPolicy};
use crate::seed::{self, StepNoise, Stream};
use crate::stats::{sample_index, sample_variance};
use crate::Result;

/// Literal written for undefined cells.
pub const UNDEFINED: &str = "n/d";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeatCell {
    Value(f64),
    Undefined,
}

impl HeatCell {
    pub fn value(self) -> Option<f64> {
        match self {
            HeatCell::Value(v) => Some(v),
            HeatCell::Undefined => None,
        }
    }
}

impl fmt::Display for HeatCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeatCell::Value(v) => write!(f, "{v}"),
            HeatCell::Undefined => f.write_str(UNDEFINED),
        }
    }
}

impl Serialize for HeatCell {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HeatCell::Value(v) => ser.serialize_f64(*v),
            HeatCell::Undefined => ser.serialize_str(UNDEFINED),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatRow {
    /// Time of the first deferral in the baseline rollout.
    pub first_deferral: usize,
    /// Number of baseline rollouts whose first deferral is at this time.
    pub n: usize,
    /// Relative variance change `(Var_delayed - Var_0) / Var_0`, indexed by the delayed time.
    pub cells: Vec<HeatCell>,
}

/// Relative change in outcome variance when the first deferral is delayed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayHeatmap {
    pub horizon: usize,
    pub n_rollouts: usize,
    /// Rollouts that never deferred.
    pub n_never_deferred: usize,
    pub rows: Vec<HeatRow>,
}

impl DelayHeatmap {
    pub fn cell(&self, first_deferral: usize, delayed_to: usize) -> HeatCell {
        self.rows[first_deferral].cells[delayed_to]
    }

    /// Header `first_deferral,n,0,1,...,T-1`, one row per deferral time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["first_deferral".to_string(), "n".to_string()];
        header.extend((0..self.horizon).map(|t| t.to_string()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.first_deferral.to_string(), row.n.to_string()];
            rec.extend(row.cells.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Schedule {
    /// The effective policy as deployed.
    Base,
    /// No deferral before `t'`, forced deferral at `t'`, then the rule.
    DelayedTo(usize),
}

/// Whole-episode discounted environment reward, and the first deferral time.
fn simulate(env: &TimeIndexedMdp, eff: &EffectivePolicy<'_>, schedule: Schedule, episode_seed: u64) -> (f64, Option<usize>) {
    let noise = StepNoise::new(episode_seed);
    let mut s = sample_index(env.initial_distribution(), noise.uniform(Stream::Initial, 0));
    let mut first = None;
    let mut value = 0.0;
    for t in 0..env.horizon() {
        let deferred = match schedule {
            Schedule::Base => eff.defers(t, s, first.is_some()),
            Schedule::DelayedTo(d) if t < d => false,
            Schedule::DelayedTo(d) if t == d => true,
            Schedule::DelayedTo(_) => eff.defers(t, s, true),
        };
        if deferred && first.is_none() {
            first = Some(t);
        }
        let a = sample_index(eff.action_probs(t, s, deferred), noise.uniform(Stream::Action, t));
        value += env.discount_weight(t, 0) * draw_reward(env.reward(t, s, a), &noise, t);
        s = sample_index(env.transition_row(t, s, a), noise.uniform(Stream::Transition, t));
    }
    (value, first)
}

/// Builds the delayed-deferral heatmap on the true environment.
///
/// Baseline rollouts are grouped by their first deferral time `t_d`. For each
/// `t' >= t_d` the group is replayed with the same random numbers but with
/// deferral suppressed on `[t_d, t')` and forced at `t'`. Cells are undefined
/// for `t' < t_d`, for groups with fewer than two rollouts and for groups with
/// zero baseline variance.
pub fn delay_heatmap(
    env: &TimeIndexedMdp,
    pi_tar: &TimeIndexedPolicy,
    pi_0: &TimeIndexedPolicy,
    deferral: &DeferralPolicy,
    n_rollouts: usize,
    rng_seed: u64,
) -> Result<DelayHeatmap> {
    env.check_policy(pi_tar)?;
    env.check_policy(pi_0)?;
    if n_rollouts < 2 {
        return Err(invalid("n_rollouts must be at least 2"));
    }
    let eff = EffectivePolicy::new(pi_tar, pi_0, deferral)?;
    let horizon = env.horizon();
    let seeds: Vec<u64> = (0..n_rollouts as u64).map(|i| seed::derive(rng_seed, i)).collect();
    let base: Vec<(f64, Option<usize>)> = seeds.par_iter().map(|&sd| simulate(env, &eff, Schedule::Base, sd)).collect();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    let mut n_never = 0;
    for (i, (_, first)) in base.iter().enumerate() {
        match first {
            Some(t) => groups[*t].push(i),
            None => n_never += 1,
        }
    }

    let rows = groups
        .par_iter()
        .enumerate()
        .map(|(t_d, members)| {
            let mut cells = vec![HeatCell::Undefined; horizon];
            if members.len() >= 2 {
                let v0 = sample_variance(&members.iter().map(|&i| base[i].0).collect::<Vec<_>>());
                if v0 > 0.0 {
                    cells[t_d] = HeatCell::Value(0.0);
                    for (delayed, cell) in cells.iter_mut().enumerate().skip(t_d + 1) {
                        let ys: Vec<f64> = members
                            .iter()
                            .map(|&i| simulate(env, &eff, Schedule::DelayedTo(delayed), seeds[i]).0)
                            .collect();
                        *cell = HeatCell::Value((sample_variance(&ys) - v0) / v0);
                    }
                }
            }
            HeatRow {
                first_deferral: t_d,
                n: members.len(),
                cells,
            }
        })
        .collect();

    Ok(DelayHeatmap {
        horizon,
        n_rollouts,
        n_never_deferred: n_never,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_synthetic_chain, SyntheticChainConfig};

    #[test]
    fn diagonal_is_zero_and_lower_triangle_undefined() {
        let env = build_synthetic_chain(&SyntheticChainConfig::default()).unwrap();
        let always = DeferralPolicy::always(10, 8, 0.0);
        let never = DeferralPolicy::never(10, 8);
        let some = DeferralPolicy::from_scores(
            10,
            8,
            (0..80).map(|i| if i % 8 == 6 { 1.0 } else { 0.0 }).collect(),
            0.5,
            0.5,
            2,
            crate::deferral::DeferralMethod::Sltd,
            false,
        )
        .unwrap();
        for d in [&always, &some] {
            let h = delay_heatmap(&env.mdp, &env.pi_tar, &env.pi_0, d, 300, 3).unwrap();
            assert_eq!(h.rows.iter().map(|r| r.n).sum::<usize>() + h.n_never_deferred, 300);
            for row in &h.rows {
                for t in 0..row.first_deferral {
                    assert_eq!(row.cells[t], HeatCell::Undefined);
                }
                if let HeatCell::Value(v) = row.cells[row.first_deferral] {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let h = delay_heatmap(&env.mdp, &env.pi_tar, &env.pi_0, &never, 50, 3).unwrap();
        assert_eq!(h.n_never_deferred, 50);
        assert!(h.rows.iter().all(|r| r.cells.iter().all(|&c| c == HeatCell::Undefined)));
    }

    #[test]
    fn csv_layout() {
        let env = build_synthetic_chain(&SyntheticChainConfig::default()).unwrap();
        let h = delay_heatmap(&env.mdp, &env.pi_tar, &env.pi_0, &DeferralPolicy::always(10, 8, 0.0), 100, 1).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "first_deferral,n,0,1,2,3,4,5,6,7,8,9");
        let row0: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row0[..3], ["0", "100", "0"]);
        let row1: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row1[1], "0");
        assert!(row1[2..].iter().all(|&c| c == UNDEFINED));
    }

    #[test]
    fn too_few_rollouts_rejected() {
        let env = build_synthetic_chain(&SyntheticChainConfig::default()).unwrap();
        assert!(delay_heatmap(&env.mdp, &env.pi_tar, &env.pi_0, &DeferralPolicy::never(10, 8), 1, 0).is_err());
    }
}

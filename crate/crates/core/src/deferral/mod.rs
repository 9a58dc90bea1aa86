//! Deferral policies: learning when to hand control to the expert, and
//! deploying the resulting composite policy.

mod augmented;
mod deploy;
mod learn;

pub use augmented::{augmented_mdp_baseline, augmented_mdp_plan, AugmentedMode};
pub use deploy::{deploy, Deployment};
pub use learn::{
    learn_deferral, learn_deferral_one_step, learn_deferral_stationary, DeferValue, LearnSettings,
};

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::dim;
use crate::mdp::TimeIndexedPolicy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeferralMethod {
    Sltd,
    OneStep,
    Stationary,
    Augmented,
}

impl DeferralMethod {
    pub const ALL: [DeferralMethod; 4] = [
        DeferralMethod::Sltd,
        DeferralMethod::OneStep,
        DeferralMethod::Stationary,
        DeferralMethod::Augmented,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeferralMethod::Sltd => "sltd",
            DeferralMethod::OneStep => "one-step",
            DeferralMethod::Stationary => "stationary",
            DeferralMethod::Augmented => "augmented",
        }
    }
}

impl fmt::Display for DeferralMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeferralMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DeferralMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown deferral method {s:?}")))
    }
}

/// Deferral scores `p(s, t)` and the rule `g(s, t) = p(s, t) > tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeferralPolicy {
    horizon: usize,
    num_states: usize,
    scores: Vec<f64>,
    rule: Vec<bool>,
    tau: f64,
    cost: f64,
    n_samples: usize,
    /// Once deferred, every later step of the episode defers too.
    permanent: bool,
    method: DeferralMethod,
}

impl DeferralPolicy {
    /// Scores indexed `[t][s]`; the rule is derived from `tau`.
    pub fn from_scores(
        horizon: usize,
        num_states: usize,
        scores: Vec<f64>,
        tau: f64,
        cost: f64,
        n_samples: usize,
        method: DeferralMethod,
        permanent: bool,
    ) -> Result<Self> {
        if scores.len() != horizon * num_states {
            return Err(dim("deferral score table must have horizon * num_states entries"));
        }
        if scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("deferral scores must lie in [0, 1]".into()));
        }
        let rule = scores.iter().map(|&p| p > tau).collect();
        Ok(Self {
            horizon,
            num_states,
            scores,
            rule,
            tau,
            cost,
            n_samples,
            permanent,
            method,
        })
    }

    /// Never defers.
    pub fn never(horizon: usize, num_states: usize) -> Self {
        Self::from_scores(horizon, num_states, vec![0.0; horizon * num_states], 0.5, 0.0, 1, DeferralMethod::Sltd, false)
            .expect("valid")
    }

    /// Defers everywhere at cost `cost`.
    pub fn always(horizon: usize, num_states: usize, cost: f64) -> Self {
        Self::from_scores(horizon, num_states, vec![1.0; horizon * num_states], 0.5, cost, 1, DeferralMethod::Sltd, false)
            .expect("valid")
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn score(&self, t: usize, s: usize) -> f64 {
        self.scores[t * self.num_states + s]
    }

    #[inline]
    pub fn defers(&self, t: usize, s: usize) -> bool {
        self.rule[t * self.num_states + s]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn rule(&self) -> &[bool] {
        &self.rule
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn is_permanent(&self) -> bool {
        self.permanent
    }

    pub fn method(&self) -> DeferralMethod {
        self.method
    }

    /// Cells `(t, s)` where the rule fires.
    pub fn deferral_set(&self) -> Vec<(usize, usize)> {
        (0..self.horizon)
            .flat_map(|t| (0..self.num_states).map(move |s| (t, s)))
            .filter(|&(t, s)| self.defers(t, s))
            .collect()
    }

    /// Same scores under a different threshold.
    pub fn with_threshold(&self, tau: f64) -> Self {
        let mut out = self.clone();
        out.tau = tau;
        out.rule = out.scores.iter().map(|&p| p > tau).collect();
        out
    }

    /// Same rule charged at a different cost.
    pub fn with_cost(&self, cost: f64) -> Self {
        Self { cost, ..self.clone() }
    }

    pub fn check_dims(&self, policy: &TimeIndexedPolicy) -> Result<()> {
        if policy.horizon() != self.horizon || policy.num_states() != self.num_states {
            return Err(dim("deferral policy and policy disagree on horizon or state count"));
        }
        Ok(())
    }

    /// CSV with a `key=value` comment preamble and rows `t,s,p,g`.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &[String]) -> Result<()> {
        for line in comment {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# method={}", self.method)?;
        writeln!(out, "# tau={}", self.tau)?;
        writeln!(out, "# cost={}", self.cost)?;
        writeln!(out, "# n_samples={}", self.n_samples)?;
        writeln!(out, "# permanent={}", self.permanent)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s", "p", "g"])?;
        for t in 0..self.horizon {
            for s in 0..self.num_states {
                w.write_record([
                    t.to_string(),
                    s.to_string(),
                    self.score(t, s).to_string(),
                    (self.defers(t, s) as u8).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut body = String::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("deferral CSV is missing the {k} header")))
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad {k} header")))
        };
        let method: DeferralMethod = get("method")?.parse()?;
        let tau = parse_f("tau")?;
        let cost = parse_f("cost")?;
        let n_samples = get("n_samples")?
            .parse()
            .map_err(|_| Error::Parse("bad n_samples header".into()))?;
        let permanent = get("permanent")?
            .parse()
            .map_err(|_| Error::Parse("bad permanent header".into()))?;

        let mut rows: Vec<(usize, usize, f64, u8)> = Vec::new();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        let horizon = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let num_states = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != horizon * num_states {
            return Err(Error::Parse("deferral CSV does not cover a full (t, s) grid".into()));
        }
        let mut scores = vec![f64::NAN; horizon * num_states];
        let mut rule = vec![false; horizon * num_states];
        for (t, s, p, g) in rows {
            scores[t * num_states + s] = p;
            rule[t * num_states + s] = g != 0;
        }
        let policy = Self::from_scores(horizon, num_states, scores, tau, cost, n_samples, method, permanent)?;
        if policy.rule != rule {
            return Err(Error::Parse("g column disagrees with p > tau".into()));
        }
        Ok(policy)
    }
}

/// The composite policy: the expert acts where the rule fires, the target elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct EffectivePolicy<'a> {
    pub target: &'a TimeIndexedPolicy,
    pub expert: &'a TimeIndexedPolicy,
    pub deferral: &'a DeferralPolicy,
}

impl<'a> EffectivePolicy<'a> {
    pub fn new(target: &'a TimeIndexedPolicy, expert: &'a TimeIndexedPolicy, deferral: &'a DeferralPolicy) -> Result<Self> {
        deferral.check_dims(target)?;
        deferral.check_dims(expert)?;
        if target.num_actions() != expert.num_actions() {
            return Err(dim("target and expert action counts differ"));
        }
        Ok(Self { target, expert, deferral })
    }

    /// Whether the step at `(t, s)` is deferred, given whether an earlier
    /// step of the episode already deferred.
    #[inline]
    pub fn defers(&self, t: usize, s: usize, deferred_before: bool) -> bool {
        (self.deferral.permanent && deferred_before) || self.deferral.defers(t, s)
    }

    #[inline]
    pub fn action_probs(&self, t: usize, s: usize, deferred: bool) -> &'a [f64] {
        if deferred {
            self.expert.action_probs(t, s)
        } else {
            self.target.action_probs(t, s)
        }
    }

    /// The Markov policy `g ? pi_0 : pi_tar`; ignores the permanent flag.
    pub fn to_policy(&self) -> Result<TimeIndexedPolicy> {
        TimeIndexedPolicy::from_fn(self.target.horizon(), self.target.num_states(), self.target.num_actions(), |t, s| {
            self.action_probs(t, s, self.deferral.defers(t, s)).to_vec()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DeferralPolicy {
        DeferralPolicy::from_scores(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.5], 0.5, 0.1, 4, DeferralMethod::Sltd, false)
            .unwrap()
    }

    #[test]
    fn rule_is_strictly_above_threshold() {
        let d = sample();
        assert_eq!(d.rule(), &[false, false, false, true, true, false]);
        assert_eq!(d.deferral_set(), vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn csv_round_trip() {
        let d = sample();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, &["config_hash=x".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("t,s,p,g\n0,0,0,0\n"));
        assert_eq!(DeferralPolicy::read_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn method_names_round_trip() {
        for m in DeferralMethod::ALL {
            assert_eq!(m.as_str().parse::<DeferralMethod>().unwrap(), m);
        }
        assert!("nope".parse::<DeferralMethod>().is_err());
    }

    #[test]
    fn effective_policy_switches_on_rule() {
        let tar = TimeIndexedPolicy::deterministic(2, 3, 2, &[0; 6]).unwrap();
        let exp = TimeIndexedPolicy::deterministic(2, 3, 2, &[1; 6]).unwrap();
        let d = sample();
        let eff = EffectivePolicy::new(&tar, &exp, &d).unwrap();
        let pi = eff.to_policy().unwrap();
        assert_eq!(pi.action_probs(1, 0), &[0.0, 1.0]);
        assert_eq!(pi.action_probs(0, 2), &[1.0, 0.0]);
    }
}

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::dim;
use crate::{Error, Result};

/// One episode: `T + 1` states, `T` actions, rewards and deferral flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub deferred: Vec<bool>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.rewards.len() != t || self.deferred.len() != t {
            return Err(dim(format!(
                "trajectory lengths inconsistent: {} states, {} actions, {} rewards, {} flags",
                self.states.len(),
                t,
                self.rewards.len(),
                self.deferred.len()
            )));
        }
        if let Some(s) = self.states.iter().find(|&&s| s >= num_states) {
            return Err(dim(format!("state {s} out of range")));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= num_actions) {
            return Err(dim(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// First step at which the deployed system deferred.
    pub fn first_deferral(&self) -> Option<usize> {
        self.deferred.iter().position(|&d| d)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Which policy and seed produced a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub policy: String,
    pub seed: u64,
}

/// A collection of equal-horizon trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub provenance: Provenance,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRow {
    episode: usize,
    t: usize,
    s: usize,
    a: Option<usize>,
    r: Option<f64>,
    deferred: Option<u8>,
}

impl Dataset {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        provenance: Provenance,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        for (i, tr) in trajectories.iter().enumerate() {
            if tr.horizon() != horizon {
                return Err(dim(format!(
                    "trajectory {i} has horizon {} but dataset horizon is {horizon}",
                    tr.horizon()
                )));
            }
            tr.validate(num_states, num_actions)?;
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            provenance,
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Mean undiscounted return over trajectories.
    pub fn mean_return(&self) -> f64 {
        crate::stats::mean(&self.trajectories.iter().map(Trajectory::total_reward).collect::<Vec<_>>())
    }

    /// Writes one row per step (`episode,t,s,a,r,deferred`) plus one terminal
    /// row per episode carrying `t = T` and the final state with empty
    /// action, reward and flag fields. `comment` lines are written first,
    /// each prefixed with `# `.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &[String]) -> Result<()> {
        for line in comment {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for (ep, tr) in self.trajectories.iter().enumerate() {
            for t in 0..tr.horizon() {
                w.serialize(StepRow {
                    episode: ep,
                    t,
                    s: tr.states[t],
                    a: Some(tr.actions[t]),
                    r: Some(tr.rewards[t]),
                    deferred: Some(tr.deferred[t] as u8),
                })?;
            }
            w.serialize(StepRow {
                episode: ep,
                t: tr.horizon(),
                s: tr.states[tr.horizon()],
                a: None,
                r: None,
                deferred: None,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout produced by [`Self::write_csv`]. Lines starting with
    /// `#` are ignored. Episodes must appear contiguously and in step order.
    pub fn read_csv<R: Read>(
        input: R,
        num_states: usize,
        num_actions: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut current: Option<(usize, Trajectory)> = None;
        for row in rdr.deserialize::<StepRow>() {
            let row = row?;
            let (ep, tr) = current.get_or_insert_with(|| {
                (
                    row.episode,
                    Trajectory {
                        states: vec![],
                        actions: vec![],
                        rewards: vec![],
                        deferred: vec![],
                    },
                )
            });
            if *ep != row.episode {
                return Err(Error::Parse(format!(
                    "episode {} started before episode {ep} reached its terminal row",
                    row.episode
                )));
            }
            if row.t != tr.states.len() {
                return Err(Error::Parse(format!(
                    "episode {ep}: expected step {}, found {}",
                    tr.states.len(),
                    row.t
                )));
            }
            tr.states.push(row.s);
            match (row.a, row.r, row.deferred) {
                (Some(a), Some(r), Some(d)) => {
                    tr.actions.push(a);
                    tr.rewards.push(r);
                    tr.deferred.push(d != 0);
                }
                (None, None, None) => {
                    let (_, done) = current.take().expect("current episode present");
                    trajectories.push(done);
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "episode {ep}, t={}: partially filled row",
                        row.t
                    )))
                }
            }
        }
        if current.is_some() {
            return Err(Error::Parse("last episode has no terminal row".into()));
        }
        let horizon = trajectories.first().map(Trajectory::horizon).unwrap_or(0);
        Dataset::new(num_states, num_actions, horizon, provenance, trajectories)
    }
}

use log::warn;
use serde::Serialize;

use crate::error::invalid;
use crate::mdp::Dataset;
use crate::seed;
use crate::stats::mean_and_std_err;
use crate::Result;
use rand::Rng;

/// Mean over runs and the standard error of that mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_err: f64,
    pub n_runs: usize,
}

impl Aggregate {
    pub fn two_se(&self) -> f64 {
        2.0 * self.std_err
    }
}

/// Aggregates run-level means. A single run reports a standard error of 0.
pub fn bootstrap_aggregate(runs: &[f64]) -> Result<Aggregate> {
    match runs.len() {
        0 => Err(invalid("bootstrap_aggregate needs at least one run")),
        1 => {
            warn!("a single run gives a degenerate sample; standard error reported as 0");
            Ok(Aggregate {
                mean: runs[0],
                std_err: 0.0,
                n_runs: 1,
            })
        }
        n => {
            let (mean, std_err) = mean_and_std_err(runs);
            Ok(Aggregate { mean, std_err, n_runs: n })
        }
    }
}

/// Resamples trajectories with replacement.
pub fn bootstrap_resample(data: &Dataset, rng_seed: u64) -> Result<Dataset> {
    if data.is_empty() {
        return Err(invalid("cannot resample an empty dataset"));
    }
    let mut rng = seed::rng(rng_seed);
    let n = data.len();
    let trajectories = (0..n).map(|_| data.trajectories[rng.random_range(0..n)].clone()).collect();
    let mut provenance = data.provenance.clone();
    provenance.policy = format!("{}:bootstrap", provenance.policy);
    provenance.seed = rng_seed;
    Dataset::new(data.num_states, data.num_actions, data.horizon, provenance, trajectories)
}

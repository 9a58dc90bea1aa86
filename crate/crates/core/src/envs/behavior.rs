use crate::mdp::{Dataset, TimeIndexedPolicy};
use crate::{Error, Result};

/// Empirical behaviour policy: `pi(a | s, t) ∝ count(s, a, t) + smoothing`.
/// Rows with no mass (no visits and zero smoothing) are uniform.
pub fn estimate_behavior_policy(data: &Dataset, smoothing: f64) -> Result<TimeIndexedPolicy> {
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing must be >= 0, got {smoothing}")));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("behaviour estimation needs a non-empty dataset".into()));
    }
    let (n_s, n_a, horizon) = (data.num_states, data.num_actions, data.horizon);
    let mut counts = vec![0.0; horizon * n_s * n_a];
    for tr in &data.trajectories {
        for t in 0..horizon {
            counts[(t * n_s + tr.states[t]) * n_a + tr.actions[t]] += 1.0;
        }
    }
    for row in counts.chunks_mut(n_a) {
        let total: f64 = row.iter().map(|c| c + smoothing).sum();
        if total > 0.0 {
            row.iter_mut().for_each(|c| *c = (*c + smoothing) / total);
        } else {
            row.fill(1.0 / n_a as f64);
        }
    }
    TimeIndexedPolicy::new(horizon, n_s, n_a, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Provenance, Trajectory};

    fn data(actions: &[usize]) -> Dataset {
        let trs = actions
            .iter()
            .map(|&a| Trajectory {
                states: vec![0, 1],
                actions: vec![a],
                rewards: vec![0.0],
                deferred: vec![false],
            })
            .collect();
        Dataset::new(2, 2, 1, Provenance::default(), trs).unwrap()
    }

    #[test]
    fn single_count_without_smoothing() {
        let pi = estimate_behavior_policy(&data(&[1]), 0.0).unwrap();
        assert_eq!(pi.prob(0, 0, 1), 1.0);
        assert_eq!(pi.action_probs(0, 1), &[0.5, 0.5]);
    }

    #[test]
    fn unvisited_row_with_smoothing_is_uniform() {
        let pi = estimate_behavior_policy(&data(&[1]), 1.0).unwrap();
        assert_eq!(pi.action_probs(0, 1), &[0.5, 0.5]);
    }

    #[test]
    fn laplace_arithmetic() {
        let pi = estimate_behavior_policy(&data(&[0, 0, 0, 1]), 1.0).unwrap();
        assert!((pi.prob(0, 0, 0) - 4.0 / 6.0).abs() < 1e-15);
        assert!((pi.prob(0, 0, 1) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn negative_smoothing_is_rejected() {
        assert!(estimate_behavior_policy(&data(&[0]), -0.1).is_err());
    }
}

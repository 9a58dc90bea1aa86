//! Posterior distributions over time-indexed MDPs.
//!
//! [`DynamicsPosterior`] is the conjugate model fitted from data. The
//! [`ModelPosterior`] trait is what the deferral learners and the
//! uncertainty estimators consume, so hand-built posteriors such as
//! [`AtomicPosterior`] can stand in for it.

mod atomic;
mod conjugate;

pub use atomic::{AtomCoupling, AtomicPosterior};
pub use conjugate::{
    DynamicsPosterior, FitOptions, NormalGamma, NormalGammaPrior, RewardKind, RewardPosterior,
};

use crate::mdp::{Discounting, RewardDist, TimeIndexedMdp};
use crate::{Prng, Result};

/// One posterior draw of a single `(t, s, a)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDraw {
    pub transition: Vec<f64>,
    pub reward: RewardDist,
}

pub trait ModelPosterior: Send + Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    fn discounting(&self) -> Discounting;

    /// True when one draw fixes the dynamics at every time step jointly
    /// (pooled posteriors, whole-model atoms). Otherwise cells at different
    /// times are independent a posteriori.
    fn time_coupled(&self) -> bool;

    /// Draw number `index` of a batch seeded by `seed`.
    fn sample_mdp_indexed(&self, index: u64, seed: u64) -> Result<TimeIndexedMdp>;

    fn sample_mdp(&self, seed: u64) -> Result<TimeIndexedMdp> {
        self.sample_mdp_indexed(0, seed)
    }

    /// Joint draw of the cells `(t, s, a)` for every action `a`.
    fn sample_state_rows(&self, t: usize, s: usize, rng: &mut Prng) -> Vec<CellDraw>;

    /// Draw of a single cell; marginally equal to the matching entry of
    /// [`Self::sample_state_rows`].
    fn sample_cell(&self, t: usize, s: usize, a: usize, rng: &mut Prng) -> CellDraw {
        self.sample_state_rows(t, s, rng).swap_remove(a)
    }
}

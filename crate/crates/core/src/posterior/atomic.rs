use rand::Rng;

use super::{CellDraw, ModelPosterior};
use crate::error::{dim, invalid};
use crate::mdp::{Discounting, TimeIndexedMdp};
use crate::seed::{self, Prng};
use crate::stats::{check_distribution, sample_index};
use crate::Result;

/// How a draw from an [`AtomicPosterior`] selects atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomCoupling {
    /// One atom per draw, used for every time step.
    WholeModel,
    /// An independent atom per time step.
    PerSlice,
}

/// A discrete posterior over a finite set of MDPs.
///
/// With `stratified` set and whole-model coupling, draw `i` of a batch is
/// atom `i mod k`, so a batch whose size is a multiple of `k` reproduces
/// uniform atom weights exactly.
#[derive(Debug, Clone)]
pub struct AtomicPosterior {
    atoms: Vec<TimeIndexedMdp>,
    weights: Vec<f64>,
    coupling: AtomCoupling,
    stratified: bool,
}

impl AtomicPosterior {
    pub fn new(atoms: Vec<TimeIndexedMdp>, weights: Vec<f64>, coupling: AtomCoupling) -> Result<Self> {
        let first = atoms.first().ok_or_else(|| invalid("atomic posterior needs at least one atom"))?;
        if weights.len() != atoms.len() {
            return Err(dim("one weight per atom required"));
        }
        check_distribution(&weights, "atom weights")?;
        for m in &atoms[1..] {
            if m.num_states() != first.num_states()
                || m.num_actions() != first.num_actions()
                || m.horizon() != first.horizon()
                || m.gamma() != first.gamma()
                || m.discounting() != first.discounting()
                || m.initial_distribution() != first.initial_distribution()
            {
                return Err(dim("atoms must share dimensions, discounting and initial distribution"));
            }
        }
        Ok(Self {
            atoms,
            weights,
            coupling,
            stratified: false,
        })
    }

    /// Equal-weight whole-model atoms with stratified draws.
    pub fn stratified(atoms: Vec<TimeIndexedMdp>) -> Result<Self> {
        let k = atoms.len().max(1);
        let mut post = Self::new(atoms, vec![1.0 / k as f64; k], AtomCoupling::WholeModel)?;
        post.stratified = true;
        Ok(post)
    }

    /// Point-mass posterior on a single MDP.
    pub fn point_mass(mdp: TimeIndexedMdp) -> Self {
        Self::new(vec![mdp], vec![1.0], AtomCoupling::WholeModel).expect("single atom is valid")
    }

    pub fn atoms(&self) -> &[TimeIndexedMdp] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coupling(&self) -> AtomCoupling {
        self.coupling
    }

    fn pick(&self, rng: &mut Prng) -> usize {
        sample_index(&self.weights, rng.random::<f64>())
    }

    /// Atom selected by draw `index` of a whole-model batch seeded by `seed`.
    pub fn atom_index(&self, index: u64, seed: u64) -> usize {
        if self.stratified {
            return index as usize % self.atoms.len();
        }
        self.pick(&mut seed::rng(seed::derive(seed, index)))
    }
}

impl ModelPosterior for AtomicPosterior {
    fn num_states(&self) -> usize {
        self.atoms[0].num_states()
    }

    fn num_actions(&self) -> usize {
        self.atoms[0].num_actions()
    }

    fn horizon(&self) -> usize {
        self.atoms[0].horizon()
    }

    fn gamma(&self) -> f64 {
        self.atoms[0].gamma()
    }

    fn discounting(&self) -> Discounting {
        self.atoms[0].discounting()
    }

    fn time_coupled(&self) -> bool {
        self.coupling == AtomCoupling::WholeModel && self.atoms.len() > 1
    }

    fn sample_mdp_indexed(&self, index: u64, seed: u64) -> Result<TimeIndexedMdp> {
        match self.coupling {
            AtomCoupling::WholeModel => Ok(self.atoms[self.atom_index(index, seed)].clone()),
            AtomCoupling::PerSlice => {
                let mut rng = seed::rng(seed::derive(seed, index));
                let base = &self.atoms[0];
                let (n_s, n_a) = (base.num_states(), base.num_actions());
                let mut transitions = Vec::with_capacity(base.transitions().len());
                let mut rewards = Vec::with_capacity(base.rewards().len());
                for t in 0..base.horizon() {
                    let m = &self.atoms[self.pick(&mut rng)];
                    let lo = t * n_s * n_a;
                    let hi = lo + n_s * n_a;
                    transitions.extend_from_slice(&m.transitions()[lo * n_s..hi * n_s]);
                    rewards.extend_from_slice(&m.rewards()[lo..hi]);
                }
                TimeIndexedMdp::new(
                    n_s,
                    n_a,
                    base.horizon(),
                    transitions,
                    rewards,
                    base.initial_distribution().to_vec(),
                    base.gamma(),
                    base.discounting(),
                )
            }
        }
    }

    fn sample_state_rows(&self, t: usize, s: usize, rng: &mut Prng) -> Vec<CellDraw> {
        let m = &self.atoms[self.pick(rng)];
        (0..m.num_actions())
            .map(|a| CellDraw {
                transition: m.transition_row(t, s, a).to_vec(),
                reward: m.reward(t, s, a).clone(),
            })
            .collect()
    }
}

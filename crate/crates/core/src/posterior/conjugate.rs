use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{CellDraw, ModelPosterior};
use crate::error::{dim, invalid};
use crate::mdp::{normalize, Dataset, Discounting, RewardDist, TimeIndexedMdp};
use crate::seed::{self, Prng};
use crate::{Error, Result};

/// Normal-Gamma hyperparameters `(mu, kappa, alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalGammaPrior {
    pub mu0: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for NormalGammaPrior {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            kappa: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Posterior Normal-Gamma parameters of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma {
    pub mu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalGamma {
    pub fn prior(p: &NormalGammaPrior) -> Self {
        Self {
            mu: p.mu0,
            kappa: p.kappa,
            alpha: p.alpha,
            beta: p.beta,
        }
    }

    /// Conjugate update with observations `xs`.
    pub fn update(&self, xs: &[f64]) -> Self {
        if xs.is_empty() {
            return *self;
        }
        let n = xs.len() as f64;
        let xbar = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let kappa = self.kappa + n;
        Self {
            mu: (self.kappa * self.mu + n * xbar) / kappa,
            kappa,
            alpha: self.alpha + n / 2.0,
            beta: self.beta + 0.5 * ss + self.kappa * n * (xbar - self.mu).powi(2) / (2.0 * kappa),
        }
    }

    /// Draws `(mean, precision)`: `lambda ~ Gamma(alpha, rate beta)`, `mean ~ N(mu, 1 / (kappa lambda))`.
    pub fn sample(&self, rng: &mut Prng) -> (f64, f64) {
        let lambda = Gamma::new(self.alpha, 1.0 / self.beta)
            .expect("validated Normal-Gamma parameters")
            .sample(rng)
            .max(f64::MIN_POSITIVE);
        let mean = Normal::new(self.mu, (self.kappa * lambda).recip().sqrt())
            .expect("finite standard deviation")
            .sample(rng);
        (mean, lambda)
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.alpha > 0.0 && self.beta > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "Normal-Gamma parameters must satisfy kappa, alpha, beta > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reward likelihood used when fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardKind {
    /// Dirichlet over a finite support. The support defaults to the distinct
    /// rewards observed in the data.
    Categorical {
        #[serde(default)]
        support: Option<Vec<f64>>,
    },
    Gaussian {
        #[serde(default)]
        prior: NormalGammaPrior,
    },
}

impl Default for RewardKind {
    fn default() -> Self {
        RewardKind::Categorical { support: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub prior_strength: f64,
    pub pooled: bool,
    pub reward: RewardKind,
    pub gamma: f64,
    pub discounting: Discounting,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            prior_strength: 1.0,
            pooled: false,
            reward: RewardKind::default(),
            gamma: 1.0,
            discounting: Discounting::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardPosterior {
    /// Concentrations indexed `[slice][s][a][k]`.
    Categorical { support: Vec<f64>, concentrations: Vec<f64> },
    /// Parameters indexed `[slice][s][a]`.
    Gaussian { cells: Vec<NormalGamma> },
}

/// Conjugate posterior over transitions and rewards.
///
/// A non-pooled posterior has one slice per time step. A pooled posterior
/// has a single slice shared by every `t`; each draw samples it once and
/// broadcasts it over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsPosterior {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    pooled: bool,
    prior_strength: f64,
    gamma: f64,
    discounting: Discounting,
    initial: Vec<f64>,
    /// `[slice][s][a][s']`, prior plus counts.
    transition_concentrations: Vec<f64>,
    /// Observed transitions per `[slice][s][a]`.
    visits: Vec<u64>,
    reward: RewardPosterior,
}

/// One `Gamma(alpha_i, 1)` per entry, normalised. Falls back to the mean
/// when every draw underflows.
pub(crate) fn dirichlet(conc: &[f64], rng: &mut Prng) -> Vec<f64> {
    let mut row: Vec<f64> = conc
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    if !row.iter().any(|&x| x > 0.0) || row.iter().any(|x| !x.is_finite()) {
        row.copy_from_slice(conc);
    }
    normalize(&mut row);
    row
}

fn dirichlet_mean(conc: &[f64]) -> Vec<f64> {
    let mut row = conc.to_vec();
    normalize(&mut row);
    row
}

impl DynamicsPosterior {
    pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<Self> {
        if !(opts.prior_strength > 0.0) || !opts.prior_strength.is_finite() {
            return Err(invalid(format!("prior_strength must be > 0, got {}", opts.prior_strength)));
        }
        if data.horizon == 0 {
            return Err(dim("dataset horizon must be positive"));
        }
        let (n_s, n_a, horizon) = (data.num_states, data.num_actions, data.horizon);
        let slices = if opts.pooled { 1 } else { horizon };
        let slice_of = |t: usize| if opts.pooled { 0 } else { t };
        let cell = |t: usize, s: usize, a: usize| (slice_of(t) * n_s + s) * n_a + a;

        let mut trans = vec![opts.prior_strength; slices * n_s * n_a * n_s];
        let mut visits = vec![0u64; slices * n_s * n_a];
        let mut observed: Vec<Vec<f64>> = vec![Vec::new(); slices * n_s * n_a];
        let mut initial = vec![0.0; n_s];
        for tr in &data.trajectories {
            tr.validate(n_s, n_a)?;
            initial[tr.states[0]] += 1.0;
            for t in 0..horizon {
                let c = cell(t, tr.states[t], tr.actions[t]);
                trans[c * n_s + tr.states[t + 1]] += 1.0;
                visits[c] += 1;
                observed[c].push(tr.rewards[t]);
            }
        }
        normalize(&mut initial);

        let reward = match &opts.reward {
            RewardKind::Categorical { support } => {
                let support = match support {
                    Some(s) => {
                        let mut s = s.clone();
                        s.sort_by(f64::total_cmp);
                        s.dedup();
                        s
                    }
                    None => {
                        let mut s: Vec<f64> = observed.iter().flatten().copied().collect();
                        s.sort_by(f64::total_cmp);
                        s.dedup();
                        if s.is_empty() {
                            s.push(0.0);
                        }
                        s
                    }
                };
                if support.iter().any(|r| !r.is_finite()) {
                    return Err(Error::InvalidDistribution("categorical reward support is not finite".into()));
                }
                let k = support.len();
                let mut conc = vec![opts.prior_strength; observed.len() * k];
                for (c, xs) in observed.iter().enumerate() {
                    for x in xs {
                        let j = support
                            .binary_search_by(|r| r.total_cmp(x))
                            .map_err(|_| invalid(format!("reward {x} is not in the categorical support")))?;
                        conc[c * k + j] += 1.0;
                    }
                }
                RewardPosterior::Categorical {
                    support,
                    concentrations: conc,
                }
            }
            RewardKind::Gaussian { prior } => {
                let base = NormalGamma::prior(prior);
                base.validate()?;
                let cells = observed
                    .iter_mut()
                    .map(|xs| {
                        // fixed summation order keeps the fit independent of trajectory order
                        xs.sort_by(f64::total_cmp);
                        base.update(xs)
                    })
                    .collect();
                RewardPosterior::Gaussian { cells }
            }
        };

        let post = Self {
            num_states: n_s,
            num_actions: n_a,
            horizon,
            pooled: opts.pooled,
            prior_strength: opts.prior_strength,
            gamma: opts.gamma,
            discounting: opts.discounting,
            initial,
            transition_concentrations: trans,
            visits,
            reward,
        };
        post.validate()?;
        Ok(post)
    }

    fn slices(&self) -> usize {
        if self.pooled {
            1
        } else {
            self.horizon
        }
    }

    fn slice_cell(&self, t: usize, s: usize, a: usize) -> usize {
        let slice = if self.pooled { 0 } else { t };
        (slice * self.num_states + s) * self.num_actions + a
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.slices() * self.num_states * self.num_actions;
        if self.transition_concentrations.len() != cells * self.num_states || self.visits.len() != cells {
            return Err(dim("posterior tables do not match the declared shape"));
        }
        if self.initial.len() != self.num_states {
            return Err(dim("initial distribution length differs from num_states"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("discount {} outside [0, 1]", self.gamma)));
        }
        if self.transition_concentrations.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidDistribution("Dirichlet concentrations must be positive".into()));
        }
        match &self.reward {
            RewardPosterior::Categorical { support, concentrations } => {
                if support.is_empty() || concentrations.len() != cells * support.len() {
                    return Err(dim("categorical reward table does not match the declared shape"));
                }
                if concentrations.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
                    return Err(Error::InvalidDistribution("reward concentrations must be positive".into()));
                }
            }
            RewardPosterior::Gaussian { cells: ng } => {
                if ng.len() != cells {
                    return Err(dim("Normal-Gamma table does not match the declared shape"));
                }
                ng.iter().try_for_each(NormalGamma::validate)?;
            }
        }
        Ok(())
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled
    }

    pub fn prior_strength(&self) -> f64 {
        self.prior_strength
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward_posterior(&self) -> &RewardPosterior {
        &self.reward
    }

    /// Dirichlet concentration of the transition row at `(t, s, a)`.
    pub fn transition_concentration(&self, t: usize, s: usize, a: usize) -> &[f64] {
        let start = self.slice_cell(t, s, a) * self.num_states;
        &self.transition_concentrations[start..start + self.num_states]
    }

    /// Observed transitions out of `(t, s, a)`; summed over `t` when pooled.
    pub fn visits(&self, t: usize, s: usize, a: usize) -> u64 {
        self.visits[self.slice_cell(t, s, a)]
    }

    pub fn normal_gamma(&self, t: usize, s: usize, a: usize) -> Option<&NormalGamma> {
        match &self.reward {
            RewardPosterior::Gaussian { cells } => Some(&cells[self.slice_cell(t, s, a)]),
            RewardPosterior::Categorical { .. } => None,
        }
    }

    fn reward_concentration(&self, c: usize) -> Option<(&[f64], &[f64])> {
        match &self.reward {
            RewardPosterior::Categorical { support, concentrations } => {
                let k = support.len();
                Some((&support[..], &concentrations[c * k..(c + 1) * k]))
            }
            RewardPosterior::Gaussian { .. } => None,
        }
    }

    fn draw_cell(&self, c: usize, rng: &mut Prng) -> CellDraw {
        let n = self.num_states;
        let transition = dirichlet(&self.transition_concentrations[c * n..(c + 1) * n], rng);
        let reward = match &self.reward {
            RewardPosterior::Categorical { .. } => {
                let (support, conc) = self.reward_concentration(c).expect("categorical");
                RewardDist::Categorical {
                    support: support.to_vec(),
                    probs: dirichlet(conc, rng),
                }
            }
            RewardPosterior::Gaussian { cells } => {
                let (mean, precision) = cells[c].sample(rng);
                RewardDist::Gaussian { mean, precision }
            }
        };
        CellDraw { transition, reward }
    }

    fn mean_cell(&self, c: usize) -> CellDraw {
        let n = self.num_states;
        let transition = dirichlet_mean(&self.transition_concentrations[c * n..(c + 1) * n]);
        let reward = match &self.reward {
            RewardPosterior::Categorical { .. } => {
                let (support, conc) = self.reward_concentration(c).expect("categorical");
                RewardDist::Categorical {
                    support: support.to_vec(),
                    probs: dirichlet_mean(conc),
                }
            }
            RewardPosterior::Gaussian { cells } => {
                let ng = &cells[c];
                RewardDist::Gaussian {
                    mean: ng.mu,
                    precision: ng.alpha / ng.beta,
                }
            }
        };
        CellDraw { transition, reward }
    }

    fn assemble(&self, slice_cells: Vec<CellDraw>) -> Result<TimeIndexedMdp> {
        let (n_s, n_a, horizon) = (self.num_states, self.num_actions, self.horizon);
        let mut transitions = Vec::with_capacity(horizon * n_s * n_a * n_s);
        let mut rewards = Vec::with_capacity(horizon * n_s * n_a);
        for t in 0..horizon {
            for s in 0..n_s {
                for a in 0..n_a {
                    let d = &slice_cells[self.slice_cell(t, s, a)];
                    transitions.extend_from_slice(&d.transition);
                    rewards.push(d.reward.clone());
                }
            }
        }
        TimeIndexedMdp::new(n_s, n_a, horizon, transitions, rewards, self.initial.clone(), self.gamma, self.discounting)
    }

    /// Transitions at their Dirichlet means and rewards at their posterior means.
    pub fn posterior_mean_mdp(&self) -> Result<TimeIndexedMdp> {
        let cells = (0..self.visits.len()).map(|c| self.mean_cell(c)).collect();
        self.assemble(cells)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let post: Self = serde_json::from_str(s)?;
        post.validate()?;
        Ok(post)
    }
}

impl ModelPosterior for DynamicsPosterior {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn discounting(&self) -> Discounting {
        self.discounting
    }

    fn time_coupled(&self) -> bool {
        self.pooled
    }

    fn sample_mdp_indexed(&self, index: u64, seed: u64) -> Result<TimeIndexedMdp> {
        let mut rng = seed::rng(seed::derive(seed, index));
        let cells = (0..self.visits.len()).map(|c| self.draw_cell(c, &mut rng)).collect();
        self.assemble(cells)
    }

    fn sample_state_rows(&self, t: usize, s: usize, rng: &mut Prng) -> Vec<CellDraw> {
        (0..self.num_actions)
            .map(|a| self.draw_cell(self.slice_cell(t, s, a), rng))
            .collect()
    }

    fn sample_cell(&self, t: usize, s: usize, a: usize, rng: &mut Prng) -> CellDraw {
        self.draw_cell(self.slice_cell(t, s, a), rng)
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deferral::{AugmentedMode, DeferValue, DeferralMethod};
use crate::envs::{build_synthetic_chain, build_vitals_env, BuiltEnv, EnvSpec, SyntheticChainConfig, VitalsConfig};
use crate::mdp::{TimeIndexedMdp, TimeIndexedPolicy};
use crate::posterior::{FitOptions, RewardKind};
use crate::uncertainty::OutcomeKind;
use crate::{Error, Result};

/// Environment variable that overrides [`ExperimentConfig::output_dir`].
pub const OUT_DIR_ENV: &str = "SLTD_OUT_DIR";

/// Policy used to generate the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorPolicy {
    #[default]
    Expert,
    Target,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_episodes: usize,
    pub behavior: BehaviorPolicy,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_episodes: 200,
            behavior: BehaviorPolicy::Expert,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSpec {
    pub prior_strength: f64,
    pub pooled: bool,
    pub reward: RewardKind,
}

impl Default for PosteriorSpec {
    fn default() -> Self {
        Self {
            prior_strength: 1.0,
            pooled: false,
            reward: RewardKind::default(),
        }
    }
}

/// One deferral method to learn and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: DeferralMethod,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Per-step deferral cost; defaults to `0.05 * reward_scale` of the environment.
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub defer_value: DeferValue,
    #[serde(default)]
    pub augmented_mode: AugmentedMode,
}

fn default_tau() -> f64 {
    0.5
}

fn default_samples() -> usize {
    50
}

impl MethodSpec {
    pub fn new(method: DeferralMethod) -> Self {
        Self {
            method,
            tau: default_tau(),
            cost: None,
            n_samples: default_samples(),
            seed: 0,
            defer_value: DeferValue::default(),
            augmented_mode: AugmentedMode::default(),
        }
    }

    pub fn resolved_cost(&self, mdp: &TimeIndexedMdp) -> f64 {
        self.cost.unwrap_or(0.05 * mdp.reward_scale())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    pub n_eval_episodes: usize,
    /// Rollouts for the delayed-deferral heatmap.
    pub n_uncertainty_rollouts: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub outcome: OutcomeKind,
    pub seed: u64,
    /// Methods whose heatmap and decomposition are emitted.
    pub uncertainty_methods: Vec<DeferralMethod>,
    pub tau_sweep: bool,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            n_eval_episodes: 1000,
            n_uncertainty_rollouts: 10_000,
            n_outer: 200,
            n_inner: 200,
            outcome: OutcomeKind::TerminalReward,
            seed: 77,
            uncertainty_methods: vec![DeferralMethod::Sltd],
            tau_sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSpec {
    pub n_bootstraps: usize,
    pub n_seeds: usize,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            n_bootstraps: 1,
            n_seeds: 1,
        }
    }
}

/// Full experiment configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub synthetic_chain: SyntheticChainConfig,
    #[serde(default)]
    pub vitals: VitalsConfig,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub posterior: PosteriorSpec,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub bootstrap: BootstrapSpec,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Every method on the synthetic chain with desk-scale defaults.
    pub fn synthetic_chain_default() -> Self {
        Self {
            name: default_name(),
            env: EnvSpec::SyntheticChain,
            synthetic_chain: SyntheticChainConfig::default(),
            vitals: VitalsConfig::default(),
            dataset: DatasetSpec::default(),
            posterior: PosteriorSpec::default(),
            methods: DeferralMethod::ALL.iter().map(|&m| MethodSpec::new(m)).collect(),
            evaluation: EvaluationSpec::default(),
            bootstrap: BootstrapSpec::default(),
            output_dir: default_out(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        match &self.env {
            EnvSpec::SyntheticChain => self.synthetic_chain.validate()?,
            EnvSpec::Vitals => {}
            EnvSpec::Json { .. } => {}
        }
        if self.dataset.n_episodes == 0 {
            return cfg_err("dataset.n_episodes must be positive".into());
        }
        if !(self.posterior.prior_strength > 0.0) {
            return cfg_err("posterior.prior_strength must be positive".into());
        }
        for m in &self.methods {
            if !(m.tau > 0.0 && m.tau < 1.0) {
                return cfg_err(format!("{}: tau must lie in (0, 1)", m.method));
            }
            if m.cost.is_some_and(|c| !(c >= 0.0) || !c.is_finite()) {
                return cfg_err(format!("{}: cost must be finite and >= 0", m.method));
            }
            if m.n_samples < 2 && m.method != DeferralMethod::Augmented {
                return cfg_err(format!("{}: n_samples must be at least 2", m.method));
            }
        }
        let ev = &self.evaluation;
        if ev.n_eval_episodes == 0 {
            return cfg_err("evaluation.n_eval_episodes must be positive".into());
        }
        if ev.n_uncertainty_rollouts < 2 || ev.n_outer < 2 || ev.n_inner < 2 {
            return cfg_err("evaluation rollout counts must be at least 2".into());
        }
        if self.bootstrap.n_bootstraps == 0 || self.bootstrap.n_seeds == 0 {
            return cfg_err("bootstrap.n_bootstraps and bootstrap.n_seeds must be positive".into());
        }
        Ok(())
    }

    /// Raises the evaluation sizes to the larger published scale.
    pub fn paper_scale(mut self) -> Self {
        self.dataset.n_episodes = self.dataset.n_episodes.max(1000);
        self.evaluation.n_eval_episodes = self.evaluation.n_eval_episodes.max(1000);
        self.evaluation.n_uncertainty_rollouts = self.evaluation.n_uncertainty_rollouts.max(100_000);
        self.bootstrap.n_seeds = self.bootstrap.n_seeds.max(5);
        self.bootstrap.n_bootstraps = self.bootstrap.n_bootstraps.max(5);
        self
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory, honouring the `SLTD_OUT_DIR` override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn fit_options(&self, pooled: bool) -> FitOptions {
        let (gamma, discounting) = match &self.env {
            EnvSpec::SyntheticChain => (self.synthetic_chain.gamma, self.synthetic_chain.discounting),
            EnvSpec::Vitals => (self.vitals.gamma, self.vitals.discounting),
            EnvSpec::Json { .. } => (1.0, Default::default()),
        };
        FitOptions {
            prior_strength: self.posterior.prior_strength,
            pooled,
            reward: self.posterior.reward.clone(),
            gamma,
            discounting,
        }
    }

    pub fn build_env(&self) -> Result<BuiltEnv> {
        match &self.env {
            EnvSpec::SyntheticChain => build_synthetic_chain(&self.synthetic_chain),
            EnvSpec::Vitals => build_vitals_env(&self.vitals),
            EnvSpec::Json { mdp, pi_tar, pi_0 } => {
                let read = |p: &str| fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {p}: {e}")));
                let mdp = TimeIndexedMdp::from_json(&read(mdp)?)?;
                let pi_tar = TimeIndexedPolicy::from_json(&read(pi_tar)?)?;
                let pi_0 = TimeIndexedPolicy::from_json(&read(pi_0)?)?;
                mdp.check_policy(&pi_tar)?;
                mdp.check_policy(&pi_0)?;
                Ok(BuiltEnv { mdp, pi_tar, pi_0 })
            }
        }
    }
}

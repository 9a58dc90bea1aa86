//! Built-in environments, reference policies and data-ingestion utilities.

mod behavior;
mod chain;
mod diabetes;
mod vitals;

pub use behavior::estimate_behavior_policy;
pub use chain::{build_synthetic_chain, SyntheticChainConfig, CHAIN_NUM_STATES, SINK_STATE, TRAP_STATE};
pub use diabetes::{
    discretize_blood_glucose, discretize_intervention, GlucoseBin, InterventionMatch,
    GLUCOSE_LABELS, INTERVENTION_TABLE, INTERVENTION_TOLERANCE,
};
pub use vitals::{build_vitals_env, FluctuationSchedule, VitalSpec, VitalsConfig, VitalsLayout, NUM_TREATMENTS};

use serde::{Deserialize, Serialize};

use crate::mdp::{TimeIndexedMdp, TimeIndexedPolicy};

/// A constructed environment: true dynamics plus the target and expert policies.
#[derive(Debug, Clone)]
pub struct BuiltEnv {
    pub mdp: TimeIndexedMdp,
    pub pi_tar: TimeIndexedPolicy,
    pub pi_0: TimeIndexedPolicy,
}

/// Tagged environment specification, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    SyntheticChain,
    Vitals,
    /// An MDP and both policies loaded from JSON files.
    Json {
        mdp: String,
        pi_tar: String,
        pi_0: String,
    },
}

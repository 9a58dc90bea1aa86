//! Propagated uncertainty at a deferral point: nested Monte-Carlo variance
//! decomposition and the delayed-deferral heatmap.

mod decompose;
mod heatmap;

pub use decompose::{decompose_at_deferral, DecomposeSettings, OutcomeKind, StdErrors, UncertaintyReport};
pub use heatmap::{delay_heatmap, DelayHeatmap, HeatCell};

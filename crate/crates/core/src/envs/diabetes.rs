//! Discretisation of blood-glucose readings and bolus/insulin interventions.
//!
//! Blood glucose (mg/dL) bins carry the labels below. Label 4 does not
//! occur; `GlucoseBin::index` is the dense position 0..=5 of the label in
//! this list.
//!
//! | range            | label | index |
//! |------------------|-------|-------|
//! | 50 < BG <= 70    | 0     | 0     |
//! | 70 < BG <= 90    | 1     | 1     |
//! | 90 < BG <= 110   | 2     | 2     |
//! | 110 < BG <= 180  | 3     | 3     |
//! | 180 < BG <= 300  | 5     | 4     |
//! | otherwise        | 6     | 5     |

use log::warn;

use crate::{Error, Result};

pub const GLUCOSE_LABELS: [usize; 6] = [0, 1, 2, 3, 5, 6];

/// Upper bin edges paired with their labels; lower edge is the previous entry.
const GLUCOSE_EDGES: [(f64, f64, usize); 5] = [
    (50.0, 70.0, 0),
    (70.0, 90.0, 1),
    (90.0, 110.0, 2),
    (110.0, 180.0, 3),
    (180.0, 300.0, 5),
];

/// `(bolus g/min, insulin U/min)` per discrete action.
pub const INTERVENTION_TABLE: [(f64, f64); 8] = [
    (0.00, 0.00),
    (21.00, 10.58),
    (21.00, 5.25),
    (51.00, 18.19),
    (71.00, 17.75),
    (9.00, 2.25),
    (9.00, 5.823),
    (9.00, 10.09),
];

pub const INTERVENTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlucoseBin {
    /// Label as printed in the discretisation table.
    pub label: usize,
    /// Dense index in `0..=5`.
    pub index: usize,
}

pub fn discretize_blood_glucose(bg: f64) -> Result<GlucoseBin> {
    if !(bg > 0.0) || !bg.is_finite() {
        return Err(Error::InvalidArgument(format!("blood glucose must be positive and finite, got {bg}")));
    }
    let label = GLUCOSE_EDGES
        .iter()
        .find(|&&(lo, hi, _)| bg > lo && bg <= hi)
        .map_or(6, |&(_, _, l)| l);
    let index = GLUCOSE_LABELS.iter().position(|&l| l == label).expect("label in table");
    Ok(GlucoseBin { label, index })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionMatch {
    pub action: usize,
    /// Max-norm distance to the matched table row.
    pub distance: f64,
    pub exact: bool,
}

/// Maps a bolus/insulin pair to its action. Pairs within
/// [`INTERVENTION_TOLERANCE`] of a row match exactly. Otherwise the nearest
/// row is returned with a warning, or an error when `strict`.
pub fn discretize_intervention(bolus: f64, insulin: f64, strict: bool) -> Result<InterventionMatch> {
    if !bolus.is_finite() || !insulin.is_finite() {
        return Err(Error::InvalidArgument("bolus and insulin must be finite".into()));
    }
    let (action, distance) = INTERVENTION_TABLE
        .iter()
        .map(|&(b, i)| (bolus - b).abs().max((insulin - i).abs()))
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("table is non-empty");
    let exact = distance <= INTERVENTION_TOLERANCE;
    if !exact {
        if strict {
            return Err(Error::NoMatchingRow { bolus, insulin });
        }
        warn!("intervention ({bolus}, {insulin}) matched nearest action {action} at distance {distance}");
    }
    Ok(InterventionMatch { action, distance, exact })
}

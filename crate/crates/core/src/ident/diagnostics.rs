use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eigen::{singular_values, PINV_RTOL};
use super::operators::DiscreteOperators;

/// Condition numbers above this are flagged as near violations of injectivity.
pub const NEAR_VIOLATION_COND: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    /// Smallest of the first `K` singular values, `K` the number of UH points.
    pub sigma_min: f64,
    pub cond: f64,
    pub numerical_rank: usize,
    pub near_violation: bool,
}

impl SpectrumSummary {
    fn of(m: &DMatrix<f64>, k: usize) -> Self {
        // an unconverged SVD reports as a degenerate spectrum
        let sv = singular_values(m).unwrap_or_default();
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let sigma_min = sv.get(k.saturating_sub(1)).copied().unwrap_or(0.0);
        let cond = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
        Self {
            numerical_rank: sv.iter().filter(|&&s| s > PINV_RTOL * sigma_max).count(),
            singular_values: sv,
            sigma_max,
            sigma_min,
            cond,
            near_violation: !(cond <= NEAR_VIOLATION_COND),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub l_mat: SpectrumSummary,
    pub h_mat: SpectrumSummary,
    pub j_y: SpectrumSummary,
    pub any_violation: bool,
}

/// Singular-value spectra of `L`, `H` and `J_y` (pass the operators built at
/// `y2`), judged against the number of UH points.
pub fn injectivity_diagnostics(ops: &DiscreteOperators) -> InjectivityReport {
    let k = ops.delta_y.len();
    let l_mat = SpectrumSummary::of(&ops.l_mat, k);
    let h_mat = SpectrumSummary::of(&ops.h_mat, k);
    let j_y = SpectrumSummary::of(&ops.j_y, k);
    let any_violation = l_mat.near_violation || h_mat.near_violation || j_y.near_violation;
    InjectivityReport { l_mat, h_mat, j_y, any_violation }
}

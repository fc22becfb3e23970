//! Finite-dimensional verification of the operator-diagonalization
//! identification argument for consecutive order statistics.
//!
//! The UH is discretized to `K` mass points, which turns the operator
//! identities into exact matrix identities. The recovery pipeline sees only
//! observable joint densities ([`Observables`]); the model is used to build
//! them and, separately, to score the result.

mod diagnostics;
mod eigen;
mod grid;
mod moments;
mod operators;
mod recover;

pub use diagnostics::{injectivity_diagnostics, InjectivityReport, SpectrumSummary, NEAR_VIOLATION_COND};
pub use eigen::{eig_recover, pinv, EigenDecomposition, PINV_RTOL};
pub use grid::{OperatorGrid, Partition, SegmentGrid};
pub use moments::{moment_matrix, recover_truncation_moments};
pub use operators::{
    build_operators, check_factorization, factorization_error_continuous, DiscreteOperators, Observables,
};
pub use recover::{
    order_and_locate, pin_scales, recover_marginal, recover_middle, recover_parent_high, recover_parent_low,
    run_pipeline, score_recovery, sweep_partitions, PinnedConditional, PipelineOptions, Recovery, RecoveryScore,
    SegmentEstimate, SweepEntry,
};

use serde::{Deserialize, Serialize};

use crate::dist::{beta_cdf, beta_pdf, beta_sf, BetaParams, ConditionalFamily};
use crate::error::{Error, Result};
use crate::order_stats::DiscreteUh;

/// Discrete-UH test model: at `taus[k]` (mass `masses[k]`) values are
/// `Beta(components[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabModel {
    pub taus: Vec<f64>,
    pub masses: Vec<f64>,
    pub components: Vec<BetaParams>,
}

impl LabModel {
    pub fn new(taus: Vec<f64>, masses: Vec<f64>, components: Vec<BetaParams>) -> Result<Self> {
        let m = Self { taus, masses, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.taus.len() {
            return Err(Error::Parameter(format!(
                "{} components for {} UH points",
                self.components.len(),
                self.taus.len()
            )));
        }
        for c in &self.components {
            c.validate()?;
        }
        DiscreteUh::new(self.taus.clone(), self.masses.clone())?;
        Ok(())
    }

    /// Four polynomial Beta conditionals with increasing means and masses
    /// (0.1, 0.2, 0.3, 0.4).
    pub fn demo() -> Self {
        let comps = [(1.0, 3.0), (1.0, 2.0), (2.0, 1.0), (3.0, 1.0)];
        Self {
            taus: vec![0.125, 0.375, 0.625, 0.875],
            masses: vec![0.1, 0.2, 0.3, 0.4],
            components: comps.iter().map(|&(a, b)| BetaParams { alpha: a, beta: b }).collect(),
        }
    }

    /// Values independent of the UH: every component is the same.
    pub fn independent_demo(k: usize) -> Self {
        let masses = vec![1.0 / k as f64; k];
        Self {
            taus: (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect(),
            masses,
            components: vec![BetaParams { alpha: 2.0, beta: 2.0 }; k],
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn pdf(&self, k: usize, x: f64) -> f64 {
        beta_pdf(&self.components[k], x)
    }

    pub fn cdf(&self, k: usize, x: f64) -> f64 {
        beta_cdf(&self.components[k], x)
    }

    pub fn sf(&self, k: usize, x: f64) -> f64 {
        beta_sf(&self.components[k], x)
    }

    pub fn uh(&self) -> DiscreteUh {
        DiscreteUh { taus: self.taus.clone(), masses: self.masses.clone() }
    }

    fn index_of(&self, tau: f64) -> Option<usize> {
        self.taus.iter().position(|&t| (t - tau).abs() < 1e-12)
    }

    /// Marginal CDF of values, `sum_k m_k F(x | tau_k)`.
    pub fn marginal_cdf(&self, x: f64) -> f64 {
        (0..self.len()).map(|k| self.masses[k] * self.cdf(k, x)).sum()
    }

    /// Cutoffs at the 1/3 and 2/3 quantiles of the marginal value distribution.
    pub fn default_partition(&self) -> Result<Partition> {
        let q = |level: f64| {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if self.marginal_cdf(mid) < level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        Partition::new(q(1.0 / 3.0), q(2.0 / 3.0))
    }
}

/// Conditionals looked up by UH point; NaN away from the support.
impl ConditionalFamily for LabModel {
    fn cond_pdf(&self, x: f64, tau: f64) -> f64 {
        self.index_of(tau).map_or(f64::NAN, |k| self.pdf(k, x))
    }

    fn cond_cdf(&self, x: f64, tau: f64) -> f64 {
        self.index_of(tau).map_or(f64::NAN, |k| self.cdf(k, x))
    }

    fn cond_sf(&self, x: f64, tau: f64) -> f64 {
        self.index_of(tau).map_or(f64::NAN, |k| self.sf(k, x))
    }
}

//! Replicated simulate-and-fit experiments with pointwise envelopes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{envelope, EnvelopeRow};
use crate::dist::{ConditionalFamily, ParentModel, SyntheticDgp};
use crate::error::{Error, Result};
use crate::estimate::{fit_triples, FitConfig};
use crate::order_stats::{auction_rng, sample_triples};
use crate::quadrature::QuadratureRule;
use crate::sieve::{SieveModel, SieveParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McStudyConfig {
    pub dgp: SyntheticDgp,
    pub m: usize,
    pub n: u32,
    pub r: u32,
    pub replications: usize,
    pub fit: FitConfig,
    pub grid_points: usize,
    /// Conditioning values for the `f(x | tau)` envelopes.
    pub taus: Vec<f64>,
    pub seed: u64,
}

impl Default for McStudyConfig {
    fn default() -> Self {
        Self {
            dgp: SyntheticDgp::default(),
            m: 1000,
            n: 4,
            r: 3,
            replications: 100,
            fit: FitConfig::default(),
            grid_points: 101,
            taus: vec![0.25, 0.5, 0.75],
            seed: 0,
        }
    }
}

impl McStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate().map_err(|e| Error::Config(format!("dgp: {e}")))?;
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        if self.r < 3 || self.r > self.n {
            return Err(Error::Config(format!("need 3 <= r <= n, got r = {}, n = {}", self.r, self.n)));
        }
        if self.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("taus must lie in [0, 1]".into()));
        }
        self.fit.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points).map(|i| i as f64 / last).collect()
    }

    /// Seed of replication `rep`, used both to simulate and to draw starts.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        auction_rng(self.seed, rep as u64).random()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub rep: usize,
    pub seed: u64,
    pub loglik: f64,
    pub converged: bool,
    /// Integrated absolute error of the estimated UH density.
    pub iae_t: f64,
    pub params: SieveParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEnvelope {
    /// `"f_t"` or `"f_x_given_t"`.
    pub curve: String,
    pub tau: Option<f64>,
    pub rows: Vec<EnvelopeRow>,
    pub truth: Vec<f64>,
    /// Share of grid points where the truth lies inside `[q05, q95]`.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStudyReport {
    pub replications: Vec<ReplicationSummary>,
    pub envelopes: Vec<CurveEnvelope>,
    pub median_iae_t: f64,
}

/// `int_0^1 |f(t) - g(t)| dt` on 40 Gauss-Legendre panels.
pub fn integrated_abs_error<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(f: F, g: G) -> Result<f64> {
    const PANELS: usize = 40;
    let mut total = 0.0;
    for p in 0..PANELS {
        let q = QuadratureRule::gauss_legendre_on(8, p as f64 / PANELS as f64, (p + 1) as f64 / PANELS as f64)?;
        total += q.integrate(|t| (f(t) - g(t)).abs());
    }
    Ok(total)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::dataset::quantile(&v, 0.5)
}

/// Fits one simulated dataset.
pub fn run_replication(cfg: &McStudyConfig, rep: usize) -> Result<ReplicationSummary> {
    let seed = cfg.replication_seed(rep);
    let data = sample_triples(&cfg.dgp, cfg.m, cfg.n, cfg.r, seed)?;
    let fit = fit_triples(&data, &FitConfig { seed, ..cfg.fit.clone() })?;
    let model = SieveModel::from_params(&fit.params);
    let iae_t = integrated_abs_error(|t| model.marg_t_pdf(t), |t| cfg.dgp.marg_t_pdf(t))?;
    Ok(ReplicationSummary { rep, seed, loglik: fit.loglik, converged: fit.converged, iae_t, params: fit.params })
}

fn curve_envelope(
    curve: &str,
    tau: Option<f64>,
    grid: &[f64],
    curves: &[Vec<f64>],
    truth: Vec<f64>,
) -> Result<CurveEnvelope> {
    let rows = envelope(grid, curves)?;
    let inside = rows.iter().zip(&truth).filter(|(r, &t)| r.q05 <= t && t <= r.q95).count();
    Ok(CurveEnvelope { curve: curve.into(), tau, coverage: inside as f64 / rows.len() as f64, rows, truth })
}

/// Builds the envelopes of `f_T` and of `f(x | tau)` at each configured
/// `tau` from fitted replications.
pub fn envelopes(cfg: &McStudyConfig, reps: &[ReplicationSummary]) -> Result<Vec<CurveEnvelope>> {
    let grid = cfg.grid();
    let models: Vec<SieveModel> = reps.iter().map(|r| SieveModel::from_params(&r.params)).collect();
    let mut out = Vec::with_capacity(cfg.taus.len() + 1);
    let curves: Vec<Vec<f64>> = models.iter().map(|m| grid.iter().map(|&t| m.marg_t_pdf(t)).collect()).collect();
    let truth = grid.iter().map(|&t| cfg.dgp.marg_t_pdf(t)).collect();
    out.push(curve_envelope("f_t", None, &grid, &curves, truth)?);
    for &tau in &cfg.taus {
        let curves: Vec<Vec<f64>> = models.iter().map(|m| grid.iter().map(|&x| m.cond_pdf(x, tau)).collect()).collect();
        let truth = grid.iter().map(|&x| cfg.dgp.cond_pdf(x, tau)).collect();
        out.push(curve_envelope("f_x_given_t", Some(tau), &grid, &curves, truth)?);
    }
    Ok(out)
}

pub fn run_mc_study(cfg: &McStudyConfig) -> Result<McStudyReport> {
    cfg.validate()?;
    let replications =
        (0..cfg.replications).into_par_iter().map(|rep| run_replication(cfg, rep)).collect::<Result<Vec<_>>>()?;
    let envelopes = envelopes(cfg, &replications)?;
    let iae: Vec<f64> = replications.iter().map(|r| r.iae_t).collect();
    Ok(McStudyReport { median_iae_t: median(&iae), replications, envelopes })
}

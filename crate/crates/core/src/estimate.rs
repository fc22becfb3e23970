//! Multi-start sieve maximum likelihood.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{McDraws, SieveLikelihood, TauIntegration, DEFAULT_MC_DRAWS, DEFAULT_QUAD_NODES};
use crate::optim::{minimize, BfgsOptions, StopReason};
use crate::order_stats::{auction_rng, CensoredAuctionObs, TripleObs};
use crate::quadrature::QuadratureRule;
use crate::sieve::{SieveParams, DEFAULT_P_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrationConfig {
    Quadrature { nodes: usize },
    Mc { draws: usize, seed: u64 },
}

impl IntegrationConfig {
    pub fn build(&self, p_m: usize) -> Result<TauIntegration> {
        match *self {
            Self::Quadrature { nodes } => Ok(TauIntegration::Quadrature(QuadratureRule::gauss_legendre(nodes)?)),
            Self::Mc { draws, seed } => Ok(TauIntegration::MonteCarlo(McDraws::generate(p_m, draws, seed)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub p_m: usize,
    pub n_starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub integration: IntegrationConfig,
    /// Standard deviation of the random initial logits.
    pub start_spread: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            p_m: DEFAULT_P_M,
            n_starts: 8,
            max_iters: 2000,
            grad_tol: 1e-6,
            integration: IntegrationConfig::Quadrature { nodes: DEFAULT_QUAD_NODES },
            start_spread: 1.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Defaults for censored auctions: Monte Carlo integration over `tau`.
    pub fn censored_default() -> Self {
        Self { integration: IntegrationConfig::Mc { draws: DEFAULT_MC_DRAWS, seed: 0 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_m < 1 {
            return Err(Error::Config("p_m must be at least 1".into()));
        }
        if self.n_starts < 1 {
            return Err(Error::Config("n_starts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if !(self.start_spread >= 0.0) || !self.start_spread.is_finite() {
            return Err(Error::Config(format!(
                "start_spread must be finite and non-negative, got {}",
                self.start_spread
            )));
        }
        match self.integration {
            IntegrationConfig::Quadrature { nodes } if nodes < 2 => {
                Err(Error::Config(format!("quadrature needs at least 2 nodes, got {nodes}")))
            }
            IntegrationConfig::Mc { draws: 0, .. } => Err(Error::Config("Monte Carlo draws must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Initial free logits for start `k`.
    pub fn start_point(&self, k: usize) -> Vec<f64> {
        let n = SieveParams::n_free(self.p_m);
        if self.start_spread == 0.0 {
            return vec![0.0; n];
        }
        let normal = Normal::new(0.0, self.start_spread).expect("spread validated");
        let mut rng = auction_rng(self.seed, k as u64);
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    /// Final mean log-likelihood; absent if the likelihood was undefined at the initial point.
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reason: Option<StopReason>,
    pub gradient_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub params: SieveParams,
    /// Mean log-likelihood per observation at `params`.
    pub loglik: f64,
    pub per_start: Vec<StartSummary>,
    pub best_start: usize,
    /// Sup-norm of the gradient of the mean log-likelihood at `params`.
    pub gradient_norm: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub seed: u64,
    pub config: FitConfig,
}

pub fn fit_triples(data: &[TripleObs], cfg: &FitConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let lik = SieveLikelihood::triples(cfg.p_m, data, &cfg.integration.build(cfg.p_m)?)?;
    fit_likelihood(&lik, cfg)
}

pub fn fit_censored(auctions: &[CensoredAuctionObs], cfg: &FitConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let lik = SieveLikelihood::censored(cfg.p_m, auctions, &cfg.integration.build(cfg.p_m)?)?;
    fit_likelihood(&lik, cfg)
}

/// Maximizes a compiled likelihood from `cfg.n_starts` random starts and
/// keeps the best (ties go to the lowest start index).
pub fn fit_likelihood(lik: &SieveLikelihood, cfg: &FitConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    if lik.p_m() != cfg.p_m {
        return Err(Error::Config(format!("likelihood built for p_m = {}, config has {}", lik.p_m(), cfg.p_m)));
    }
    let p_m = cfg.p_m;
    let opts = BfgsOptions { max_iters: cfg.max_iters, grad_tol: cfg.grad_tol, ..Default::default() };
    let objective = |free: &[f64]| {
        let params = SieveParams::from_free(p_m, free).ok()?;
        let (v, g) = lik.loglik_grad(&params).ok()?;
        Some((-v, g.into_iter().map(|x| -x).collect::<Vec<_>>()))
    };

    let outcomes: Vec<_> =
        (0..cfg.n_starts).into_par_iter().map(|k| minimize(objective, &cfg.start_point(k), &opts)).collect();

    let per_start: Vec<StartSummary> = outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| match o {
            Some(o) => StartSummary {
                start: k,
                loglik: Some(-o.value),
                iterations: o.iterations,
                converged: o.converged(),
                reason: Some(o.reason),
                gradient_norm: Some(o.grad_norm()),
            },
            None => StartSummary {
                start: k,
                loglik: None,
                iterations: 0,
                converged: false,
                reason: None,
                gradient_norm: None,
            },
        })
        .collect();

    let mut best: Option<usize> = None;
    for (k, o) in outcomes.iter().enumerate() {
        if let Some(o) = o {
            if best.is_none_or(|b| -o.value > -outcomes[b].as_ref().expect("best is defined").value) {
                best = Some(k);
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::Estimation(format!(
            "likelihood is undefined at all {} starting points (seed {})",
            cfg.n_starts, cfg.seed
        )));
    };
    let o = outcomes[best].as_ref().expect("best is defined");
    let params = SieveParams::from_free(p_m, &o.x)?;
    params.validate()?;
    let weights = params.weights();
    let on_simplex = (weights.theta.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-9
        && weights.theta.iter().flatten().all(|&t| t >= 0.0);
    if !on_simplex {
        return Err(Error::Estimation("fitted weights left the simplex".into()));
    }
    Ok(EstimationResult {
        params,
        loglik: -o.value,
        best_start: best,
        gradient_norm: o.grad_norm(),
        converged: o.converged(),
        per_start,
        n_obs: lik.len(),
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SyntheticDgp;
    use crate::order_stats::{sample_censored_dataset, sample_triples};
    use crate::sieve::marginal_x_pdf;

    fn small_cfg() -> FitConfig {
        FitConfig {
            p_m: 3,
            n_starts: 3,
            integration: IntegrationConfig::Quadrature { nodes: 16 },
            seed: 7,
            ..FitConfig::default()
        }
    }

    #[test]
    fn result_invariants_hold() {
        let data = sample_triples(&SyntheticDgp::default(), 200, 4, 3, 1).unwrap();
        let cfg = small_cfg();
        let res = fit_triples(&data, &cfg).unwrap();
        let best = res.per_start.iter().filter_map(|s| s.loglik).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.loglik, best);
        assert_eq!(res.per_start[res.best_start].loglik, Some(res.loglik));
        for s in &res.per_start {
            if s.converged {
                assert!(s.gradient_norm.unwrap() <= cfg.grad_tol);
            }
        }
        assert!(res.converged);

        // gradient at the optimum against central differences
        let lik = SieveLikelihood::triples(3, &data, &cfg.integration.build(3).unwrap()).unwrap();
        let (_, grad) = lik.loglik_grad(&res.params).unwrap();
        let free = res.params.to_free();
        for k in 0..free.len() {
            let h = 1e-6 * (1.0 + free[k].abs());
            let mut up = free.clone();
            up[k] += h;
            let mut dn = free.clone();
            dn[k] -= h;
            let fd = (lik.loglik(&SieveParams::from_free(3, &up).unwrap()).unwrap()
                - lik.loglik(&SieveParams::from_free(3, &dn).unwrap()).unwrap())
                / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = sample_triples(&SyntheticDgp::default(), 100, 4, 3, 3).unwrap();
        let a = fit_triples(&data, &small_cfg()).unwrap();
        let b = fit_triples(&data, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    }

    #[test]
    fn independent_uniform_data_gives_flat_bid_marginal() {
        // under independence only the bid marginal is pinned down; the UH
        // marginal of the fit is free
        let data = sample_triples(&SyntheticDgp::uniform(), 1500, 4, 3, 11).unwrap();
        let res = fit_triples(&data, &small_cfg()).unwrap();
        let w = res.params.weights();
        let worst = (0..=50).map(|i| (marginal_x_pdf(&w, i as f64 / 50.0) - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 0.25, "sup deviation {worst}");
    }

    #[test]
    fn vanishing_reserve_matches_triples() {
        // with N = 4 and every bidder active, the censored record is the lowest
        // three of four bids plus the survival of the third
        let dgp = SyntheticDgp::default();
        let auctions = sample_censored_dataset(&dgp, &[4; 150], 1e-9, 5).unwrap();
        let triples: Vec<TripleObs> =
            auctions.iter().map(|a| TripleObs::new(a.bids[0], a.bids[1], a.bids[2], 3, 4).unwrap()).collect();
        let cfg = small_cfg();
        let a = fit_censored(&auctions, &cfg).unwrap();
        let b = fit_triples(&triples, &cfg).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-6, "{} vs {}", a.loglik, b.loglik);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = sample_triples(&SyntheticDgp::default(), 10, 4, 3, 1).unwrap();
        for cfg in [
            FitConfig { n_starts: 0, ..small_cfg() },
            FitConfig { grad_tol: 0.0, ..small_cfg() },
            FitConfig { integration: IntegrationConfig::Quadrature { nodes: 1 }, ..small_cfg() },
        ] {
            assert!(matches!(fit_triples(&data, &cfg), Err(Error::Config(_))));
        }
        assert!(fit_triples(&[], &small_cfg()).is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let text = r#"{"p_m": 4, "integration": {"kind": "mc", "draws": 50, "seed": 3}}"#;
        let cfg: FitConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.p_m, 4);
        assert_eq!(cfg.integration, IntegrationConfig::Mc { draws: 50, seed: 3 });
        assert!(serde_json::from_str::<FitConfig>(r#"{"p_m": 4, "bogus": 1}"#).is_err());
    }
}

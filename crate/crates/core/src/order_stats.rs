//! Consecutive order statistics of bids: joint densities and simulators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dist::{factorial, os_pdf, BetaParams, ConditionalFamily, ParentModel, SyntheticDgp};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Realized `(X_{r-2:n}, X_{r-1:n}, X_{r:n})` from one auction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleObs {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: u32,
    pub n: u32,
}

impl TripleObs {
    pub fn new(x: f64, y: f64, z: f64, r: u32, n: u32) -> Result<Self> {
        let obs = Self { x, y, z, r, n };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        check_ranks(self.r, self.n)?;
        for v in [self.x, self.y, self.z] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("bid {v} outside [0, 1]")));
            }
        }
        if !(self.x <= self.y && self.y <= self.z) {
            return Err(Error::Domain(format!("order statistics not sorted: ({}, {}, {})", self.x, self.y, self.z)));
        }
        Ok(())
    }
}

/// One ascending auction under a reserve price: the observed active bids
/// (all but the top value), the active and potential bidder counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredAuctionObs {
    pub id: u64,
    pub bids: Vec<f64>,
    pub n: u32,
    pub potential: u32,
    pub reserve: f64,
}

impl CensoredAuctionObs {
    pub fn validate(&self) -> Result<()> {
        if self.n > self.potential {
            return Err(Error::Domain(format!(
                "auction {}: {} active bidders exceed {} potential bidders",
                self.id, self.n, self.potential
            )));
        }
        let expected = match self.n {
            0 => 0,
            1 => 1,
            n => (n - 1) as usize,
        };
        if self.bids.len() != expected {
            return Err(Error::Domain(format!(
                "auction {}: {} bids recorded for n = {}, expected {expected}",
                self.id,
                self.bids.len(),
                self.n
            )));
        }
        if self.n == 1 && self.bids[0] != self.reserve {
            return Err(Error::Domain(format!("auction {}: a lone bidder must bid the reserve", self.id)));
        }
        if self.bids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain(format!("auction {}: bids not sorted ascending", self.id)));
        }
        if self.bids.iter().any(|&b| b < self.reserve || b > 1.0) {
            return Err(Error::Domain(format!("auction {}: bid outside [reserve, 1]", self.id)));
        }
        Ok(())
    }

    /// Highest observed bid, equal to the second-highest value when `n >= 2`.
    pub fn top_bid(&self) -> Option<f64> {
        self.bids.last().copied()
    }
}

/// Finitely supported heterogeneity: mass `masses[k]` at `taus[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteUh {
    pub taus: Vec<f64>,
    pub masses: Vec<f64>,
}

impl DiscreteUh {
    pub fn new(taus: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || taus.len() != masses.len() {
            return Err(Error::Parameter("support points and masses must be non-empty and aligned".into()));
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::Parameter("masses must be non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { taus, masses })
    }

    pub fn point(tau: f64) -> Self {
        Self { taus: vec![tau], masses: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

fn check_ranks(r: u32, n: u32) -> Result<()> {
    if r < 3 || r > n {
        return Err(Error::Index(format!("consecutive triple needs 3 <= r <= n, got r = {r}, n = {n}")));
    }
    Ok(())
}

/// `c_{r,n} = n! / ((r-2)! (n-r+1)!)`.
pub fn coeff_c(r: u32, n: u32) -> Result<f64> {
    check_ranks(r, n)?;
    Ok(factorial(n) / (factorial(r - 2) * factorial(n - r + 1)))
}

/// `n! / ((r-3)! (n-r)!)`, the constant of the raw triple density.
pub fn coeff_full(r: u32, n: u32) -> Result<f64> {
    check_ranks(r, n)?;
    Ok(factorial(n) / (factorial(r - 3) * factorial(n - r)))
}

/// Joint density of the consecutive triple given `tau`.
pub fn triple_pdf_given_tau<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, obs: &TripleObs) -> f64 {
    if !(obs.x <= obs.y && obs.y <= obs.z) {
        return 0.0;
    }
    let (r, n) = (obs.r, obs.n);
    let Ok(c) = coeff_full(r, n) else { return 0.0 };
    // powi(0) == 1 exactly: covers r = 3 and r = n without 0^0.
    let lower = parent.cond_cdf(obs.x, tau).powi((r - 3) as i32);
    let upper = parent.cond_sf(obs.z, tau).powi((n - r) as i32);
    c * lower * parent.cond_pdf(obs.x, tau) * parent.cond_pdf(obs.y, tau) * upper * parent.cond_pdf(obs.z, tau)
}

/// Same density written as `c_{r,n} f_{r-2:r-2}(x) f(y) f_{1:n-r+1}(z)`.
pub fn triple_pdf_factorized<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, obs: &TripleObs) -> Result<f64> {
    if !(obs.x <= obs.y && obs.y <= obs.z) {
        return Ok(0.0);
    }
    let (r, n) = (obs.r, obs.n);
    let low = os_pdf(parent, tau, r - 2, r - 2, obs.x)?;
    let high = os_pdf(parent, tau, 1, n - r + 1, obs.z)?;
    Ok(coeff_c(r, n)? * low * parent.cond_pdf(obs.y, tau) * high)
}

/// Unconditional triple density: integrates out `tau` against `marg_t_pdf`.
pub fn triple_pdf<P: ParentModel + ?Sized>(model: &P, obs: &TripleObs, quad: &QuadratureRule) -> Result<f64> {
    if quad.len() < 2 {
        return Err(Error::Config(format!("quadrature needs at least 2 nodes, got {}", quad.len())));
    }
    Ok(quad.integrate(|tau| triple_pdf_given_tau(model, tau, obs) * model.marg_t_pdf(tau)))
}

/// Triple density when the heterogeneity has finite support.
pub fn triple_pdf_discrete<P: ConditionalFamily + ?Sized>(cond: &P, uh: &DiscreteUh, obs: &TripleObs) -> f64 {
    uh.taus.iter().zip(&uh.masses).map(|(&tau, &m)| m * triple_pdf_given_tau(cond, tau, obs)).sum()
}

/// Generator for auction `index` of a run seeded with `seed`; each auction
/// owns its own ChaCha stream, so datasets can be produced in any order.
pub fn auction_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_values<R: Rng>(dgp: &SyntheticDgp, count: u32, rng: &mut R) -> Result<(f64, Vec<f64>)> {
    let tau = draw_beta(&dgp.tau_dist, rng)?;
    let cond = dgp.cond_at(tau)?;
    let mut values = (0..count).map(|_| draw_beta(&cond, rng)).collect::<Result<Vec<_>>>()?;
    values.sort_by(f64::total_cmp);
    Ok((tau, values))
}

fn draw_beta<R: Rng>(p: &BetaParams, rng: &mut R) -> Result<f64> {
    let d = Beta::new(p.alpha, p.beta).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Simulates `m` auctions with `n` bidders and records ranks `r-2, r-1, r`.
pub fn sample_triples(dgp: &SyntheticDgp, m: usize, n: u32, r: u32, seed: u64) -> Result<Vec<TripleObs>> {
    check_ranks(r, n)?;
    dgp.validate()?;
    (0..m)
        .map(|i| {
            let mut rng = auction_rng(seed, i as u64);
            let (_, values) = draw_values(dgp, n, &mut rng)?;
            let k = (r - 1) as usize;
            Ok(TripleObs { x: values[k - 2], y: values[k - 1], z: values[k], r, n })
        })
        .collect()
}

/// Simulates one ascending auction with `potential` bidders and reserve `reserve`.
///
/// Values at or above the reserve are active. The top value is never observed;
/// the highest recorded bid is the second-highest value. A lone active bidder
/// pays the reserve.
pub fn sample_censored_with<R: Rng>(
    dgp: &SyntheticDgp,
    potential: u32,
    reserve: f64,
    id: u64,
    rng: &mut R,
) -> Result<CensoredAuctionObs> {
    if !(0.0..1.0).contains(&reserve) {
        return Err(Error::Domain(format!("reserve {reserve} must lie in [0, 1)")));
    }
    let (_, values) = draw_values(dgp, potential, rng)?;
    let active: Vec<f64> = values.into_iter().filter(|&v| v >= reserve).collect();
    let n = active.len() as u32;
    let bids = match n {
        0 => Vec::new(),
        1 => vec![reserve],
        _ => active[..active.len() - 1].to_vec(),
    };
    Ok(CensoredAuctionObs { id, bids, n, potential, reserve })
}

pub fn sample_censored(dgp: &SyntheticDgp, potential: u32, reserve: f64, seed: u64) -> Result<CensoredAuctionObs> {
    sample_censored_with(dgp, potential, reserve, 0, &mut auction_rng(seed, 0))
}

/// One censored auction per entry of `potential`, auction `i` on stream `i`.
pub fn sample_censored_dataset(
    dgp: &SyntheticDgp,
    potential: &[u32],
    reserve: f64,
    seed: u64,
) -> Result<Vec<CensoredAuctionObs>> {
    potential
        .iter()
        .enumerate()
        .map(|(i, &big_n)| sample_censored_with(dgp, big_n, reserve, i as u64, &mut auction_rng(seed, i as u64)))
        .collect()
}

//! Sieve log-likelihoods for consecutive order-statistic triples and for
//! reserve-price-censored ascending auctions.
//!
//! Given `tau`, every per-observation density is a product of linear forms in
//! the loadings `a_i(tau) = sum_j theta_ij beta_j(tau)`, divided by a power of
//! the marginal `M(tau) = sum_i a_i(tau)`. Observations are compiled into that
//! form once; each evaluation then only needs the loadings at the integration
//! nodes, and the gradient with respect to `theta` follows in closed form.
//!
//! For the censored model the truncation terms cancel:
//! `p(n | N, tau) g(b | n, tau) = C(N, n) n! F(R)^{N-n} (1 - F(b_top)) prod_j f(b_j)`,
//! written with untruncated conditionals.

use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{binomial, factorial, ConditionalFamily, ParentModel};
use crate::error::{Error, Result};
use crate::order_stats::{auction_rng, coeff_full, CensoredAuctionObs, TripleObs};
use crate::quadrature::QuadratureRule;
use crate::sieve::{basis_pdf, basis_values, softmax_backward, SieveParams, SieveWeights};

/// Default Gauss-Legendre node count for integrating out `tau`.
pub const DEFAULT_QUAD_NODES: usize = 64;
/// Node count used by verification routines.
pub const VERIFY_QUAD_NODES: usize = 256;
/// Default Monte Carlo draws per basis density.
pub const DEFAULT_MC_DRAWS: usize = 200;

/// Observations per parallel chunk; partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Fixed draws `tau_sj ~ beta_j` used to approximate `int beta_j(tau) h(tau) dtau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDraws {
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
}

impl McDraws {
    /// `per_basis` draws from each of the `p_m` basis densities; basis `j`
    /// uses stream `j` of the seed.
    pub fn generate(p_m: usize, per_basis: usize, seed: u64) -> Result<Self> {
        Self::generate_counts(&vec![per_basis; p_m], seed)
    }

    pub fn generate_counts(counts: &[usize], seed: u64) -> Result<Self> {
        let p_m = counts.len();
        if p_m == 0 || counts.contains(&0) {
            return Err(Error::Config("every basis needs at least one Monte Carlo draw".into()));
        }
        let draws = counts
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let d = Beta::new((j + 1) as f64, (p_m - j) as f64).map_err(|e| Error::Parameter(e.to_string()))?;
                let mut rng = auction_rng(seed, j as u64);
                // keep every draw strictly inside (0, 1)
                Ok((0..s)
                    .map(|_| {
                        let t: f64 = d.sample(&mut rng);
                        t.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { draws, seed })
    }

    pub fn p_m(&self) -> usize {
        self.draws.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.draws.iter().map(Vec::len).collect()
    }
}

/// How `tau` is integrated out.
#[derive(Debug, Clone, PartialEq)]
pub enum TauIntegration {
    /// Rule on `[0, 1]` whose weights sum to one.
    Quadrature(QuadratureRule),
    MonteCarlo(McDraws),
}

impl TauIntegration {
    pub fn gauss_legendre(nodes: usize) -> Result<Self> {
        Ok(Self::Quadrature(QuadratureRule::gauss_legendre(nodes)?))
    }
}

/// Integration nodes with the basis densities evaluated at each.
#[derive(Debug, Clone)]
struct Nodes {
    beta: Vec<Vec<f64>>,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    /// `int h f^T dtau ~ sum_q w_q h(tau_q) M(tau_q)`.
    Quadrature { weights: Vec<f64> },
    /// `int h f^T dtau ~ sum_j w1_j / S_j sum_s h(tau_sj)`.
    MonteCarlo { basis: Vec<usize>, counts: Vec<usize> },
}

impl Nodes {
    fn new(p_m: usize, integration: &TauIntegration) -> Result<Self> {
        match integration {
            TauIntegration::Quadrature(q) => {
                if q.len() < 2 {
                    return Err(Error::Config(format!("quadrature needs at least 2 nodes, got {}", q.len())));
                }
                Ok(Self {
                    beta: q.nodes.iter().map(|&t| basis_pdf(p_m, t)).collect(),
                    kind: NodeKind::Quadrature { weights: q.weights.clone() },
                })
            }
            TauIntegration::MonteCarlo(mc) => {
                if mc.p_m() != p_m {
                    return Err(Error::Config(format!(
                        "Monte Carlo draws were generated for p_m = {}, model has p_m = {p_m}",
                        mc.p_m()
                    )));
                }
                let mut beta = Vec::new();
                let mut basis = Vec::new();
                for (j, draws) in mc.draws.iter().enumerate() {
                    for &t in draws {
                        beta.push(basis_pdf(p_m, t));
                        basis.push(j);
                    }
                }
                Ok(Self { beta, kind: NodeKind::MonteCarlo { basis, counts: mc.counts() } })
            }
        }
    }

    fn len(&self) -> usize {
        self.beta.len()
    }
}

/// One observation's density given `tau`:
/// `exp(log_const) * prod_f (coef_f . a)^power_f / M^m_power`.
#[derive(Debug, Clone, PartialEq)]
struct Term {
    log_const: f64,
    coefs: Vec<Vec<f64>>,
    powers: Vec<i32>,
    m_power: i32,
}

impl Term {
    fn push(&mut self, coef: Vec<f64>, power: u32) {
        if power > 0 {
            self.coefs.push(coef);
            self.powers.push(power as i32);
        }
    }
}

fn compile_triple(p_m: usize, obs: &TripleObs) -> Result<Term> {
    obs.validate()?;
    let (r, n) = (obs.r, obs.n);
    let vx = basis_values(p_m, obs.x);
    let vy = basis_values(p_m, obs.y);
    let vz = basis_values(p_m, obs.z);
    let mut term = Term { log_const: coeff_full(r, n)?.ln(), coefs: vec![], powers: vec![], m_power: n as i32 };
    term.push(vx.cdf, r - 3);
    term.push(vx.pdf, 1);
    term.push(vy.pdf, 1);
    term.push(vz.pdf, 1);
    term.push(vz.sf, n - r);
    Ok(term)
}

fn compile_censored(p_m: usize, obs: &CensoredAuctionObs) -> Result<Term> {
    obs.validate()?;
    let (n, big_n) = (obs.n, obs.potential);
    let at_reserve = basis_values(p_m, obs.reserve);
    let log_const = (binomial(big_n, n) * if n >= 2 { factorial(n) } else { 1.0 }).ln();
    let mut term = Term { log_const, coefs: vec![], powers: vec![], m_power: big_n as i32 };
    term.push(at_reserve.cdf.clone(), big_n - n);
    match n {
        0 => {}
        1 => term.push(at_reserve.sf, 1),
        _ => {
            let top = basis_values(p_m, *obs.bids.last().expect("n >= 2 has bids"));
            term.push(top.sf, 1);
            for &b in &obs.bids {
                term.push(basis_pdf(p_m, b), 1);
            }
        }
    }
    Ok(term)
}

/// Per-evaluation quantities at the integration nodes.
struct NodeState {
    loadings: Vec<Vec<f64>>,
    inv_m: Vec<f64>,
    ln_m: Vec<f64>,
    outer: Vec<f64>,
    outer_ln: Vec<f64>,
}

/// Per-chunk accumulators.
struct Partial {
    loglik: f64,
    grad_a: Vec<Vec<f64>>,
    grad_w: Vec<f64>,
}

/// Compiled likelihood for a fixed dataset and integration scheme.
#[derive(Debug, Clone)]
pub struct SieveLikelihood {
    p_m: usize,
    terms: Vec<Term>,
    ids: Vec<u64>,
    nodes: Nodes,
}

impl SieveLikelihood {
    pub fn triples(p_m: usize, data: &[TripleObs], integration: &TauIntegration) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("no observations".into()));
        }
        let terms = data.iter().map(|o| compile_triple(p_m, o)).collect::<Result<Vec<_>>>()?;
        Ok(Self { p_m, terms, ids: (0..data.len() as u64).collect(), nodes: Nodes::new(p_m, integration)? })
    }

    pub fn censored(p_m: usize, auctions: &[CensoredAuctionObs], integration: &TauIntegration) -> Result<Self> {
        if auctions.is_empty() {
            return Err(Error::Config("no auctions".into()));
        }
        let terms = auctions.iter().map(|o| compile_censored(p_m, o)).collect::<Result<Vec<_>>>()?;
        Ok(Self { p_m, terms, ids: auctions.iter().map(|a| a.id).collect(), nodes: Nodes::new(p_m, integration)? })
    }

    pub fn p_m(&self) -> usize {
        self.p_m
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Mean log-likelihood per observation.
    pub fn loglik(&self, params: &SieveParams) -> Result<f64> {
        Ok(self.evaluate(params, false)?.0)
    }

    /// Mean log-likelihood and its gradient with respect to the free logits.
    pub fn loglik_grad(&self, params: &SieveParams) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.evaluate(params, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    /// Per-observation log densities.
    pub fn terms_loglik(&self, params: &SieveParams) -> Result<Vec<f64>> {
        let st = self.node_state(&self.weights_for(params)?);
        let mut shares = vec![0.0; self.nodes.len()];
        let mut dots = Vec::new();
        self.terms
            .iter()
            .enumerate()
            .map(|(k, term)| self.term_value(term, &st, &mut shares, &mut dots).ok_or_else(|| self.numeric_error(k)))
            .collect()
    }

    fn weights_for(&self, params: &SieveParams) -> Result<SieveWeights> {
        if params.p_m != self.p_m {
            return Err(Error::Config(format!(
                "parameters have p_m = {}, likelihood expects {}",
                params.p_m, self.p_m
            )));
        }
        Ok(params.weights())
    }

    fn numeric_error(&self, k: usize) -> Error {
        Error::Numeric { index: self.ids[k] as usize, detail: "integrated density is zero or not finite".into() }
    }

    fn node_loadings(&self, weights: &SieveWeights) -> (Vec<Vec<f64>>, Vec<f64>) {
        let loadings: Vec<Vec<f64>> = self.nodes.beta.iter().map(|b| weights.loadings(b)).collect();
        let marg = loadings.iter().map(|a| a.iter().sum()).collect();
        (loadings, marg)
    }

    fn node_state(&self, weights: &SieveWeights) -> NodeState {
        let (loadings, marg) = self.node_loadings(weights);
        // node weight multiplying h(tau)
        let outer: Vec<f64> = match &self.nodes.kind {
            NodeKind::Quadrature { weights: w } => w.iter().zip(&marg).map(|(w, m)| w * m).collect(),
            NodeKind::MonteCarlo { basis, counts } => basis.iter().map(|&j| weights.w1[j] / counts[j] as f64).collect(),
        };
        NodeState {
            inv_m: marg.iter().map(|m| 1.0 / m).collect(),
            ln_m: marg.iter().map(|m| m.ln()).collect(),
            outer_ln: outer.iter().map(|w| w.ln()).collect(),
            outer,
            loadings,
        }
    }

    /// Log of the integrated density for one term. `shares` receives each
    /// node's share of the integral and `dots` the linear forms at each node,
    /// both reused by the gradient. `None` when the integral is zero or not
    /// finite.
    fn term_value(&self, term: &Term, st: &NodeState, shares: &mut [f64], dots: &mut Vec<f64>) -> Option<f64> {
        let nf = term.coefs.len();
        dots.resize(st.loadings.len() * nf, 0.0);
        let mut total = 0.0;
        for (q, a) in st.loadings.iter().enumerate() {
            let mut prod = st.outer[q] * st.inv_m[q].powi(term.m_power);
            for (f, (coef, &p)) in term.coefs.iter().zip(&term.powers).enumerate() {
                let d: f64 = coef.iter().zip(a).map(|(c, a)| c * a).sum();
                dots[q * nf + f] = d;
                prod *= if p == 1 { d } else { d.powi(p) };
            }
            shares[q] = prod;
            total += prod;
        }
        if total.is_finite() && total > 1e-280 {
            for s in shares.iter_mut() {
                *s /= total;
            }
            return Some(term.log_const + total.ln());
        }

        // underflow or overflow: redo the node sum in log space
        let mut max = f64::NEG_INFINITY;
        for q in 0..st.loadings.len() {
            let mut lv = st.outer_ln[q] - term.m_power as f64 * st.ln_m[q];
            for (f, &p) in term.powers.iter().enumerate() {
                lv += p as f64 * dots[q * nf + f].ln();
            }
            if lv.is_nan() {
                lv = f64::NEG_INFINITY;
            }
            shares[q] = lv;
            max = max.max(lv);
        }
        if !max.is_finite() {
            return None;
        }
        let mut total = 0.0;
        for s in shares.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in shares.iter_mut() {
            *s /= total;
        }
        let v = term.log_const + max + total.ln();
        v.is_finite().then_some(v)
    }

    fn evaluate(&self, params: &SieveParams, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let weights = self.weights_for(params)?;
        let st = self.node_state(&weights);
        let n_nodes = self.nodes.len();
        let p_m = self.p_m;
        let quadrature = matches!(self.nodes.kind, NodeKind::Quadrature { .. });
        let mc_basis = match &self.nodes.kind {
            NodeKind::MonteCarlo { basis, .. } => Some(basis),
            NodeKind::Quadrature { .. } => None,
        };

        let partials: Vec<Result<Partial>> = self
            .terms
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut part = Partial {
                    loglik: 0.0,
                    grad_a: if want_grad { vec![vec![0.0; p_m]; n_nodes] } else { Vec::new() },
                    grad_w: vec![0.0; p_m],
                };
                let mut shares = vec![0.0; n_nodes];
                let mut dots = Vec::new();
                let mut inv_dots = Vec::new();
                for (k, term) in chunk.iter().enumerate() {
                    let idx = c * CHUNK + k;
                    let v =
                        self.term_value(term, &st, &mut shares, &mut dots).ok_or_else(|| self.numeric_error(idx))?;
                    part.loglik += v;
                    if !want_grad {
                        continue;
                    }
                    let nf = term.coefs.len();
                    let m_power = if quadrature { 1.0 - term.m_power as f64 } else { -(term.m_power as f64) };
                    for q in 0..n_nodes {
                        let share = shares[q];
                        if share == 0.0 {
                            continue;
                        }
                        inv_dots.clear();
                        inv_dots.extend(
                            term.powers.iter().zip(&dots[q * nf..(q + 1) * nf]).map(|(&p, d)| share * p as f64 / d),
                        );
                        let base = share * m_power * st.inv_m[q];
                        let ga = &mut part.grad_a[q];
                        ga.iter_mut().for_each(|g| *g += base);
                        for (coef, &w) in term.coefs.iter().zip(&inv_dots) {
                            for (g, c) in ga.iter_mut().zip(coef) {
                                *g += c * w;
                            }
                        }
                        if let Some(basis) = mc_basis {
                            part.grad_w[basis[q]] += share;
                        }
                    }
                }
                Ok(part)
            })
            .collect();

        let m = self.terms.len() as f64;
        let mut loglik = 0.0;
        let mut grad_a = vec![vec![0.0; p_m]; if want_grad { n_nodes } else { 0 }];
        let mut grad_w = vec![0.0; p_m];
        for part in partials {
            let part = part?;
            loglik += part.loglik;
            if want_grad {
                for (acc, g) in grad_a.iter_mut().zip(&part.grad_a) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                for (a, b) in grad_w.iter_mut().zip(&part.grad_w) {
                    *a += b;
                }
            }
        }
        let loglik = loglik / m;
        if !want_grad {
            return Ok((loglik, None));
        }

        // d/dtheta_ik = sum_q grad_a[q][i] beta_k(tau_q) (+ grad_w[k] / w1_k under Monte Carlo)
        let mut grad_theta = vec![vec![0.0; p_m]; p_m];
        for (ga, beta) in grad_a.iter().zip(&self.nodes.beta) {
            for i in 0..p_m {
                for k in 0..p_m {
                    grad_theta[i][k] += ga[i] * beta[k];
                }
            }
        }
        if mc_basis.is_some() {
            for row in grad_theta.iter_mut() {
                for k in 0..p_m {
                    row[k] += grad_w[k] / weights.w1[k];
                }
            }
        }
        for v in grad_theta.iter_mut().flatten() {
            *v /= m;
        }
        Ok((loglik, Some(softmax_backward(&weights, &grad_theta))))
    }

    /// Conservative Monte Carlo standard error of the mean log-likelihood
    /// (errors treated as perfectly correlated across observations, since the
    /// draws are shared). Zero under quadrature.
    pub fn mc_standard_error(&self, params: &SieveParams) -> Result<f64> {
        let NodeKind::MonteCarlo { basis, counts } = &self.nodes.kind else {
            return Ok(0.0);
        };
        let weights = self.weights_for(params)?;
        let (loadings, marg) = self.node_loadings(&weights);
        let p_m = self.p_m;
        let mut total = 0.0;
        for term in &self.terms {
            let h: Vec<f64> = loadings
                .iter()
                .zip(&marg)
                .map(|(a, m)| {
                    let mut lv = term.log_const - term.m_power as f64 * m.ln();
                    for (coef, &p) in term.coefs.iter().zip(&term.powers) {
                        lv += p as f64 * coef.iter().zip(a).map(|(c, a)| c * a).sum::<f64>().ln();
                    }
                    lv.exp()
                })
                .collect();
            let mut sum = vec![0.0; p_m];
            let mut sum_sq = vec![0.0; p_m];
            for (v, &j) in h.iter().zip(basis) {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
            let mut value = 0.0;
            let mut var = 0.0;
            for j in 0..p_m {
                let s = counts[j] as f64;
                let mean = sum[j] / s;
                let sample_var = (sum_sq[j] / s - mean * mean).max(0.0) * s / (s - 1.0).max(1.0);
                value += weights.w1[j] * mean;
                var += weights.w1[j].powi(2) * sample_var / s;
            }
            total += var.sqrt() / value;
        }
        Ok(total / self.terms.len() as f64)
    }
}

/// Mean log-likelihood of triples under the sieve, `tau` integrated by `quad`.
pub fn loglik_triples(params: &SieveParams, data: &[TripleObs], quad: &QuadratureRule) -> Result<f64> {
    SieveLikelihood::triples(params.p_m, data, &TauIntegration::Quadrature(quad.clone()))?.loglik(params)
}

/// Mean log-likelihood of censored auctions with fixed Monte Carlo draws.
pub fn loglik_censored(params: &SieveParams, auctions: &[CensoredAuctionObs], mc: &McDraws) -> Result<f64> {
    SieveLikelihood::censored(params.p_m, auctions, &TauIntegration::MonteCarlo(mc.clone()))?.loglik(params)
}

/// `P(n active | N potential)` when each value clears the reserve with
/// probability `1 - f_r`.
pub fn p_active(f_r: f64, n: u32, potential: u32) -> Result<f64> {
    if n > potential {
        return Err(Error::Index(format!("{n} active bidders exceed {potential} potential")));
    }
    if !(0.0..=1.0).contains(&f_r) {
        return Err(Error::Domain(format!("probability {f_r} outside [0, 1]")));
    }
    Ok(binomial(potential, n) * (1.0 - f_r).powi(n as i32) * f_r.powi((potential - n) as i32))
}

/// Joint density of the observed bids given `n` active bidders and `tau`,
/// built from the reserve-truncated conditionals.
pub fn g_bids<P: ConditionalFamily + ?Sized>(parent: &P, obs: &CensoredAuctionObs, tau: f64) -> Result<f64> {
    if obs.n <= 1 {
        return Ok(1.0);
    }
    if obs.bids.iter().any(|&b| b < obs.reserve) {
        return Ok(0.0);
    }
    let survival = parent.cond_sf(obs.reserve, tau);
    if survival <= 0.0 {
        return Err(Error::DegenerateSupport(format!(
            "auction {}: reserve {} leaves no mass at tau = {tau} yet {} bidders are active",
            obs.id, obs.reserve, obs.n
        )));
    }
    let top = *obs.bids.last().expect("n >= 2 has bids");
    let mut g = factorial(obs.n) * parent.cond_sf(top, tau) / survival;
    for &b in &obs.bids {
        g *= parent.cond_pdf(b, tau) / survival;
    }
    Ok(g)
}

/// `int f^T(tau) p(n | N, tau) g(b | n, tau) dtau` for any parent model; an
/// algebra-free reference for the compiled sieve route.
pub fn censored_density_quadrature<P: ParentModel + ?Sized>(
    model: &P,
    obs: &CensoredAuctionObs,
    quad: &QuadratureRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (&tau, &w) in quad.nodes.iter().zip(&quad.weights) {
        let p = p_active(model.cond_cdf(obs.reserve, tau), obs.n, obs.potential)?;
        if p == 0.0 {
            continue;
        }
        total += w * model.marg_t_pdf(tau) * p * g_bids(model, obs, tau)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SyntheticDgp;
    use crate::order_stats::{sample_censored_dataset, sample_triples, triple_pdf};
    use crate::sieve::SieveModel;
    use approx::assert_abs_diff_eq;

    fn random_params(p_m: usize, seed: u64) -> SieveParams {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..SieveParams::n_free(p_m)).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        SieveParams::from_free(p_m, &free).unwrap()
    }

    #[test]
    fn uniform_sieve_triple_example() {
        let obs = [TripleObs::new(0.2, 0.5, 0.9, 3, 4).unwrap()];
        let quad = QuadratureRule::gauss_legendre(64).unwrap();
        let v = loglik_triples(&SieveParams::uniform(5).unwrap(), &obs, &quad).unwrap();
        assert_abs_diff_eq!(v, 2.4f64.ln(), epsilon = 1e-12);
        assert!((v - 0.8755).abs() < 1e-4);
    }

    #[test]
    fn mean_normalization_and_permutation() {
        let dgp = SyntheticDgp::default();
        let data = sample_triples(&dgp, 40, 4, 3, 2).unwrap();
        let params = random_params(4, 9);
        let quad = QuadratureRule::gauss_legendre(32).unwrap();
        let one = loglik_triples(&params, &data[..1], &quad).unwrap();
        let many = loglik_triples(&params, &vec![data[0]; 7], &quad).unwrap();
        assert_abs_diff_eq!(one, many, epsilon = 1e-13);

        let base = loglik_triples(&params, &data, &quad).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        assert_abs_diff_eq!(base, loglik_triples(&params, &rev, &quad).unwrap(), epsilon = 1e-13);
        let doubled: Vec<_> = data.iter().chain(&data).copied().collect();
        assert_abs_diff_eq!(base, loglik_triples(&params, &doubled, &quad).unwrap(), epsilon = 1e-13);
    }

    #[test]
    fn compiled_route_matches_generic_triple_density() {
        let params = random_params(5, 4);
        let model = SieveModel::from_params(&params);
        let quad = QuadratureRule::gauss_legendre(64).unwrap();
        for &(x, y, z, r, n) in &[(0.1, 0.3, 0.6, 3, 4), (0.2, 0.25, 0.9, 4, 6), (0.3, 0.5, 0.55, 3, 3)] {
            let obs = TripleObs::new(x, y, z, r, n).unwrap();
            let generic = triple_pdf(&model, &obs, &quad).unwrap().ln();
            let compiled = loglik_triples(&params, &[obs], &quad).unwrap();
            assert_abs_diff_eq!(generic, compiled, epsilon = 1e-11);
        }
    }

    #[test]
    fn p_active_examples() {
        assert_abs_diff_eq!(p_active(0.3, 2, 2).unwrap(), 0.49, epsilon = 1e-15);
        assert_eq!(p_active(1.0, 0, 3).unwrap(), 1.0);
        let total: f64 = (0..=6).map(|n| p_active(0.37, n, 6).unwrap()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
        assert!(p_active(0.5, 4, 3).is_err());
    }

    #[test]
    fn p_active_rows_sum_to_one() {
        for big_n in 0..=30 {
            for k in 0..=100 {
                let f = k as f64 / 100.0;
                let total: f64 = (0..=big_n).map(|n| p_active(f, n, big_n).unwrap()).sum();
                assert!((total - 1.0).abs() < 1e-12, "N = {big_n}, F = {f}");
            }
        }
    }

    #[test]
    fn g_bids_examples() {
        let u = SyntheticDgp::uniform();
        let none = CensoredAuctionObs { id: 0, bids: vec![], n: 0, potential: 3, reserve: 0.5 };
        let lone = CensoredAuctionObs { id: 1, bids: vec![0.5], n: 1, potential: 3, reserve: 0.5 };
        assert_eq!(g_bids(&u, &none, 0.4).unwrap(), 1.0);
        assert_eq!(g_bids(&u, &lone, 0.4).unwrap(), 1.0);
        let pair = CensoredAuctionObs { id: 2, bids: vec![0.4], n: 2, potential: 2, reserve: 0.0 };
        assert_abs_diff_eq!(g_bids(&u, &pair, 0.3).unwrap(), 1.2, epsilon = 1e-14);
        let below = CensoredAuctionObs { id: 3, bids: vec![0.4, 0.8], n: 3, potential: 4, reserve: 0.5 };
        assert_eq!(g_bids(&u, &below, 0.3).unwrap(), 0.0);
        let walled = CensoredAuctionObs { id: 4, bids: vec![1.0, 1.0], n: 3, potential: 4, reserve: 1.0 };
        assert!(matches!(g_bids(&u, &walled, 0.3), Err(Error::DegenerateSupport(_))));
    }

    #[test]
    fn compiled_censored_matches_generic_route() {
        let params = random_params(4, 21);
        let model = SieveModel::from_params(&params);
        let dgp = SyntheticDgp::default();
        let data = sample_censored_dataset(&dgp, &[1, 2, 4, 6, 8, 3, 5], 0.4, 5).unwrap();
        let quad = QuadratureRule::gauss_legendre(VERIFY_QUAD_NODES).unwrap();
        let lik = SieveLikelihood::censored(4, &data, &TauIntegration::Quadrature(quad.clone())).unwrap();
        let compiled = lik.terms_loglik(&params).unwrap();
        for (obs, c) in data.iter().zip(compiled) {
            let generic = censored_density_quadrature(&model, obs, &quad).unwrap().ln();
            assert_abs_diff_eq!(generic, c, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let dgp = SyntheticDgp::default();
        let triples = sample_triples(&dgp, 30, 5, 4, 3).unwrap();
        let auctions = sample_censored_dataset(&dgp, &[2, 3, 5, 1, 0, 7, 4, 4], 0.3, 8).unwrap();
        let quad = TauIntegration::gauss_legendre(24).unwrap();
        let mc = TauIntegration::MonteCarlo(McDraws::generate(3, 40, 1).unwrap());
        let liks = [
            SieveLikelihood::triples(3, &triples, &quad).unwrap(),
            SieveLikelihood::triples(3, &triples, &mc).unwrap(),
            SieveLikelihood::censored(3, &auctions, &quad).unwrap(),
            SieveLikelihood::censored(3, &auctions, &mc).unwrap(),
        ];
        for (l, lik) in liks.iter().enumerate() {
            let params = random_params(3, 100 + l as u64);
            let (_, grad) = lik.loglik_grad(&params).unwrap();
            let free = params.to_free();
            for k in 0..free.len() {
                let h = 1e-6 * (1.0 + free[k].abs());
                let mut up = free.clone();
                up[k] += h;
                let mut dn = free.clone();
                dn[k] -= h;
                let fd = (lik.loglik(&SieveParams::from_free(3, &up).unwrap()).unwrap()
                    - lik.loglik(&SieveParams::from_free(3, &dn).unwrap()).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "lik {l} k {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn underflowing_terms_use_log_space() {
        // F(R)^400 at R = 0.01 is far below the smallest double
        let obs = [CensoredAuctionObs { id: 0, bids: vec![], n: 0, potential: 400, reserve: 0.01 }];
        let params = SieveParams::uniform(5).unwrap();
        for integration in [
            TauIntegration::gauss_legendre(16).unwrap(),
            TauIntegration::MonteCarlo(McDraws::generate(5, 20, 3).unwrap()),
        ] {
            let lik = SieveLikelihood::censored(5, &obs, &integration).unwrap();
            let (v, g) = lik.loglik_grad(&params).unwrap();
            assert!((v - 400.0 * 0.01f64.ln()).abs() < 1e-9, "{v}");
            assert!(g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn p_m_mismatch_is_config_error() {
        let mc = McDraws::generate(3, 10, 0).unwrap();
        let data = [CensoredAuctionObs { id: 0, bids: vec![], n: 0, potential: 1, reserve: 0.5 }];
        assert!(matches!(loglik_censored(&SieveParams::uniform(4).unwrap(), &data, &mc), Err(Error::Config(_))));
    }

    #[test]
    fn mc_draws_are_reproducible_and_interior() {
        let a = McDraws::generate(5, 100, 42).unwrap();
        assert_eq!(a, McDraws::generate(5, 100, 42).unwrap());
        assert!(a.draws.iter().flatten().all(|&t| t > 0.0 && t < 1.0));
        assert_ne!(a, McDraws::generate(5, 100, 43).unwrap());
        assert!(McDraws::generate(5, 0, 1).is_err());
    }
}

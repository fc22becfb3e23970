//! Bernstein (Beta-mixture) tensor sieve for the joint density of a bid `x`
//! and the heterogeneity index `tau`:
//!
//! ```text
//! f(x, tau) = sum_{i,j} theta_ij beta_i(x) beta_j(tau),   beta_i = Beta(i, p_m + 1 - i)
//! ```
//!
//! Basis indices are 1-based in the formulas above; storage is 0-based, so
//! `gamma[0][0]` is the pinned `gamma_11` and row `i` of `theta` multiplies
//! `beta_{i+1}(x)`. Rows index the bid dimension, columns the heterogeneity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{binomial, ConditionalFamily, ParentModel};
use crate::error::{Error, Result};

/// Default number of basis functions per dimension.
pub const DEFAULT_P_M: usize = 5;

/// Values of the `p_m` Bernstein densities, CDFs and survival functions at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisValues {
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub sf: Vec<f64>,
}

/// `beta_i(x)` for `i = 1..=p_m`.
pub fn basis_pdf(p_m: usize, x: f64) -> Vec<f64> {
    let deg = p_m - 1;
    let terms = bernstein_terms(deg, x);
    terms.iter().map(|t| p_m as f64 * t).collect()
}

/// `B_i(x)` and `1 - B_i(x)` for `i = 1..=p_m`, from the binomial-tail identity
/// `I_x(i, p_m + 1 - i) = P(Bin(p_m, x) >= i)`.
fn basis_cdf_sf(p_m: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let terms = bernstein_terms(p_m, x);
    let mut sf = vec![0.0; p_m];
    let mut acc = 0.0;
    for i in 0..p_m {
        acc += terms[i];
        sf[i] = acc;
    }
    let mut cdf = vec![0.0; p_m];
    let mut acc = 0.0;
    for i in (0..p_m).rev() {
        acc += terms[i + 1];
        cdf[i] = acc;
    }
    (cdf, sf)
}

/// `C(deg, k) x^k (1-x)^(deg-k)` for `k = 0..=deg`.
fn bernstein_terms(deg: usize, x: f64) -> Vec<f64> {
    let x = x.clamp(0.0, 1.0);
    (0..=deg).map(|k| binomial(deg as u32, k as u32) * x.powi(k as i32) * (1.0 - x).powi((deg - k) as i32)).collect()
}

pub fn basis_values(p_m: usize, x: f64) -> BasisValues {
    let (cdf, sf) = basis_cdf_sf(p_m, x);
    BasisValues { pdf: basis_pdf(p_m, x), cdf, sf }
}

/// Free parameters of the sieve: the softmax logits `gamma` with `gamma_11 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SieveParams {
    pub p_m: usize,
    pub gamma: Vec<Vec<f64>>,
}

impl SieveParams {
    /// All logits zero: the uniform joint density.
    pub fn uniform(p_m: usize) -> Result<Self> {
        Self::new(p_m, vec![vec![0.0; p_m]; p_m])
    }

    pub fn new(p_m: usize, gamma: Vec<Vec<f64>>) -> Result<Self> {
        let params = Self { p_m, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_m == 0 {
            return Err(Error::Parameter("p_m must be at least 1".into()));
        }
        if self.gamma.len() != self.p_m || self.gamma.iter().any(|row| row.len() != self.p_m) {
            return Err(Error::Parameter(format!("gamma must be a {0}x{0} matrix", self.p_m)));
        }
        if self.gamma[0][0] != 0.0 {
            return Err(Error::Parameter(format!("gamma_11 is pinned at 0, found {}", self.gamma[0][0])));
        }
        if self.gamma.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Parameter("gamma entries must be finite".into()));
        }
        Ok(())
    }

    /// Number of free entries (`p_m^2 - 1`).
    pub fn n_free(p_m: usize) -> usize {
        p_m * p_m - 1
    }

    /// Free entries in row-major order, skipping `gamma_11`.
    pub fn to_free(&self) -> Vec<f64> {
        self.gamma.iter().flatten().skip(1).copied().collect()
    }

    pub fn from_free(p_m: usize, free: &[f64]) -> Result<Self> {
        if free.len() != Self::n_free(p_m) {
            return Err(Error::Parameter(format!(
                "expected {} free parameters, got {}",
                Self::n_free(p_m),
                free.len()
            )));
        }
        let mut gamma = vec![vec![0.0; p_m]; p_m];
        for (k, &v) in free.iter().enumerate() {
            let idx = k + 1;
            gamma[idx / p_m][idx % p_m] = v;
        }
        Self::new(p_m, gamma)
    }

    pub fn weights(&self) -> SieveWeights {
        softmax_weights(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses `{"p_m": int, "gamma": [[...]]}` and enforces `gamma_11 = 0`.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Mixture weights `theta` on the simplex and their column sums `w1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveWeights {
    pub p_m: usize,
    pub theta: Vec<Vec<f64>>,
    pub w1: Vec<f64>,
}

impl SieveWeights {
    /// Builds weights from an explicit `theta`, checking the simplex constraint.
    pub fn from_theta(theta: Vec<Vec<f64>>) -> Result<Self> {
        let p_m = theta.len();
        if p_m == 0 || theta.iter().any(|row| row.len() != p_m) {
            return Err(Error::Parameter("theta must be a non-empty square matrix".into()));
        }
        if theta.iter().flatten().any(|&t| !(t >= 0.0)) {
            return Err(Error::Parameter("theta entries must be non-negative".into()));
        }
        let total: f64 = theta.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("theta sums to {total}, not 1")));
        }
        let w1 = column_sums(&theta);
        Ok(Self { p_m, theta, w1 })
    }

    /// `a_i(tau) = sum_j theta_ij beta_j(tau)`, the bid-basis loadings at `tau`.
    pub fn loadings(&self, beta_tau: &[f64]) -> Vec<f64> {
        self.theta.iter().map(|row| row.iter().zip(beta_tau).map(|(t, b)| t * b).sum()).collect()
    }

    pub fn model(&self) -> SieveModel {
        SieveModel { weights: self.clone() }
    }
}

fn column_sums(theta: &[Vec<f64>]) -> Vec<f64> {
    let p_m = theta.len();
    (0..p_m).map(|j| theta.iter().map(|row| row[j]).sum()).collect()
}

/// Max-shifted softmax of `gamma`.
pub fn softmax_weights(params: &SieveParams) -> SieveWeights {
    let max = params.gamma.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<Vec<f64>> = params.gamma.iter().map(|row| row.iter().map(|g| (g - max).exp()).collect()).collect();
    let total: f64 = exp.iter().flatten().sum();
    let theta: Vec<Vec<f64>> = exp.iter().map(|row| row.iter().map(|e| e / total).collect()).collect();
    let w1 = column_sums(&theta);
    SieveWeights { p_m: params.p_m, theta, w1 }
}

/// Pulls a gradient with respect to `theta` back to the free logits.
///
/// `d/dgamma_kl = theta_kl (g_kl - sum_ij theta_ij g_ij)`; the pinned
/// `gamma_11` entry is dropped.
pub fn softmax_backward(weights: &SieveWeights, grad_theta: &[Vec<f64>]) -> Vec<f64> {
    let inner: f64 = weights.theta.iter().flatten().zip(grad_theta.iter().flatten()).map(|(t, g)| t * g).sum();
    weights.theta.iter().flatten().zip(grad_theta.iter().flatten()).skip(1).map(|(t, g)| t * (g - inner)).collect()
}

pub fn joint_pdf(w: &SieveWeights, x: f64, tau: f64) -> f64 {
    let bx = basis_pdf(w.p_m, x);
    let bt = basis_pdf(w.p_m, tau);
    w.loadings(&bt).iter().zip(&bx).map(|(a, b)| a * b).sum()
}

pub fn marginal_t_pdf(w: &SieveWeights, tau: f64) -> f64 {
    w.w1.iter().zip(basis_pdf(w.p_m, tau)).map(|(a, b)| a * b).sum()
}

/// Marginal density of the bid, `sum_i (sum_j theta_ij) beta_i(x)`.
pub fn marginal_x_pdf(w: &SieveWeights, x: f64) -> f64 {
    w.theta.iter().zip(basis_pdf(w.p_m, x)).map(|(row, b)| row.iter().sum::<f64>() * b).sum()
}

fn positive_marginal(w: &SieveWeights, tau: f64) -> Result<(Vec<f64>, f64)> {
    let a = w.loadings(&basis_pdf(w.p_m, tau));
    let marg: f64 = a.iter().sum();
    if marg <= 0.0 {
        return Err(Error::DegenerateConditioning { tau });
    }
    Ok((a, marg))
}

pub fn cond_pdf(w: &SieveWeights, x: f64, tau: f64) -> Result<f64> {
    let (a, marg) = positive_marginal(w, tau)?;
    let bx = basis_pdf(w.p_m, x);
    Ok(a.iter().zip(&bx).map(|(a, b)| a * b).sum::<f64>() / marg)
}

pub fn cond_cdf(w: &SieveWeights, x: f64, tau: f64) -> Result<f64> {
    let (a, marg) = positive_marginal(w, tau)?;
    let (cdf, _) = basis_cdf_sf(w.p_m, x);
    Ok((a.iter().zip(&cdf).map(|(a, b)| a * b).sum::<f64>() / marg).clamp(0.0, 1.0))
}

pub fn cond_sf(w: &SieveWeights, x: f64, tau: f64) -> Result<f64> {
    let (a, marg) = positive_marginal(w, tau)?;
    let (_, sf) = basis_cdf_sf(w.p_m, x);
    Ok((a.iter().zip(&sf).map(|(a, b)| a * b).sum::<f64>() / marg).clamp(0.0, 1.0))
}

/// A fitted sieve viewed as a parent model. Conditionals at a `tau` where the
/// marginal vanishes evaluate to NaN; softmax-derived weights never hit that.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveModel {
    pub weights: SieveWeights,
}

impl SieveModel {
    pub fn from_params(params: &SieveParams) -> Self {
        Self { weights: softmax_weights(params) }
    }
}

impl ConditionalFamily for SieveModel {
    fn cond_pdf(&self, x: f64, tau: f64) -> f64 {
        cond_pdf(&self.weights, x, tau).unwrap_or(f64::NAN)
    }

    fn cond_cdf(&self, x: f64, tau: f64) -> f64 {
        cond_cdf(&self.weights, x, tau).unwrap_or(f64::NAN)
    }

    fn cond_sf(&self, x: f64, tau: f64) -> f64 {
        cond_sf(&self.weights, x, tau).unwrap_or(f64::NAN)
    }
}

impl ParentModel for SieveModel {
    fn marg_t_pdf(&self, tau: f64) -> f64 {
        marginal_t_pdf(&self.weights, tau)
    }
}

//! Beta-family special functions and the parent-distribution abstraction.
//!
//! Everything lives on the unit square: bids (or values) `x` in `[0, 1]` and
//! the heterogeneity index `tau` in `[0, 1]`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Finite stand-in for a divergent density at an exact endpoint.
///
/// Observations sitting exactly on 0 or 1 have probability zero; clamping
/// keeps likelihood arithmetic free of `inf * 0` NaNs.
pub const DENSITY_CLAMP: f64 = 1e300;

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("beta shape alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Parameter(format!("beta shape beta = {} must be positive", self.beta)));
        }
        Ok(())
    }

    /// `ln B(alpha, beta)`.
    pub fn ln_norm(&self) -> f64 {
        ln_gamma(self.alpha) + ln_gamma(self.beta) - ln_gamma(self.alpha + self.beta)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Log density of `Beta(alpha, beta)` at `x`; `-inf` outside `[0, 1]` and where
/// the density vanishes, `ln(DENSITY_CLAMP)` where it diverges.
pub fn ln_beta_pdf(p: &BetaParams, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let a1 = p.alpha - 1.0;
    let b1 = p.beta - 1.0;
    let left = endpoint_log_term(a1, x);
    let right = endpoint_log_term(b1, 1.0 - x);
    let v = left + right - p.ln_norm();
    if v.is_nan() || v > DENSITY_CLAMP.ln() {
        // 0 * ln(0) cases are handled above; only divergence remains.
        DENSITY_CLAMP.ln()
    } else {
        v
    }
}

fn endpoint_log_term(power: f64, base: f64) -> f64 {
    if power == 0.0 {
        0.0
    } else if base == 0.0 {
        if power > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else {
        power * base.ln()
    }
}

/// Density of `Beta(alpha, beta)` at `x` (zero outside `[0, 1]`).
pub fn beta_pdf(p: &BetaParams, x: f64) -> f64 {
    let l = ln_beta_pdf(p, x);
    if l == f64::NEG_INFINITY {
        0.0
    } else if l >= DENSITY_CLAMP.ln() {
        DENSITY_CLAMP
    } else {
        l.exp()
    }
}

/// Regularized incomplete beta `I_x(alpha, beta)`.
pub fn beta_cdf(p: &BetaParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > p.mean() {
        1.0 - incbeta_cf(p.beta, p.alpha, 1.0 - x)
    } else {
        incbeta_cf(p.alpha, p.beta, x)
    }
}

/// Survival `1 - I_x(alpha, beta)`, computed without cancellation near 1.
pub fn beta_sf(p: &BetaParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    if x > p.mean() {
        incbeta_cf(p.beta, p.alpha, 1.0 - x)
    } else {
        1.0 - incbeta_cf(p.alpha, p.beta, x)
    }
}

/// `I_x(a, b)` by the modified Lentz continued fraction; accurate when
/// `x <= a / (a + b)`.
fn incbeta_cf(a: f64, b: f64, x: f64) -> f64 {
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp() / a;

    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            break;
        }
    }
    (front * h).clamp(0.0, 1.0)
}

/// `n!` as a float; exact through `n = 22`.
pub fn factorial(n: u32) -> f64 {
    (2..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Conditional distribution of a bid given the heterogeneity index.
pub trait ConditionalFamily: Sync {
    fn cond_pdf(&self, x: f64, tau: f64) -> f64;
    fn cond_cdf(&self, x: f64, tau: f64) -> f64;
    fn cond_sf(&self, x: f64, tau: f64) -> f64 {
        1.0 - self.cond_cdf(x, tau)
    }
}

/// A conditional family together with the marginal density of `tau`.
pub trait ParentModel: ConditionalFamily {
    fn marg_t_pdf(&self, tau: f64) -> f64;
}

/// Shape parameter affine in `tau`: `intercept + slope * tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineShape {
    pub intercept: f64,
    pub slope: f64,
}

impl AffineShape {
    pub const fn constant(v: f64) -> Self {
        Self { intercept: v, slope: 0.0 }
    }

    pub fn at(&self, tau: f64) -> f64 {
        self.intercept + self.slope * tau
    }
}

/// Analytic data-generating process: `tau ~ Beta`, `X | tau ~ Beta(alpha(tau), beta(tau))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDgp {
    pub tau_dist: BetaParams,
    pub cond_alpha: AffineShape,
    pub cond_beta: AffineShape,
}

impl Default for SyntheticDgp {
    /// `tau ~ Beta(3, 1.5)`, `X | tau ~ Beta(1.5, 1.5 (1 + tau))`.
    fn default() -> Self {
        Self {
            tau_dist: BetaParams { alpha: 3.0, beta: 1.5 },
            cond_alpha: AffineShape::constant(1.5),
            cond_beta: AffineShape { intercept: 1.5, slope: 1.5 },
        }
    }
}

impl SyntheticDgp {
    /// Uniform values independent of a uniform `tau`.
    pub fn uniform() -> Self {
        Self {
            tau_dist: BetaParams { alpha: 1.0, beta: 1.0 },
            cond_alpha: AffineShape::constant(1.0),
            cond_beta: AffineShape::constant(1.0),
        }
    }

    /// Shapes must stay positive over the whole of `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        self.tau_dist.validate()?;
        for tau in [0.0, 1.0] {
            self.cond_at(tau)?;
        }
        Ok(())
    }

    pub fn cond_at(&self, tau: f64) -> Result<BetaParams> {
        BetaParams::new(self.cond_alpha.at(tau), self.cond_beta.at(tau))
    }

    fn cond_unchecked(&self, tau: f64) -> BetaParams {
        BetaParams { alpha: self.cond_alpha.at(tau), beta: self.cond_beta.at(tau) }
    }
}

impl ConditionalFamily for SyntheticDgp {
    fn cond_pdf(&self, x: f64, tau: f64) -> f64 {
        beta_pdf(&self.cond_unchecked(tau), x)
    }

    fn cond_cdf(&self, x: f64, tau: f64) -> f64 {
        beta_cdf(&self.cond_unchecked(tau), x)
    }

    fn cond_sf(&self, x: f64, tau: f64) -> f64 {
        beta_sf(&self.cond_unchecked(tau), x)
    }
}

impl ParentModel for SyntheticDgp {
    fn marg_t_pdf(&self, tau: f64) -> f64 {
        beta_pdf(&self.tau_dist, tau)
    }
}

/// Density of the `r`-th smallest of `s` i.i.d. draws from `cond_pdf(. | tau)`.
pub fn os_pdf<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, r: u32, s: u32, x: f64) -> Result<f64> {
    if r == 0 || r > s {
        return Err(Error::Index(format!("order statistic rank r = {r} must lie in 1..={s}")));
    }
    let f = parent.cond_pdf(x, tau);
    if f == 0.0 {
        return Ok(0.0);
    }
    let coeff = factorial(s) / (factorial(r - 1) * factorial(s - r));
    // powi(0) is exactly 1, so F = 0 with r = 1 never produces 0^0.
    let lower = parent.cond_cdf(x, tau).powi((r - 1) as i32);
    let upper = parent.cond_sf(x, tau).powi((s - r) as i32);
    Ok(coeff * lower * upper * f)
}

/// Density of `X | tau` left-truncated at the reserve `reserve`.
pub fn trunc_pdf<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, reserve: f64, x: f64) -> Result<f64> {
    if x < reserve {
        return Err(Error::Domain(format!("bid {x} lies below the reserve {reserve}")));
    }
    let survival = parent.cond_sf(reserve, tau);
    if survival <= 0.0 {
        return Err(Error::DegenerateSupport(format!("reserve {reserve} truncates all mass at tau = {tau}")));
    }
    Ok(parent.cond_pdf(x, tau) / survival)
}

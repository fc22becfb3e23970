//! Reserve-price counterfactuals: bid and value quantiles, expected seller
//! profit, optimal reserves and the comparison of reserve schemes.

use serde::{Deserialize, Serialize};

use crate::dist::{ConditionalFamily, ParentModel};
use crate::error::{Error, Result};
use crate::order_stats::DiscreteUh;
use crate::quadrature::{adaptive_integrate, QuadratureRule};

const PROFIT_TOL: f64 = 1e-10;
/// Number of bidders used by the grid-maximization cross-check of the FOC
/// root. The optimal reserve does not depend on it under independent values.
pub const REFERENCE_BIDDERS: u32 = 5;
/// Status-quo reserve in homogenized units.
pub const STATUS_QUO_RESERVE: f64 = 0.7;

/// `b` with `F(b | tau) = alpha`, by bisection.
pub fn bid_quantile<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("quantile level {alpha} outside (0, 1)")));
    }
    // lowest b with F(b) >= alpha, and highest b with F(b) <= alpha
    let lower = bisect_level(parent, tau, alpha, false)?;
    let upper = bisect_level(parent, tau, alpha, true)?;
    let b = lower;
    let f = parent.cond_cdf(b, tau);
    if (f - alpha).abs() > 1e-10 {
        return Err(Error::Domain(format!("CDF jumps over level {alpha} at {b} (F = {f})")));
    }
    if upper - lower > 1e-9 {
        return Err(Error::NonUniqueQuantile { alpha, at: b });
    }
    Ok(b)
}

fn bisect_level<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, alpha: f64, inclusive: bool) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = parent.cond_cdf(mid, tau);
        if f.is_nan() {
            return Err(Error::Numeric { index: 0, detail: format!("CDF undefined at {mid} given tau = {tau}") });
        }
        if f < alpha || (inclusive && f == alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Value quantile from the bid distribution of a first-price auction with
/// `n` bidders: `v = b(alpha) + alpha b'(alpha) / (n - 1)` with
/// `b'(alpha) = 1 / f_bid(b(alpha))`.
pub fn gpv_value_quantile<P: ConditionalFamily + ?Sized>(bids: &P, tau: f64, alpha: f64, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::Parameter(format!("value inversion needs at least 2 bidders, got {n}")));
    }
    let b = bid_quantile(bids, tau, alpha)?;
    let f = bids.cond_pdf(b, tau);
    if !(f.is_finite() && f > 1e-12) {
        return Err(Error::DerivativeBlowup { bid: b });
    }
    Ok(b + alpha / ((n - 1) as f64 * f))
}

/// Expected seller profit with reserve `r`, `n_bidders` potential bidders
/// and seller value `v0` in an ascending (or second-price) auction.
pub fn expected_profit<P: ConditionalFamily + ?Sized>(
    parent: &P,
    tau: f64,
    r: f64,
    n_bidders: u32,
    v0: f64,
) -> Result<f64> {
    if n_bidders < 1 {
        return Err(Error::Parameter("expected profit needs at least one potential bidder".into()));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("reserve {r} outside [0, 1]")));
    }
    let n = n_bidders as f64;
    let f_r = parent.cond_cdf(r, tau);
    let lone = n * (1.0 - f_r) * f_r.powi(n_bidders as i32 - 1) * (r - v0);
    if n_bidders == 1 || r >= 1.0 {
        return Ok(lone);
    }
    let integrand = |v: f64| {
        let big_f = parent.cond_cdf(v, tau);
        (v - v0) * parent.cond_pdf(v, tau) * (1.0 - big_f) * big_f.powi(n_bidders as i32 - 2)
    };
    let competitive = n * (n - 1.0) * adaptive_integrate(&integrand, r, 1.0, PROFIT_TOL);
    Ok(lone + competitive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveSolution {
    pub reserve: f64,
    /// Root of `r - v0 - (1 - F(r)) / f(r)` when the bracket contains one.
    pub foc_root: Option<f64>,
    /// Maximizer of expected profit at the reference bidder count.
    pub grid_maximizer: f64,
    /// Sign changes of the FOC residual seen on a scan of the bracket.
    pub sign_changes: usize,
    /// FOC root and grid maximizer disagree by more than 1e-4.
    pub multimodal: bool,
    /// The reserve sits on an end of the bracket.
    pub boundary: bool,
}

fn foc_residual<P: ConditionalFamily + ?Sized>(parent: &P, tau: f64, v0: f64, r: f64) -> f64 {
    let sf = (1.0 - parent.cond_cdf(r, tau)).max(0.0);
    let f = parent.cond_pdf(r, tau);
    if sf == 0.0 {
        return r - v0;
    }
    // cap the inverse hazard where the density vanishes
    let inv_hazard = if f > 1e-300 { (sf / f).min(1e6) } else { 1e6 };
    r - v0 - inv_hazard
}

/// Optimal reserve given `tau`, searched on `[max(v0, floor), 1]`. `floor`
/// is the lowest reserve at which the model is identified (the observed
/// reserve for censored data, 0 otherwise).
pub fn optimal_reserve<P: ConditionalFamily + ?Sized>(
    parent: &P,
    tau: f64,
    v0: f64,
    floor: f64,
) -> Result<ReserveSolution> {
    if !(0.0..1.0).contains(&v0) {
        return Err(Error::Domain(format!("seller value {v0} outside [0, 1)")));
    }
    let lo = v0.max(floor);
    let hi = 1.0;

    const SCAN: usize = 200;
    let scan: Vec<f64> =
        (0..=SCAN).map(|i| foc_residual(parent, tau, v0, (lo + (hi - lo) * i as f64 / SCAN as f64).min(hi))).collect();
    let sign_changes = scan.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();

    let foc_root = if scan[0] < 0.0 && scan[SCAN] >= 0.0 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if foc_residual(parent, tau, v0, mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    } else {
        None
    };

    let profit = |r: f64| expected_profit(parent, tau, r, REFERENCE_BIDDERS, v0);
    let grid_maximizer = maximize_on_grid(&profit, lo, hi)?;

    let multimodal = foc_root.is_some_and(|r| (r - grid_maximizer).abs() > 1e-4);
    let reserve = match foc_root {
        Some(r) if !multimodal => r,
        _ => grid_maximizer,
    };
    let boundary = (reserve - lo).abs() < 1e-9 || (hi - reserve).abs() < 1e-9;
    Ok(ReserveSolution { reserve, foc_root, grid_maximizer, sign_changes, multimodal, boundary })
}

/// Grid search on 201 points followed by golden-section refinement around
/// the best grid point.
fn maximize_on_grid<F: Fn(f64) -> Result<f64>>(f: &F, lo: f64, hi: f64) -> Result<f64> {
    const GRID: usize = 200;
    if hi - lo <= 0.0 {
        return Ok(lo);
    }
    let step = (hi - lo) / GRID as f64;
    let point = |i: usize| (lo + step * i as f64).min(hi);
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..=GRID {
        let v = f(point(i))?;
        if v > best.1 {
            best = (i, v);
        }
    }
    let mut a = (lo + step * (best.0 as f64 - 1.0)).max(lo);
    let mut b = (lo + step * (best.0 as f64 + 1.0)).min(hi);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-9 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    // keep the grid point if refinement did not improve on it
    if f(mid)? >= best.1 {
        Ok(mid)
    } else {
        Ok(point(best.0))
    }
}

/// How the UH is integrated out in scheme comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UhMeasure {
    Point {
        tau: f64,
    },
    Discrete {
        taus: Vec<f64>,
        masses: Vec<f64>,
    },
    /// Gauss-Legendre nodes weighted by the model's UH density.
    Continuous {
        nodes: usize,
    },
}

impl UhMeasure {
    /// Nodes and probability weights (normalized to sum to one).
    pub fn atoms<P: ParentModel + ?Sized>(&self, parent: &P) -> Result<Vec<(f64, f64)>> {
        let atoms: Vec<(f64, f64)> = match self {
            Self::Point { tau } => vec![(*tau, 1.0)],
            Self::Discrete { taus, masses } => {
                let uh = DiscreteUh::new(taus.clone(), masses.clone())?;
                uh.taus.iter().copied().zip(uh.masses.iter().copied()).collect()
            }
            Self::Continuous { nodes } => {
                let q = QuadratureRule::gauss_legendre(*nodes)?;
                q.nodes.iter().zip(&q.weights).map(|(&t, &w)| (t, w * parent.marg_t_pdf(t))).collect()
            }
        };
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateSupport("UH measure has no mass".into()));
        }
        Ok(atoms.into_iter().map(|(t, w)| (t, w / total)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveProblem<P> {
    pub parent: P,
    pub v0: f64,
    /// Probability of each potential-bidder count.
    pub n_dist: Vec<(u32, f64)>,
    pub fixed_reserve: f64,
    pub status_quo_reserve: f64,
    /// Lowest admissible reserve (the observed reserve for censored fits).
    pub reserve_floor: f64,
    pub uh: UhMeasure,
}

impl<P: ParentModel> ReserveProblem<P> {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.v0) {
            return Err(Error::Config(format!("v0 = {} outside [0, 1)", self.v0)));
        }
        if self.n_dist.is_empty() || self.n_dist.iter().any(|&(n, p)| n < 1 || !(p >= 0.0)) {
            return Err(Error::Config("bidder-count distribution needs counts >= 1 and nonnegative masses".into()));
        }
        let total: f64 = self.n_dist.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bidder-count masses sum to {total}")));
        }
        for r in [self.fixed_reserve, self.status_quo_reserve, self.reserve_floor] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("reserve {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `sum_N p_N pi(r, N)` given `tau`.
    pub fn profit(&self, tau: f64, r: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(n, p) in &self.n_dist {
            if p > 0.0 {
                total += p * expected_profit(&self.parent, tau, r, n, self.v0)?;
            }
        }
        Ok(total)
    }
}

/// Pre-computed empirical distribution of bidder counts.
pub fn empirical_n_dist(counts: impl IntoIterator<Item = u32>) -> Vec<(u32, f64)> {
    let mut tally = std::collections::BTreeMap::new();
    let mut total = 0usize;
    for n in counts {
        *tally.entry(n).or_insert(0usize) += 1;
        total += 1;
    }
    tally.into_iter().map(|(n, c)| (n, c as f64 / total as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReserve {
    pub tau: f64,
    pub weight: f64,
    pub reserve: f64,
    /// Bidder-count-averaged profit at `reserve`.
    pub profit: f64,
    pub multimodal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueReport {
    pub v0: f64,
    pub fixed_reserve: f64,
    pub status_quo_reserve: f64,
    /// UH-specific optimal reserves.
    pub gain_optimal: f64,
    pub gain_fixed: f64,
    pub gain_status_quo: f64,
    /// `(fixed - status quo) / (optimal - status quo)`; absent when the
    /// optimal scheme does not improve on the status quo.
    pub fixed_share_of_potential: Option<f64>,
    pub schedule: Vec<TauReserve>,
}

/// Optimal reserve and profit at each `tau`.
pub fn reserve_schedule<P: ParentModel>(problem: &ReserveProblem<P>, taus: &[(f64, f64)]) -> Result<Vec<TauReserve>> {
    taus.iter()
        .map(|&(tau, weight)| {
            let sol = optimal_reserve(&problem.parent, tau, problem.v0, problem.reserve_floor)?;
            Ok(TauReserve {
                tau,
                weight,
                reserve: sol.reserve,
                profit: problem.profit(tau, sol.reserve)?,
                multimodal: sol.multimodal,
            })
        })
        .collect()
}

pub fn revenue_compare<P: ParentModel>(problem: &ReserveProblem<P>) -> Result<RevenueReport> {
    problem.validate()?;
    let atoms = problem.uh.atoms(&problem.parent)?;
    let schedule = reserve_schedule(problem, &atoms)?;
    let mut gain_optimal = 0.0;
    let mut gain_fixed = 0.0;
    let mut gain_status_quo = 0.0;
    for s in &schedule {
        gain_optimal += s.weight * s.profit;
        gain_fixed += s.weight * problem.profit(s.tau, problem.fixed_reserve)?;
        gain_status_quo += s.weight * problem.profit(s.tau, problem.status_quo_reserve)?;
    }
    let span = gain_optimal - gain_status_quo;
    Ok(RevenueReport {
        v0: problem.v0,
        fixed_reserve: problem.fixed_reserve,
        status_quo_reserve: problem.status_quo_reserve,
        gain_optimal,
        gain_fixed,
        gain_status_quo,
        fixed_share_of_potential: (span > 1e-12).then(|| (gain_fixed - gain_status_quo) / span),
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{AffineShape, BetaParams, SyntheticDgp};
    use approx::assert_abs_diff_eq;

    fn uniform() -> SyntheticDgp {
        SyntheticDgp::uniform()
    }

    /// Conditional Beta(a, b) not depending on tau.
    fn beta_cond(a: f64, b: f64) -> SyntheticDgp {
        SyntheticDgp {
            tau_dist: BetaParams::new(1.0, 1.0).unwrap(),
            cond_alpha: AffineShape { intercept: a, slope: 0.0 },
            cond_beta: AffineShape { intercept: b, slope: 0.0 },
        }
    }

    #[test]
    fn bid_quantile_examples() {
        for alpha in [0.01, 0.3, 0.5, 0.99] {
            assert_abs_diff_eq!(bid_quantile(&uniform(), 0.4, alpha).unwrap(), alpha, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bid_quantile(&beta_cond(2.0, 1.0), 0.1, 0.5).unwrap(), 0.5f64.sqrt(), epsilon = 1e-10);
        let dgp = SyntheticDgp::default();
        for alpha in [0.05, 0.2, 0.7, 0.95] {
            let b = bid_quantile(&dgp, 0.6, alpha).unwrap();
            assert!((dgp.cond_cdf(b, 0.6) - alpha).abs() <= 1e-10);
        }
        assert!(bid_quantile(&uniform(), 0.5, 0.0).is_err());
    }

    /// CDF flat on [0.4, 0.6].
    struct Gap;
    impl ConditionalFamily for Gap {
        fn cond_pdf(&self, x: f64, _: f64) -> f64 {
            if (0.4..=0.6).contains(&x) {
                0.0
            } else {
                1.25
            }
        }
        fn cond_cdf(&self, x: f64, _: f64) -> f64 {
            if x < 0.4 {
                1.25 * x
            } else if x <= 0.6 {
                0.5
            } else {
                0.5 + 1.25 * (x - 0.6)
            }
        }
    }

    #[test]
    fn flat_cdf_region_is_reported() {
        assert!(matches!(bid_quantile(&Gap, 0.0, 0.5), Err(Error::NonUniqueQuantile { .. })));
        assert!(bid_quantile(&Gap, 0.0, 0.25).is_ok());
    }

    /// Equilibrium bids v / 2 of a two-bidder first-price auction with uniform values.
    struct HalfUniform;
    impl ConditionalFamily for HalfUniform {
        fn cond_pdf(&self, x: f64, _: f64) -> f64 {
            if (0.0..=0.5).contains(&x) {
                2.0
            } else {
                0.0
            }
        }
        fn cond_cdf(&self, x: f64, _: f64) -> f64 {
            (2.0 * x).clamp(0.0, 1.0)
        }
    }

    #[test]
    fn gpv_round_trip_and_limits() {
        for i in 1..=99 {
            let alpha = i as f64 / 100.0;
            assert_abs_diff_eq!(gpv_value_quantile(&HalfUniform, 0.0, alpha, 2).unwrap(), alpha, epsilon = 1e-10);
        }
        // with bids drawn uniformly, the correction alpha / (n - 1) vanishes as n grows
        let gap = gpv_value_quantile(&uniform(), 0.5, 0.99, 100).unwrap() - 0.99;
        assert!(gap > 0.0 && gap <= 0.011);
        let tiny = 1e-9;
        assert!(gpv_value_quantile(&uniform(), 0.5, tiny, 2).unwrap() < 1e-8);
        assert!(gpv_value_quantile(&uniform(), 0.5, 0.5, 1).is_err());
        assert!(matches!(
            gpv_value_quantile(&HalfUniform, 0.0, 0.999_999_999_9, 2),
            Ok(_) | Err(Error::DerivativeBlowup { .. })
        ));
    }

    #[test]
    fn expected_profit_examples() {
        assert_abs_diff_eq!(expected_profit(&uniform(), 0.5, 0.0, 2, 0.0).unwrap(), 1.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(expected_profit(&uniform(), 0.5, 0.5, 2, 0.0).unwrap(), 5.0 / 12.0, epsilon = 1e-10);
        assert_eq!(expected_profit(&uniform(), 0.5, 1.0, 3, 0.2).unwrap(), 0.0);
        // one bidder: take-it-or-leave-it offer
        assert_abs_diff_eq!(expected_profit(&uniform(), 0.5, 0.6, 1, 0.0).unwrap(), 0.24, epsilon = 1e-14);
        // uniform, N bidders, r = 0: expected second-highest of N is (N - 1) / (N + 1)
        for n in 2..8u32 {
            let expected = (n as f64 - 1.0) / (n as f64 + 1.0);
            assert_abs_diff_eq!(expected_profit(&uniform(), 0.5, 0.0, n, 0.0).unwrap(), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn uniform_optimal_reserves() {
        let a = optimal_reserve(&uniform(), 0.5, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(a.reserve, 0.5, epsilon = 1e-12);
        assert_eq!(a.sign_changes, 1);
        assert!(!a.multimodal);
        let b = optimal_reserve(&uniform(), 0.5, 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(b.reserve, 0.75, epsilon = 1e-12);
        assert!((b.grid_maximizer - 0.75).abs() < 1e-4);
    }

    #[test]
    fn foc_root_matches_grid_search_for_simulation_model() {
        let dgp = SyntheticDgp::default();
        let sol = optimal_reserve(&dgp, 0.5, 0.5, 0.0).unwrap();
        let root = sol.foc_root.unwrap();
        assert!((root - sol.grid_maximizer).abs() <= 1e-4, "{root} vs {}", sol.grid_maximizer);
        assert_eq!(sol.sign_changes, 1);
        // no grid reserve beats it
        let best = expected_profit(&dgp, 0.5, sol.reserve, 5, 0.5).unwrap();
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            assert!(expected_profit(&dgp, 0.5, r, 5, 0.5).unwrap() <= best + 1e-8);
        }
    }

    #[test]
    fn reserve_respects_floor() {
        let sol = optimal_reserve(&uniform(), 0.5, 0.0, 0.7).unwrap();
        assert!(sol.reserve >= 0.7);
        assert!(sol.boundary);
    }

    #[test]
    fn fixed_equal_to_optimal_matches() {
        let problem = ReserveProblem {
            parent: uniform(),
            v0: 0.0,
            n_dist: vec![(2, 0.5), (4, 0.5)],
            fixed_reserve: 0.5,
            status_quo_reserve: STATUS_QUO_RESERVE,
            reserve_floor: 0.0,
            uh: UhMeasure::Point { tau: 0.5 },
        };
        let rep = revenue_compare(&problem).unwrap();
        assert_abs_diff_eq!(rep.gain_optimal, rep.gain_fixed, epsilon = 1e-10);
        assert!(rep.gain_optimal >= rep.gain_status_quo - 1e-6);
        assert_abs_diff_eq!(rep.fixed_share_of_potential.unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn optimal_scheme_dominates() {
        let problem = ReserveProblem {
            parent: SyntheticDgp::default(),
            v0: 0.5,
            n_dist: empirical_n_dist([2, 3, 3, 5, 8, 1]),
            fixed_reserve: 0.8,
            status_quo_reserve: STATUS_QUO_RESERVE,
            reserve_floor: 0.0,
            uh: UhMeasure::Continuous { nodes: 8 },
        };
        let rep = revenue_compare(&problem).unwrap();
        assert!(rep.gain_optimal >= rep.gain_fixed - 1e-6);
        assert!(rep.gain_optimal >= rep.gain_status_quo - 1e-6);
        for g in [rep.gain_optimal, rep.gain_fixed, rep.gain_status_quo] {
            assert!((0.0..=0.5).contains(&g));
        }
        for s in &rep.schedule {
            assert!(s.reserve - 0.5 >= 0.0 && s.reserve - 0.5 <= 0.5);
        }
        // conditional shifts down with tau in this model, so reserves fall
        assert!(rep.schedule.windows(2).all(|w| w[1].reserve <= w[0].reserve + 1e-9));
    }

    #[test]
    fn empirical_distribution_sums_to_one() {
        let d = empirical_n_dist([3, 1, 3, 2]);
        assert_eq!(d, vec![(1, 0.25), (2, 0.25), (3, 0.5)]);
    }
}

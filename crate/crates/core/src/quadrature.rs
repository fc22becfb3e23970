//! Gauss-Legendre rules and adaptive integration on finite intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights on an interval. On `[0, 1]` the weights sum to one, so
/// `integrate` is an expectation against the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n`-node Gauss-Legendre rule on `[0, 1]`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        Self::gauss_legendre_on(n, 0.0, 1.0)
    }

    pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("quadrature needs at least 2 nodes, got {n}")));
        }
        if !(a < b) {
            return Err(Error::Config(format!("empty integration interval [{a}, {b}]")));
        }
        let (x, w) = legendre_nodes(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Ok(Self { nodes: x.iter().map(|t| mid + half * t).collect(), weights: w.iter().map(|v| half * v).collect() })
    }

    /// Single node carrying unit weight; used to approximate a point mass.
    pub fn point(tau: f64) -> Self {
        Self { nodes: vec![tau], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Nodes and weights of the Gauss-Legendre rule on `[-1, 1]`, ascending.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_eval(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre_eval(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

const ADAPT_ORDER: usize = 15;
const ADAPT_MAX_PANELS: usize = 4000;

struct Panel {
    lo: f64,
    hi: f64,
    left: f64,
    right: f64,
    error: f64,
}

impl Panel {
    fn value(&self) -> f64 {
        self.left + self.right
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error).is_eq()
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Legendre integration to absolute tolerance `tol`.
///
/// Each panel's error is estimated by comparing it with the sum over its two
/// halves; the worst panel is split until the summed estimate drops below
/// `tol`. Copes with integrable endpoint singularities such as `x^-0.5`.
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (x, w) = legendre_nodes(ADAPT_ORDER);
    let rule = |lo: f64, hi: f64| {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        x.iter().zip(&w).map(|(t, wt)| wt * f(mid + half * t)).sum::<f64>() * half
    };
    let make = |lo: f64, hi: f64, coarse: f64| {
        let mid = 0.5 * (lo + hi);
        let left = rule(lo, mid);
        let right = rule(mid, hi);
        Panel { lo, hi, left, right, error: (left + right - coarse).abs() }
    };
    let min_width = (b - a).abs() * 1e-200;
    let mut heap = std::collections::BinaryHeap::new();
    heap.push(make(a, b, rule(a, b)));
    let mut done = 0.0;
    while heap.len() < ADAPT_MAX_PANELS {
        let total_error: f64 = heap.iter().map(|p| p.error).sum();
        if total_error <= tol {
            break;
        }
        let worst = heap.pop().expect("heap is never empty");
        if (worst.hi - worst.lo).abs() < min_width {
            done += worst.value();
            continue;
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        heap.push(make(worst.lo, mid, worst.left));
        heap.push(make(mid, worst.hi, worst.right));
    }
    done + heap.iter().map(Panel::value).sum::<f64>()
}

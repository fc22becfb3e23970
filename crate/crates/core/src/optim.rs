//! BFGS minimization with a backtracking Armijo line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Stop once the gradient sup-norm drops below this.
    pub grad_tol: f64,
    /// Stop once the relative objective change over `stall_window` iterations
    /// drops below this.
    pub rel_tol: f64,
    pub stall_window: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iters: 2000, grad_tol: 1e-6, rel_tol: 1e-10, stall_window: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ObjectiveStalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub reason: StopReason,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl BfgsOutcome {
    pub fn grad_norm(&self) -> f64 {
        sup_norm(&self.grad)
    }

    pub fn converged(&self) -> bool {
        self.reason == StopReason::GradientTolerance
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient or `None` where it is
/// not defined. Undefined trial points are treated as `+inf` by the line
/// search. Returns `None` only when `f` is undefined at `x0`.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let eval = |x: &[f64]| f(x).filter(|(v, g)| v.is_finite() && g.iter().all(|g| g.is_finite()));
    let (mut value, mut grad) = eval(x0)?;
    let mut x = x0.to_vec();
    let mut h = identity(n);
    let mut fresh = true;
    let mut trace = vec![value];
    let mut iterations = 0;

    let reason = loop {
        if sup_norm(&grad) < opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIterations;
        }
        if trace.len() > opts.stall_window {
            let old = trace[trace.len() - 1 - opts.stall_window];
            if (old - value).abs() <= opts.rel_tol * old.abs().max(1e-300) {
                break StopReason::ObjectiveStalled;
            }
        }

        let mut dir: Vec<f64> = h.iter().map(|row| -dot(row, &grad)).collect();
        let mut slope = dot(&dir, &grad);
        if slope >= 0.0 {
            h = identity(n);
            fresh = true;
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&dir, &grad);
        }

        let Some((new_x, new_value, new_grad)) = line_search(&eval, &x, value, slope, &dir) else {
            if fresh {
                break StopReason::LineSearchFailed;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = new_x;
        value = new_value;
        grad = new_grad;
        trace.push(value);
        iterations += 1;
    };

    Some(BfgsOutcome { x, value, grad, iterations, reason, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

type Trial = (Vec<f64>, f64, Vec<f64>);

fn line_search<E>(eval: &E, x: &[f64], value: f64, slope: f64, dir: &[f64]) -> Option<Trial>
where
    E: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const ARMIJO: f64 = 1e-4;
    let mut step = 1.0;
    for _ in 0..60 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        if let Some((v, g)) = eval(&trial) {
            if v <= value + ARMIJO * step * slope {
                return Some((trial, v, g));
            }
        }
        step *= 0.5;
    }
    None
}

/// Inverse-Hessian update `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

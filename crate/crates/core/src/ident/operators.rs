use nalgebra::{DMatrix, DVector};

use super::grid::{OperatorGrid, SegmentGrid};
use super::LabModel;
use crate::dist::{factorial, ParentModel};
use crate::error::{Error, Result};
use crate::order_stats::{coeff_c, coeff_full};
use crate::quadrature::QuadratureRule;

/// Discretized `J_y = L Delta_y H` for one `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperators {
    /// `f_{r-2:r-2}(x_a | tau_k) w_a`, rows over the low segment.
    pub l_mat: DMatrix<f64>,
    /// `f_{1:n-r+1}(z_b | tau_k) w_b`, columns over the high segment.
    pub h_mat: DMatrix<f64>,
    /// Diagonal of `Delta_y`: `c_{r,n} f(y | tau_k) m_k`.
    pub delta_y: DVector<f64>,
    /// Joint density of the triple at `(x_a, y, z_b)` times `w_a w_b`.
    pub j_y: DMatrix<f64>,
    pub y: f64,
    pub r: u32,
    pub n: u32,
}

fn check_ranks(r: u32, n: u32) -> Result<()> {
    if r < 3 || r > n {
        return Err(Error::Index(format!("need 3 <= r <= n, got r = {r}, n = {n}")));
    }
    Ok(())
}

fn check_y(grid: &OperatorGrid, y: f64) -> Result<()> {
    let p = grid.partition;
    if !(p.c1..=p.c2).contains(&y) {
        return Err(Error::Domain(format!("y = {y} outside the middle segment [{}, {}]", p.c1, p.c2)));
    }
    Ok(())
}

/// `F^{power} f` on a grid for component `k`, with cell weights applied.
fn lower_kernel(model: &LabModel, k: usize, g: &SegmentGrid, power: u32) -> Vec<f64> {
    g.points.iter().zip(&g.weights).map(|(&x, w)| model.cdf(k, x).powi(power as i32) * model.pdf(k, x) * w).collect()
}

/// `(1 - F)^{power} f` on a grid for component `k`, with cell weights applied.
fn upper_kernel(model: &LabModel, k: usize, g: &SegmentGrid, power: u32) -> Vec<f64> {
    g.points.iter().zip(&g.weights).map(|(&z, w)| model.sf(k, z).powi(power as i32) * model.pdf(k, z) * w).collect()
}

pub fn build_operators(model: &LabModel, grid: &OperatorGrid, y: f64, r: u32, n: u32) -> Result<DiscreteOperators> {
    check_ranks(r, n)?;
    check_y(grid, y)?;
    model.validate()?;
    let k_len = model.len();
    let (nl, nh) = (grid.low.len(), grid.high.len());
    let c = coeff_c(r, n)?;
    let mut l_mat = DMatrix::zeros(nl, k_len);
    let mut h_mat = DMatrix::zeros(k_len, nh);
    let mut delta_y = DVector::zeros(k_len);
    for k in 0..k_len {
        let low = lower_kernel(model, k, &grid.low, r - 3);
        let high = upper_kernel(model, k, &grid.high, n - r);
        for (a, v) in low.iter().enumerate() {
            l_mat[(a, k)] = (r - 2) as f64 * v;
        }
        for (b, v) in high.iter().enumerate() {
            h_mat[(k, b)] = (n - r + 1) as f64 * v;
        }
        delta_y[k] = c * model.pdf(k, y) * model.masses[k];
    }
    let j_y = triple_matrix(model, grid, y, r, n)?;
    Ok(DiscreteOperators { l_mat, h_mat, delta_y, j_y, y, r, n })
}

/// Joint density of `(X_{r-2:n}, X_{r-1:n}, X_{r:n})` at `(x_a, y, z_b)`,
/// mixed over the UH, times `w_a w_b`.
fn triple_matrix(model: &LabModel, grid: &OperatorGrid, y: f64, r: u32, n: u32) -> Result<DMatrix<f64>> {
    let coef = coeff_full(r, n)?;
    let mut j = DMatrix::zeros(grid.low.len(), grid.high.len());
    for k in 0..model.len() {
        let fy = model.pdf(k, y);
        if fy == 0.0 {
            continue;
        }
        let lead = model.masses[k] * coef * fy;
        let xs = lower_kernel(model, k, &grid.low, r - 3);
        let zs = upper_kernel(model, k, &grid.high, n - r);
        for (a, xv) in xs.iter().enumerate() {
            for (b, zv) in zs.iter().enumerate() {
                j[(a, b)] += lead * xv * zv;
            }
        }
    }
    Ok(j)
}

/// `max |J_y - L Delta_y H|`.
pub fn check_factorization(ops: &DiscreteOperators) -> f64 {
    let prod = &ops.l_mat * DMatrix::from_diagonal(&ops.delta_y) * &ops.h_mat;
    (&ops.j_y - prod).amax()
}

/// Observable joint densities used by the recovery pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub grid: OperatorGrid,
    pub r: u32,
    pub n: u32,
    pub y1: f64,
    pub y2: f64,
    pub j_y1: DMatrix<f64>,
    pub j_y2: DMatrix<f64>,
    /// `J_y` at every point of the middle grid.
    pub j_mid: Vec<DMatrix<f64>>,
    /// Joint density of `(X_{r-1:n}, X_{r:n})` at `(x_a, z_b)` with `x_a` over
    /// the low then middle grids and `z_b` over the high grid, times `w_a w_b`.
    pub pair: DMatrix<f64>,
}

impl Observables {
    pub fn from_model(model: &LabModel, grid: &OperatorGrid, r: u32, n: u32, y1: f64, y2: f64) -> Result<Self> {
        check_ranks(r, n)?;
        check_y(grid, y1)?;
        check_y(grid, y2)?;
        model.validate()?;
        let j_mid = grid.mid.points.iter().map(|&y| triple_matrix(model, grid, y, r, n)).collect::<Result<Vec<_>>>()?;

        let pair_coef = factorial(n) / (factorial(r - 2) * factorial(n - r));
        let rows = grid.low.len() + grid.mid.len();
        let mut pair = DMatrix::zeros(rows, grid.high.len());
        for k in 0..model.len() {
            let xs: Vec<f64> = [&grid.low, &grid.mid].iter().flat_map(|g| lower_kernel(model, k, g, r - 2)).collect();
            let zs = upper_kernel(model, k, &grid.high, n - r);
            let lead = model.masses[k] * pair_coef;
            for (a, xv) in xs.iter().enumerate() {
                for (b, zv) in zs.iter().enumerate() {
                    pair[(a, b)] += lead * xv * zv;
                }
            }
        }

        Ok(Self {
            grid: grid.clone(),
            r,
            n,
            y1,
            y2,
            j_y1: triple_matrix(model, grid, y1, r, n)?,
            j_y2: triple_matrix(model, grid, y2, r, n)?,
            j_mid,
            pair,
        })
    }
}

/// `max |J_y - L Delta_y H|` for a continuous-UH parent: `J_y` from a
/// `reference_nodes`-point quadrature in `tau`, the factors from a
/// `k_nodes`-point one.
pub fn factorization_error_continuous<P: ParentModel + ?Sized>(
    parent: &P,
    grid: &OperatorGrid,
    y: f64,
    r: u32,
    n: u32,
    k_nodes: usize,
    reference_nodes: usize,
) -> Result<f64> {
    check_ranks(r, n)?;
    check_y(grid, y)?;
    let coef = coeff_full(r, n)?;
    let operator = |nodes: usize| -> Result<DMatrix<f64>> {
        let q = QuadratureRule::gauss_legendre(nodes)?;
        let mut j = DMatrix::zeros(grid.low.len(), grid.high.len());
        for (&tau, &w) in q.nodes.iter().zip(&q.weights) {
            let lead = w * parent.marg_t_pdf(tau) * coef * parent.cond_pdf(y, tau);
            let xs: Vec<f64> = grid
                .low
                .points
                .iter()
                .zip(&grid.low.weights)
                .map(|(&x, wx)| parent.cond_cdf(x, tau).powi(r as i32 - 3) * parent.cond_pdf(x, tau) * wx)
                .collect();
            let zs: Vec<f64> = grid
                .high
                .points
                .iter()
                .zip(&grid.high.weights)
                .map(|(&z, wz)| parent.cond_sf(z, tau).powi((n - r) as i32) * parent.cond_pdf(z, tau) * wz)
                .collect();
            for (a, xv) in xs.iter().enumerate() {
                for (b, zv) in zs.iter().enumerate() {
                    j[(a, b)] += lead * xv * zv;
                }
            }
        }
        Ok(j)
    };
    Ok((operator(reference_nodes)? - operator(k_nodes)?).amax())
}

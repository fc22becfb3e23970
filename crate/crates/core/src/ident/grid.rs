//! Uniform segment grids with high-order cumulative integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Points per local interpolation stencil.
const STENCIL: usize = 6;

/// `W[o][j] = int_o^{o+1} l_j(t) dt` for the Lagrange basis `l_j` on nodes
/// `0..STENCIL`.
fn stencil_weights() -> [[f64; STENCIL]; STENCIL - 1] {
    let gl = QuadratureRule::gauss_legendre(STENCIL).expect("fixed node count");
    let mut w = [[0.0; STENCIL]; STENCIL - 1];
    for (o, row) in w.iter_mut().enumerate() {
        for (j, wj) in row.iter_mut().enumerate() {
            *wj = gl.integrate(|u| {
                let t = o as f64 + u;
                (0..STENCIL).filter(|&m| m != j).map(|m| (t - m as f64) / (j as f64 - m as f64)).product::<f64>()
            });
        }
    }
    w
}

/// Uniform grid on `[lo, hi]` including both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: Vec<f64>,
    /// Weights integrating a function sampled on `points` over the segment.
    pub weights: Vec<f64>,
}

impl SegmentGrid {
    pub fn uniform(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if n_points < STENCIL {
            return Err(Error::Config(format!("segment grids need at least {STENCIL} points, got {n_points}")));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("empty segment [{lo}, {hi}]")));
        }
        let n = n_points - 1;
        let h = (hi - lo) / n as f64;
        let points: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + h * i as f64 }).collect();
        let mut grid = Self { lo, hi, points, weights: vec![] };
        grid.weights = grid.interval_weights().into_iter().fold(vec![0.0; n_points], |mut acc, (s, w)| {
            for (j, wj) in w.iter().enumerate() {
                acc[s + j] += wj;
            }
            acc
        });
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.len() - 1) as f64
    }

    /// For each interval, the stencil start and the weights over the stencil.
    fn interval_weights(&self) -> Vec<(usize, [f64; STENCIL])> {
        let table = stencil_weights();
        let n = self.len() - 1;
        let h = self.step();
        (0..n)
            .map(|i| {
                let s = i.saturating_sub(2).min(n + 1 - STENCIL);
                let mut w = table[i - s];
                w.iter_mut().for_each(|v| *v *= h);
                (s, w)
            })
            .collect()
    }

    /// `int_lo^{x_i} f` at every grid point.
    pub fn cumulative(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.len(), "values must be sampled on the grid");
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for (s, w) in self.interval_weights() {
            acc += w.iter().zip(&values[s..s + STENCIL]).map(|(a, b)| a * b).sum::<f64>();
            out.push(acc);
        }
        out
    }

    /// `int_{x_i}^hi f` at every grid point, accumulated from the right.
    pub fn cumulative_from_right(&self, values: &[f64]) -> Vec<f64> {
        let rev: Vec<f64> = values.iter().rev().copied().collect();
        let mut out = self.cumulative(&rev);
        out.reverse();
        out
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Two interior cutoffs splitting `[0, 1]` into low, middle and high segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub c1: f64,
    pub c2: f64,
}

impl Partition {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let p = Self { c1, c2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "cutoffs must satisfy 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Grids over the three segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorGrid {
    pub partition: Partition,
    pub low: SegmentGrid,
    pub mid: SegmentGrid,
    pub high: SegmentGrid,
}

impl OperatorGrid {
    pub const DEFAULT_POINTS: (usize, usize, usize) = (121, 61, 121);

    pub fn new(partition: Partition, n_low: usize, n_mid: usize, n_high: usize) -> Result<Self> {
        partition.validate()?;
        Ok(Self {
            partition,
            low: SegmentGrid::uniform(0.0, partition.c1, n_low)?,
            mid: SegmentGrid::uniform(partition.c1, partition.c2, n_mid)?,
            high: SegmentGrid::uniform(partition.c2, 1.0, n_high)?,
        })
    }

    pub fn with_default_sizes(partition: Partition) -> Result<Self> {
        let (a, b, c) = Self::DEFAULT_POINTS;
        Self::new(partition, a, b, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_for_quintics() {
        let g = SegmentGrid::uniform(0.2, 0.9, 13).unwrap();
        let p = |x: f64| 3.0 * x.powi(5) - x.powi(3) + 0.5 * x - 2.0;
        let antider = |x: f64| 0.5 * x.powi(6) - 0.25 * x.powi(4) + 0.25 * x * x - 2.0 * x;
        let vals: Vec<f64> = g.points.iter().map(|&x| p(x)).collect();
        let cum = g.cumulative(&vals);
        for (x, c) in g.points.iter().zip(&cum) {
            assert_abs_diff_eq!(*c, antider(*x) - antider(0.2), epsilon = 1e-13);
        }
        let right = g.cumulative_from_right(&vals);
        for (x, c) in g.points.iter().zip(&right) {
            assert_abs_diff_eq!(*c, antider(0.9) - antider(*x), epsilon = 1e-13);
        }
        assert_abs_diff_eq!(g.integrate(&vals), antider(0.9) - antider(0.2), epsilon = 1e-13);
    }

    #[test]
    fn weights_are_positive_and_sum_to_length() {
        for n in [6, 7, 20, 121] {
            let g = SegmentGrid::uniform(0.0, 0.4, n).unwrap();
            assert!(g.weights.iter().all(|&w| w > 0.0), "n = {n}");
            assert_abs_diff_eq!(g.weights.iter().sum::<f64>(), 0.4, epsilon = 1e-14);
            assert_eq!(*g.points.last().unwrap(), 0.4);
        }
    }

    #[test]
    fn smooth_functions_converge() {
        let g = SegmentGrid::uniform(0.0, 1.0, 101).unwrap();
        let vals: Vec<f64> = g.points.iter().map(|x| x.exp()).collect();
        assert_abs_diff_eq!(g.integrate(&vals), 1f64.exp() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(SegmentGrid::uniform(0.0, 1.0, 5).is_err());
        assert!(Partition::new(0.5, 0.4).is_err());
        assert!(Partition::new(0.0, 0.4).is_err());
        assert!(Partition::new(0.3, 1.0).is_err());
    }
}

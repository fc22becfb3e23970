use nalgebra::{DMatrix, DVector};

use crate::dist::binomial;
use crate::error::{Error, Result};

/// Upper-triangular `A` with `A[n-1][i-1] = C(N-n, i-n) C(N, n) (-1)^{i-n}`
/// for `1 <= n <= i <= N`, so that `P = A m` links the participation
/// probabilities `P(n | N)` to the moments `E[p^i]`.
pub fn moment_matrix(big_n: u32) -> DMatrix<f64> {
    let size = big_n as usize;
    DMatrix::from_fn(size, size, |row, col| {
        let (n, i) = (row as u32 + 1, col as u32 + 1);
        if i < n {
            return 0.0;
        }
        let sign = if (i - n) % 2 == 0 { 1.0 } else { -1.0 };
        binomial(big_n - n, i - n) * binomial(big_n, n) * sign
    })
}

/// First `N` moments of the participation probability from
/// `P = (P(1 | N), ..., P(N | N))`, by back substitution.
pub fn recover_truncation_moments(p: &[f64], big_n: u32) -> Result<Vec<f64>> {
    if p.len() != big_n as usize || big_n == 0 {
        return Err(Error::Parameter(format!("expected {big_n} probabilities, got {}", p.len())));
    }
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("participation probabilities must be nonnegative".into()));
    }
    let a = moment_matrix(big_n);
    let m = a.solve_upper_triangular(&DVector::from_column_slice(p)).expect("diagonal entries C(N, n) are nonzero");
    Ok(m.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule;
    use approx::assert_abs_diff_eq;

    /// `P(n | N) = E[C(N, n) p^n (1 - p)^{N-n}]` for a point mass or a density
    /// on `[0, 1]`.
    fn participation(big_n: u32, g: &dyn Fn(f64) -> f64, quad: &QuadratureRule) -> Vec<f64> {
        (1..=big_n)
            .map(|n| {
                quad.integrate(|p| g(p) * binomial(big_n, n) * p.powi(n as i32) * (1.0 - p).powi((big_n - n) as i32))
            })
            .collect()
    }

    #[test]
    fn examples() {
        let m = recover_truncation_moments(&[0.5, 0.25], 2).unwrap();
        assert_abs_diff_eq!(m[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 0.25, epsilon = 1e-15);
        assert_eq!(recover_truncation_moments(&[0.3], 1).unwrap(), vec![0.3]);
        assert!(recover_truncation_moments(&[0.3, -0.1], 2).is_err());
    }

    #[test]
    fn point_mass_moments() {
        for big_n in 1..=10u32 {
            let p0: f64 = 0.37;
            let probs: Vec<f64> = (1..=big_n)
                .map(|n| binomial(big_n, n) * p0.powi(n as i32) * (1.0 - p0).powi((big_n - n) as i32))
                .collect();
            let m = recover_truncation_moments(&probs, big_n).unwrap();
            for (i, v) in m.iter().enumerate() {
                assert!((v - p0.powi(i as i32 + 1)).abs() <= 1e-10, "N = {big_n}, i = {i}");
            }
        }
    }

    #[test]
    fn beta_mixing_moments() {
        let quad = QuadratureRule::gauss_legendre(40).unwrap();
        let g = |p: f64| 6.0 * p * (1.0 - p);
        for big_n in 1..=10u32 {
            let m = recover_truncation_moments(&participation(big_n, &g, &quad), big_n).unwrap();
            // E[p^i] for Beta(2, 2) = prod_{j<i} (2 + j) / (4 + j)
            let mut expected = 1.0;
            for (i, v) in m.iter().enumerate() {
                expected *= (2.0 + i as f64) / (4.0 + i as f64);
                assert!((v - expected).abs() <= 1e-10, "N = {big_n}, i = {i}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn matrix_is_upper_triangular_with_nonzero_diagonal() {
        let a = moment_matrix(6);
        for r in 0..6 {
            assert!(a[(r, r)] != 0.0);
            for c in 0..r {
                assert_eq!(a[(r, c)], 0.0);
            }
        }
    }
}

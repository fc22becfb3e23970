use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are truncated.
pub const PINV_RTOL: f64 = 1e-12;

struct Svd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

/// Iteration cap for the SVD and Schur sweeps.
const MAX_SWEEPS: usize = 10_000;

/// Thin SVD with singular values sorted in decreasing order.
fn sorted_svd(m: &DMatrix<f64>) -> Result<Svd> {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::DecompositionQuality("SVD did not converge".into()))?;
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Ok(Svd {
        u: DMatrix::from_fn(u.nrows(), idx.len(), |i, j| u[(i, idx[j])]),
        s: idx.iter().map(|&i| svd.singular_values[i]).collect(),
        v: DMatrix::from_fn(v.nrows(), idx.len(), |i, j| v[(i, idx[j])]),
    })
}

/// Singular values in decreasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let svd = m
        .clone()
        .try_svd(false, false, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::DecompositionQuality("SVD did not converge".into()))?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

fn numerical_rank(s: &[f64]) -> usize {
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > PINV_RTOL * top && v > 0.0).count()
}

/// Moore-Penrose inverse truncated at `PINV_RTOL`, with the condition number
/// over the retained singular values and the retained rank.
pub fn pinv(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, usize)> {
    let svd = sorted_svd(m)?;
    let rank = numerical_rank(&svd.s);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for j in 0..rank {
        out += svd.v.column(j) * svd.u.column(j).transpose() / svd.s[j];
    }
    let cond = if rank == 0 { f64::INFINITY } else { svd.s[0] / svd.s[rank - 1] };
    Ok((out, cond, rank))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    /// Sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`, sign-normalized so
    /// that its entries sum to a positive number. Not serialized.
    #[serde(skip)]
    pub vectors: DMatrix<f64>,
    pub rank: usize,
    /// Condition number of `J_{y2}` over its retained singular values.
    pub cond_j2: f64,
    /// Smallest gap between eigenvalues relative to the largest magnitude.
    pub min_relative_gap: f64,
}

/// Eigen-decomposition of `J_{y1} pinv(J_{y2})` restricted to the column
/// space of `J_{y2}`.
pub fn eig_recover(j1: &DMatrix<f64>, j2: &DMatrix<f64>, gap_tol: f64) -> Result<EigenDecomposition> {
    if j1.shape() != j2.shape() {
        return Err(Error::Parameter(format!("operator shapes differ: {:?} vs {:?}", j1.shape(), j2.shape())));
    }
    let svd = sorted_svd(j2)?;
    let rank = numerical_rank(&svd.s);
    if rank == 0 {
        return Err(Error::Conditioning { what: "J_y2".into(), cond: f64::INFINITY });
    }
    let cond_j2 = svd.s[0] / svd.s[rank - 1];
    let u = svd.u.columns(0, rank).into_owned();
    let v = svd.v.columns(0, rank).into_owned();
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(rank, svd.s[..rank].iter().map(|s| 1.0 / s)));
    let m = u.transpose() * j1 * v * s_inv;

    let schur = m
        .clone()
        .try_schur(f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::DecompositionQuality("Schur iteration did not converge".into()))?;
    let Some(values) = schur.eigenvalues() else {
        // a near-repeated real eigenvalue can split into a complex pair
        let complex = schur.complex_eigenvalues();
        let scale = complex.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let max_im = complex.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
        if scale > 0.0 && max_im <= gap_tol * scale {
            return Err(Error::AmbiguousDecomposition { gap: 2.0 * max_im / scale, tol: gap_tol });
        }
        return Err(Error::DecompositionQuality("reduced operator has complex eigenvalues".into()));
    };
    let mut eigenvalues: Vec<f64> = values.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_relative_gap = eigenvalues.windows(2).map(|w| (w[1] - w[0]) / scale).fold(f64::INFINITY, f64::min);
    if rank > 1 && min_relative_gap < gap_tol {
        return Err(Error::AmbiguousDecomposition { gap: min_relative_gap, tol: gap_tol });
    }

    let mut vectors = DMatrix::zeros(j1.nrows(), rank);
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let shifted = &m - DMatrix::identity(rank, rank) * lambda;
        let null = sorted_svd(&shifted)?.v.column(rank - 1).into_owned();
        let mut vec = &u * null;
        if vec.sum() < 0.0 {
            vec = -vec;
        }
        vectors.set_column(k, &vec);
    }
    Ok(EigenDecomposition { eigenvalues, vectors, rank, cond_j2, min_relative_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{build_operators, LabModel, OperatorGrid, Partition};

    fn ops(y: f64) -> crate::ident::DiscreteOperators {
        let grid = OperatorGrid::new(Partition::new(0.35, 0.6).unwrap(), 41, 11, 41).unwrap();
        build_operators(&LabModel::demo(), &grid, y, 4, 5).unwrap()
    }

    #[test]
    fn pinv_of_full_rank_square_is_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let (p, cond, rank) = pinv(&m).unwrap();
        assert_eq!(rank, 3);
        assert!(cond > 1.0);
        assert!((&m * p - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn eigenvalues_are_density_ratios() {
        let model = LabModel::demo();
        let (o1, o2) = (ops(0.4), ops(0.55));
        let dec = eig_recover(&o1.j_y, &o2.j_y, 1e-6).unwrap();
        assert_eq!(dec.rank, 4);
        let mut truth: Vec<f64> = (0..4).map(|k| model.pdf(k, 0.4) / model.pdf(k, 0.55)).collect();
        truth.sort_by(f64::total_cmp);
        for (a, b) in dec.eigenvalues.iter().zip(&truth) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        // each eigenvector is proportional to one column of L
        for k in 0..4 {
            let v = dec.vectors.column(k);
            let best = (0..4)
                .map(|c| {
                    let col = o1.l_mat.column(c);
                    let ratio = v.dot(&col) / col.dot(&col);
                    (v - col * ratio).amax() / v.amax()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "vector {k}: {best}");
        }
    }

    #[test]
    fn swapping_points_inverts_eigenvalues() {
        let (o1, o2) = (ops(0.4), ops(0.55));
        let a = eig_recover(&o1.j_y, &o2.j_y, 1e-6).unwrap();
        let b = eig_recover(&o2.j_y, &o1.j_y, 1e-6).unwrap();
        let mut inv: Vec<f64> = a.eigenvalues.iter().map(|v| 1.0 / v).collect();
        inv.sort_by(f64::total_cmp);
        for (x, y) in inv.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() < 1e-8 * x.abs());
        }
    }

    #[test]
    fn equal_ratios_are_ambiguous() {
        // both components are symmetric, so f(0.4) / f(0.6) = 1 for each
        let model = LabModel::new(
            vec![0.25, 0.75],
            vec![0.5, 0.5],
            vec![crate::dist::BetaParams::new(1.0, 1.0).unwrap(), crate::dist::BetaParams::new(2.0, 2.0).unwrap()],
        )
        .unwrap();
        let grid = OperatorGrid::new(Partition::new(0.35, 0.65).unwrap(), 41, 11, 41).unwrap();
        let o1 = build_operators(&model, &grid, 0.4, 4, 5).unwrap();
        let o2 = build_operators(&model, &grid, 0.6, 4, 5).unwrap();
        let res = eig_recover(&o1.j_y, &o2.j_y, 1e-6);
        assert!(matches!(res, Err(Error::AmbiguousDecomposition { .. })), "{res:?}");
    }

    #[test]
    fn single_point_eigenpair() {
        let model = LabModel::new(vec![0.5], vec![1.0], vec![crate::dist::BetaParams::new(2.0, 3.0).unwrap()]).unwrap();
        let grid = OperatorGrid::new(Partition::new(0.35, 0.6).unwrap(), 41, 11, 41).unwrap();
        let o1 = build_operators(&model, &grid, 0.4, 4, 5).unwrap();
        let o2 = build_operators(&model, &grid, 0.55, 4, 5).unwrap();
        let dec = eig_recover(&o1.j_y, &o2.j_y, 1e-6).unwrap();
        assert!((dec.eigenvalues[0] - model.pdf(0, 0.4) / model.pdf(0, 0.55)).abs() < 1e-10);
    }
}

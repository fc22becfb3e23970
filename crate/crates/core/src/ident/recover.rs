use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eigen::{eig_recover, pinv};
use super::grid::{OperatorGrid, Partition, SegmentGrid};
use super::operators::Observables;
use super::LabModel;
use crate::dist::factorial;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    /// Minimum relative eigenvalue gap.
    pub gap_tol: f64,
    /// Largest acceptable condition number of an inverted matrix.
    pub cond_limit: f64,
    /// Largest relative mismatch between eigenvalues of the low- and
    /// high-segment decompositions.
    pub match_tol: f64,
    /// Largest tolerated negative entry of a normalized eigenvector.
    pub negativity_tol: f64,
    /// Conditional means closer than this cannot be ordered.
    pub tie_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, cond_limit: 1e10, match_tol: 1e-6, negativity_tol: 1e-8, tie_tol: 1e-10 }
    }
}

/// Parent distribution on one segment, up to a positive scale. For the low
/// segment `level` is the CDF; for the high segment it is the survival
/// function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub level: Vec<f64>,
    pub pdf: Vec<f64>,
}

/// Flips the sign so the mass is positive, rejects materially negative
/// entries, clamps round-off negatives and scales to unit integral.
fn normalize_eigvec(values: &[f64], grid: &SegmentGrid, tol: f64) -> Result<Vec<f64>> {
    let total = grid.integrate(values);
    let sign = if total < 0.0 { -1.0 } else { 1.0 };
    let v: Vec<f64> = values.iter().map(|x| sign * x).collect();
    let peak = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::DecompositionQuality("eigenvector vanishes on the segment".into()));
    }
    let worst = v.iter().fold(0.0f64, |a, &x| a.min(x));
    if worst < -tol * peak {
        return Err(Error::DecompositionQuality(format!(
            "eigenvector has negative mass {worst:.3e} (peak {peak:.3e})"
        )));
    }
    let v: Vec<f64> = v.into_iter().map(|x| x.max(0.0)).collect();
    let mass = grid.integrate(&v);
    Ok(v.into_iter().map(|x| x / mass).collect())
}

/// Replaces `values[at]` (an end of the grid) by quartic extrapolation from
/// the five nearest interior points.
fn extrapolate_end(values: &mut [f64], at: usize) {
    const W: [f64; 5] = [5.0, -10.0, 10.0, -5.0, 1.0];
    let n = values.len();
    values[at] = if at == 0 {
        (0..5).map(|i| W[i] * values[1 + i]).sum()
    } else {
        (0..5).map(|i| W[i] * values[n - 2 - i]).sum()
    };
}

/// Maps integrated order-statistic mass `integral` to `integral^p` and its
/// derivative `p integral^{p-1} e`.
fn power_map(integral: &[f64], e: &[f64], p: f64) -> SegmentEstimate {
    let level: Vec<f64> = integral.iter().map(|&i| i.max(0.0).powf(p)).collect();
    let mut pdf: Vec<f64> = integral
        .iter()
        .zip(e)
        .map(|(&i, &v)| {
            if p == 1.0 {
                v
            } else if i > 0.0 {
                p * i.powf(p - 1.0) * v
            } else {
                f64::NAN
            }
        })
        .collect();
    let n = pdf.len();
    for end in [0, n - 1] {
        if pdf[end].is_nan() {
            extrapolate_end(&mut pdf, end);
        }
    }
    SegmentEstimate { level, pdf }
}

/// Parent CDF and density on the low segment from a sampled
/// `f_{r-2:r-2}(. | tau)` (any positive scale): `F = [int_0^x f_{r-2:r-2}]^{1/(r-2)}`.
pub fn recover_parent_low(eigvec: &[f64], grid: &SegmentGrid, r: u32, tol: f64) -> Result<SegmentEstimate> {
    if r < 3 {
        return Err(Error::Index(format!("need r >= 3, got {r}")));
    }
    let e = normalize_eigvec(eigvec, grid, tol)?;
    let integral = grid.cumulative(&e);
    Ok(power_map(&integral, &e, 1.0 / (r - 2) as f64))
}

/// Parent survival function and density on the high segment from a sampled
/// `f_{1:n-r+1}(. | tau)`: `1 - F = [int_x^1 f_{1:n-r+1}]^{1/(n-r+1)}`.
pub fn recover_parent_high(eigvec: &[f64], grid: &SegmentGrid, n: u32, r: u32, tol: f64) -> Result<SegmentEstimate> {
    if r > n {
        return Err(Error::Index(format!("need r <= n, got r = {r}, n = {n}")));
    }
    let e = normalize_eigvec(eigvec, grid, tol)?;
    let integral = grid.cumulative_from_right(&e);
    Ok(power_map(&integral, &e, 1.0 / (n - r + 1) as f64))
}

/// `f(y | tau_k) f^T(tau_k)` (up to a per-`k` scale) at each middle grid
/// point, as the diagonal of `pinv(L) J_y pinv(H)`. Returns the `K x |mid|`
/// values, the largest off-diagonal to diagonal ratio and the condition
/// numbers of `L` and `H`.
pub fn recover_middle(
    l_mat: &DMatrix<f64>,
    h_mat: &DMatrix<f64>,
    j_mid: &[DMatrix<f64>],
    cond_limit: f64,
) -> Result<(DMatrix<f64>, f64, f64, f64)> {
    let (l_inv, cond_l, _) = pinv(l_mat)?;
    if cond_l > cond_limit {
        return Err(Error::Conditioning { what: "L (low-segment eigenvectors)".into(), cond: cond_l });
    }
    let (h_inv, cond_h, _) = pinv(h_mat)?;
    if cond_h > cond_limit {
        return Err(Error::Conditioning { what: "H (high-segment eigenvectors)".into(), cond: cond_h });
    }
    let k = l_mat.ncols();
    let mut out = DMatrix::zeros(k, j_mid.len());
    let mut off_ratio = 0.0f64;
    for (col, j) in j_mid.iter().enumerate() {
        let d = &l_inv * j * &h_inv;
        let diag_max = d.diagonal().amax();
        for a in 0..k {
            out[(a, col)] = d[(a, a)];
            for b in 0..k {
                if a != b && diag_max > 0.0 {
                    off_ratio = off_ratio.max(d[(a, b)].abs() / diag_max);
                }
            }
        }
    }
    Ok((out, off_ratio, cond_l, cond_h))
}

/// Scales `(s_l, s_m, s_h)` making the density continuous at both cutoffs and
/// the conditional integrate to one. `mid_pdf` is sampled on the middle grid.
pub fn pin_scales(
    low: &SegmentEstimate,
    mid_pdf: &[f64],
    high: &SegmentEstimate,
    grid: &OperatorGrid,
) -> Result<[f64; 3]> {
    let fl_c1 = *low.pdf.last().expect("nonempty grid");
    let fm_c1 = mid_pdf[0];
    let fm_c2 = *mid_pdf.last().expect("nonempty grid");
    let fh_c2 = high.pdf[0];
    let advice = |what: &str| {
        Error::CutoffPlacement(format!(
            "{what}; move the cutoffs (c1 = {}, c2 = {}) to where every conditional density is positive",
            grid.partition.c1, grid.partition.c2
        ))
    };
    if [fl_c1, fm_c1, fm_c2, fh_c2].iter().any(|v| !(*v > 0.0)) {
        return Err(advice("a segment density vanishes at a cutoff"));
    }
    let a = Matrix3::new(
        fl_c1,
        -fm_c1,
        0.0,
        0.0,
        fm_c2,
        -fh_c2,
        *low.level.last().expect("nonempty grid"),
        grid.mid.integrate(mid_pdf),
        high.level[0],
    );
    let s = a.lu().solve(&Vector3::new(0.0, 0.0, 1.0)).ok_or_else(|| advice("the scale-pinning system is singular"))?;
    if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(advice("the scale-pinning system has no positive solution"));
    }
    Ok([s[0], s[1], s[2]])
}

/// One recovered conditional distribution on the full grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedConditional {
    /// Low, middle and high grid points concatenated (cutoffs appear twice).
    pub points: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub scales: [f64; 3],
    /// Eigenvalue `f(y1 | tau) / f(y2 | tau)` this conditional came from.
    pub eigenvalue: f64,
}

fn assemble(
    low: &SegmentEstimate,
    mid_pdf: &[f64],
    high: &SegmentEstimate,
    grid: &OperatorGrid,
    scales: [f64; 3],
    eigenvalue: f64,
) -> PinnedConditional {
    let [sl, sm, sh] = scales;
    let mut points = Vec::new();
    let mut pdf = Vec::new();
    let mut cdf = Vec::new();
    points.extend(&grid.low.points);
    pdf.extend(low.pdf.iter().map(|v| sl * v));
    cdf.extend(low.level.iter().map(|v| sl * v));

    let f_c1 = *cdf.last().expect("nonempty grid");
    let mid_scaled: Vec<f64> = mid_pdf.iter().map(|v| sm * v).collect();
    points.extend(&grid.mid.points);
    cdf.extend(grid.mid.cumulative(&mid_scaled).iter().map(|v| f_c1 + v));
    pdf.extend(&mid_scaled);

    points.extend(&grid.high.points);
    pdf.extend(high.pdf.iter().map(|v| sh * v));
    cdf.extend(high.level.iter().map(|v| 1.0 - sh * v));

    let (nl, nm) = (grid.low.len(), grid.mid.len());
    let moment =
        |g: &SegmentGrid, f: &[f64]| g.integrate(&g.points.iter().zip(f).map(|(x, v)| x * v).collect::<Vec<_>>());
    let mean =
        moment(&grid.low, &pdf[..nl]) + moment(&grid.mid, &pdf[nl..nl + nm]) + moment(&grid.high, &pdf[nl + nm..]);
    PinnedConditional { points, pdf, cdf, mean, scales, eigenvalue }
}

/// Sorts conditionals by their mean. Returns the permutation (`perm[i]` is
/// the input index of the `i`-th smallest mean) and the sorted family.
pub fn order_and_locate(conds: Vec<PinnedConditional>, tie_tol: f64) -> Result<(Vec<usize>, Vec<PinnedConditional>)> {
    let mut perm: Vec<usize> = (0..conds.len()).collect();
    perm.sort_by(|&a, &b| conds[a].mean.total_cmp(&conds[b].mean));
    for w in perm.windows(2) {
        let (m0, m1) = (conds[w[0]].mean, conds[w[1]].mean);
        if (m1 - m0).abs() <= tie_tol {
            return Err(Error::OrderingAmbiguity(m0, m1));
        }
    }
    let mut slots: Vec<Option<PinnedConditional>> = conds.into_iter().map(Some).collect();
    let sorted = perm.iter().map(|&i| slots[i].take().expect("permutation")).collect();
    Ok((perm, sorted))
}

/// UH masses from the observable joint density of `(X_{r-1:n}, X_{r:n})`
/// and the pinned conditionals. Returns the masses (summing to one) and the
/// condition numbers of the two inverted factors.
pub fn recover_marginal(
    pair: &DMatrix<f64>,
    conds: &[PinnedConditional],
    grid: &OperatorGrid,
    r: u32,
    n: u32,
    opts: &PipelineOptions,
) -> Result<(Vec<f64>, f64, f64)> {
    let k = conds.len();
    let (nl, nm, nh) = (grid.low.len(), grid.mid.len(), grid.high.len());
    let row_weights: Vec<f64> = grid.low.weights.iter().chain(&grid.mid.weights).copied().collect();
    let mut l = DMatrix::zeros(nl + nm, k);
    let mut h = DMatrix::zeros(k, nh);
    for (c, cond) in conds.iter().enumerate() {
        for a in 0..nl + nm {
            l[(a, c)] = (r - 1) as f64 * cond.cdf[a].powi(r as i32 - 2) * cond.pdf[a] * row_weights[a];
        }
        for b in 0..nh {
            let idx = nl + nm + b;
            h[(c, b)] = (n - r + 1) as f64
                * (1.0 - cond.cdf[idx]).max(0.0).powi((n - r) as i32)
                * cond.pdf[idx]
                * grid.high.weights[b];
        }
    }
    let (l_inv, cond_l, _) = pinv(&l)?;
    if cond_l > opts.cond_limit {
        return Err(Error::Conditioning { what: "L_{r-1} (pinned conditionals)".into(), cond: cond_l });
    }
    let (h_inv, cond_h, _) = pinv(&h)?;
    if cond_h > opts.cond_limit {
        return Err(Error::Conditioning { what: "H (pinned conditionals)".into(), cond: cond_h });
    }
    let coef = factorial(n) / (factorial(r - 1) * factorial(n - r + 1));
    let d = l_inv * pair * h_inv;
    let raw: Vec<f64> = (0..k).map(|i| d[(i, i)] / coef).collect();
    let total: f64 = raw.iter().sum();
    let masses: Vec<f64> = raw.iter().map(|v| v / total).collect();
    if masses.iter().any(|&m| m < -opts.negativity_tol) {
        return Err(Error::DecompositionQuality(format!("recovered negative UH mass: {masses:?}")));
    }
    Ok((masses.into_iter().map(|m| m.max(0.0)).collect(), cond_l, cond_h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub k: usize,
    /// `f(y1 | tau) / f(y2 | tau)` in the final (mean-sorted) order.
    pub eigenvalues: Vec<f64>,
    /// Conditionals sorted by mean.
    pub conditionals: Vec<PinnedConditional>,
    pub masses: Vec<f64>,
    /// Largest relative eigenvalue mismatch between the two decompositions.
    pub eigenvalue_match: f64,
    /// Largest off-diagonal to diagonal ratio in the middle-segment step.
    pub offdiag_ratio: f64,
    /// Condition number of every inverted matrix.
    pub condition_numbers: Vec<(String, f64)>,
}

/// Full recovery from observables alone: eigen-decomposition, parent densities
/// on the outer segments, the middle segment, scale pinning, ordering and masses.
pub fn run_pipeline(obs: &Observables, opts: &PipelineOptions) -> Result<Recovery> {
    let grid = &obs.grid;
    let low_dec = eig_recover(&obs.j_y1, &obs.j_y2, opts.gap_tol)?;
    let high_dec = eig_recover(&obs.j_y1.transpose(), &obs.j_y2.transpose(), opts.gap_tol)?;
    if low_dec.rank != high_dec.rank {
        return Err(Error::DecompositionQuality(format!(
            "low and high decompositions disagree on the number of UH points ({} vs {})",
            low_dec.rank, high_dec.rank
        )));
    }
    let k = low_dec.rank;
    let scale = low_dec.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // both lists are sorted, so proximity matching pairs them in order
    let eigenvalue_match =
        low_dec.eigenvalues.iter().zip(&high_dec.eigenvalues).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max);
    if eigenvalue_match > opts.match_tol {
        return Err(Error::AmbiguousDecomposition { gap: eigenvalue_match, tol: opts.match_tol });
    }

    let unweight = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a / b).collect::<Vec<_>>();
    let lows = (0..k)
        .map(|c| {
            let col: Vec<f64> = low_dec.vectors.column(c).iter().copied().collect();
            recover_parent_low(&unweight(&col, &grid.low.weights), &grid.low, obs.r, opts.negativity_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let highs = (0..k)
        .map(|c| {
            let col: Vec<f64> = high_dec.vectors.column(c).iter().copied().collect();
            recover_parent_high(&unweight(&col, &grid.high.weights), &grid.high, obs.n, obs.r, opts.negativity_tol)
        })
        .collect::<Result<Vec<_>>>()?;

    let h_mat = high_dec.vectors.transpose();
    let (mid, offdiag_ratio, cond_l, cond_h) = recover_middle(&low_dec.vectors, &h_mat, &obs.j_mid, opts.cond_limit)?;

    let conds = (0..k)
        .map(|c| {
            let mid_pdf: Vec<f64> = mid.row(c).iter().copied().collect();
            let scales = pin_scales(&lows[c], &mid_pdf, &highs[c], grid)?;
            Ok(assemble(&lows[c], &mid_pdf, &highs[c], grid, scales, low_dec.eigenvalues[c]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, conditionals) = order_and_locate(conds, opts.tie_tol)?;
    let (masses, cond_l1, cond_h1) = recover_marginal(&obs.pair, &conditionals, grid, obs.r, obs.n, opts)?;

    Ok(Recovery {
        k,
        eigenvalues: conditionals.iter().map(|c| c.eigenvalue).collect(),
        conditionals,
        masses,
        eigenvalue_match,
        offdiag_ratio,
        condition_numbers: vec![
            ("J_y2".into(), low_dec.cond_j2),
            ("J_y2^T".into(), high_dec.cond_j2),
            ("L (low eigenvectors)".into(), cond_l),
            ("H (high eigenvectors)".into(), cond_h),
            ("L_{r-1} (pinned)".into(), cond_l1),
            ("H (pinned)".into(), cond_h1),
        ],
    })
}

/// Recovery errors against the model that generated the observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// Sup-norm CDF error for each conditional, in mean order.
    pub cdf_errors: Vec<f64>,
    pub max_cdf_error: f64,
    pub mass_errors: Vec<f64>,
    pub max_mass_error: f64,
    /// Largest error of a recovered eigenvalue against the true density ratio.
    pub max_eigenvalue_error: f64,
}

pub fn score_recovery(model: &LabModel, obs: &Observables, rec: &Recovery) -> Result<RecoveryScore> {
    if rec.k != model.len() {
        return Err(Error::DecompositionQuality(format!("recovered {} UH points, model has {}", rec.k, model.len())));
    }
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| model.components[a].mean().total_cmp(&model.components[b].mean()));
    let cdf_errors: Vec<f64> = order
        .iter()
        .zip(&rec.conditionals)
        .map(|(&k, c)| c.points.iter().zip(&c.cdf).map(|(&x, v)| (model.cdf(k, x) - v).abs()).fold(0.0, f64::max))
        .collect();
    let mass_errors: Vec<f64> = order.iter().zip(&rec.masses).map(|(&k, m)| (model.masses[k] - m).abs()).collect();
    let max_eigenvalue_error = order
        .iter()
        .zip(&rec.eigenvalues)
        .map(|(&k, e)| (model.pdf(k, obs.y1) / model.pdf(k, obs.y2) - e).abs())
        .fold(0.0, f64::max);
    Ok(RecoveryScore {
        max_cdf_error: cdf_errors.iter().copied().fold(0.0, f64::max),
        max_mass_error: mass_errors.iter().copied().fold(0.0, f64::max),
        cdf_errors,
        mass_errors,
        max_eigenvalue_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub partition: Partition,
    pub score: Option<RecoveryScore>,
    pub error: Option<String>,
}

/// Runs the pipeline for each partition, with `y1`, `y2` at 1/3 and 2/3 of
/// the middle segment.
pub fn sweep_partitions(
    model: &LabModel,
    partitions: &[Partition],
    sizes: (usize, usize, usize),
    r: u32,
    n: u32,
    opts: &PipelineOptions,
) -> Vec<SweepEntry> {
    partitions
        .par_iter()
        .map(|&p| {
            let run = || -> Result<RecoveryScore> {
                let grid = OperatorGrid::new(p, sizes.0, sizes.1, sizes.2)?;
                let span = p.c2 - p.c1;
                let obs = Observables::from_model(model, &grid, r, n, p.c1 + span / 3.0, p.c1 + 2.0 * span / 3.0)?;
                let rec = run_pipeline(&obs, opts)?;
                score_recovery(model, &obs, &rec)
            };
            match run() {
                Ok(score) => SweepEntry { partition: p, score: Some(score), error: None },
                Err(e) => SweepEntry { partition: p, score: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

//! Psi-learning for one homogeneous sample set.
//!
//! 1. Correlation screening: Fisher-test every empirical correlation, keep
//!    the significant partners of each variable and cut each neighborhood
//!    down to the `ceil(n / ln n)` partners of largest absolute correlation.
//! 2. For every pair `(i, j)`, pick the smaller of `S_i \ {j}` and
//!    `S_j \ {i}` as conditioning set and compute the partial correlation
//!    given it (the psi coefficient).
//! 3. Psi-screening: Fisher-transform each psi and run the adaptive FDR test
//!    over all `p(p-1)/2` pairs.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance_to_correlation, sample_covariance};
use crate::multiple_testing::{adaptive_fdr_test, TestOutcome};
use crate::psi_integration::{fisher_z, psi_scores, select_edges, EdgeSelection, PSI_CLAMP};
use crate::types::{AdjacencyMatrix, DataMatrix, NeighborhoodMap, PsiMatrix, ZScoreMatrix};

/// Pivots of the unit-diagonal conditioning block below this are treated as
/// a singular system (condition estimate above 1e12).
const MIN_PIVOT: f64 = 1e-12;

/// Significance levels, as FDR levels, for the two screening stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSettings {
    /// Correlation screening.
    pub alpha1: f64,
    /// Psi screening.
    pub alpha2: f64,
}

impl Default for PsiSettings {
    fn default() -> Self {
        Self { alpha1: 0.2, alpha2: 0.05 }
    }
}

/// Pearson correlations with unit diagonal.
pub fn empirical_correlations(x: &DataMatrix) -> Result<DMatrix<f64>> {
    if x.n() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: x.n() });
    }
    Ok(covariance_to_correlation(&x.covariance()))
}

/// Neighborhood size cap `ceil(n / ln n)`.
pub fn neighborhood_cap(n: usize) -> usize {
    if n < 2 {
        return 0;
    }
    let n = n as f64;
    (n / n.ln()).ceil() as usize
}

/// Outcome of the correlation screening step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationScreen {
    /// Reduced correlation network.
    pub neighbors: NeighborhoodMap,
    /// Empirical correlation network before the size cap.
    pub network: AdjacencyMatrix,
    /// Pairs with `|r| = 1`; their score is treated as infinite.
    pub degenerate_pairs: Vec<(usize, usize)>,
    pub test: TestOutcome,
}

pub fn correlation_screen(corr: &DMatrix<f64>, n: usize, alpha1: f64) -> Result<CorrelationScreen> {
    let p = corr.nrows();
    if corr.ncols() != p {
        return Err(Error::DimensionMismatch("correlation matrix is not square".into()));
    }
    if p < 2 {
        return Err(Error::TooFewVariables(p));
    }
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }

    let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
    let mut pvalues = Vec::with_capacity(p * (p - 1) / 2);
    let mut degenerate_pairs = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let r = corr[(i, j)];
            pairs.push((i, j));
            if r.abs() >= PSI_CLAMP {
                degenerate_pairs.push((i, j));
                pvalues.push(0.0);
            } else {
                let z = fisher_z(r, n, 0)?;
                pvalues.push(crate::multiple_testing::two_sided_pvalue(z));
            }
        }
    }
    if !degenerate_pairs.is_empty() {
        log::warn!("{} variable pairs are perfectly correlated", degenerate_pairs.len());
    }
    let test = adaptive_fdr_test(&pvalues, alpha1)?;
    let network = AdjacencyMatrix::from_edges(
        p,
        pairs.iter().zip(&test.rejected).filter(|(_, &r)| r).map(|(&pr, _)| pr),
    )?;

    let cap = neighborhood_cap(n);
    let neighbors = (0..p)
        .map(|i| {
            let mut s = network.neighbors(i);
            s.sort_by(|&a, &b| corr[(i, b)].abs().total_cmp(&corr[(i, a)].abs()).then(a.cmp(&b)));
            s.truncate(cap);
            s
        })
        .collect();

    Ok(CorrelationScreen { neighbors: NeighborhoodMap::new(neighbors)?, network, degenerate_pairs, test })
}

/// `S_i \ {j}` if it is no larger than `S_j \ {i}`, otherwise `S_j \ {i}`.
pub fn conditioning_set(s: &NeighborhoodMap, i: usize, j: usize) -> Vec<usize> {
    let from_i: Vec<usize> = s.get(i).iter().copied().filter(|&k| k != j).collect();
    let from_j: Vec<usize> = s.get(j).iter().copied().filter(|&k| k != i).collect();
    if from_i.len() <= from_j.len() {
        from_i
    } else {
        from_j
    }
}

/// Partial correlation of columns `i` and `j` given the columns in `s`,
/// computed from the sample covariance of those columns.
pub fn partial_correlation(x: &DataMatrix, i: usize, j: usize, s: &[usize]) -> Result<f64> {
    let p = x.p();
    if i == j || i >= p || j >= p || s.iter().any(|&k| k >= p || k == i || k == j) {
        return Err(Error::InvalidArgument(format!(
            "bad index set for pair ({}, {})",
            i + 1,
            j + 1
        )));
    }
    if s.len() + 2 > x.n().saturating_sub(1) {
        return Err(Error::TooFewSamples { needed: s.len() + 3, got: x.n() });
    }
    let mut cols = vec![i, j];
    cols.extend_from_slice(s);
    let cov = sample_covariance(&x.values().select_columns(&cols));
    let rest: Vec<usize> = (2..cols.len()).collect();
    partial_correlation_from_cov(&cov, 0, 1, &rest).map_err(|e| match e {
        Error::SingularSubmatrix { condition, .. } => Error::SingularSubmatrix { i: i + 1, j: j + 1, condition },
        other => other,
    })
}

/// Partial correlation from a covariance matrix, via the Schur complement of
/// the conditioning block. Entries of the block are scaled to unit diagonal
/// first, so the pivots double as a condition estimate.
pub fn partial_correlation_from_cov(cov: &DMatrix<f64>, i: usize, j: usize, s: &[usize]) -> Result<f64> {
    let p = cov.nrows();
    if cov.ncols() != p || i == j || i >= p || j >= p || s.iter().any(|&k| k >= p || k == i || k == j) {
        return Err(Error::InvalidArgument(format!("bad index set for pair ({}, {})", i + 1, j + 1)));
    }
    let sd = |a: usize| cov[(a, a)].sqrt();
    let r = |a: usize, b: usize| cov[(a, b)] / (sd(a) * sd(b));
    let singular = |pivot: f64| Error::SingularSubmatrix {
        i: i + 1,
        j: j + 1,
        condition: if pivot > 0.0 { 1.0 / pivot } else { f64::INFINITY },
    };
    if !(cov[(i, i)] > 0.0 && cov[(j, j)] > 0.0) {
        return Err(singular(0.0));
    }

    let k = s.len();
    let (mut var_i, mut var_j, mut cov_ij) = (1.0, 1.0, r(i, j));
    if k > 0 {
        // Cholesky of the scaled conditioning block, in place
        let mut l = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let mut v = r(s[a], s[b]);
                for c in 0..b {
                    v -= l[(a, c)] * l[(b, c)];
                }
                if a == b {
                    if !(v > MIN_PIVOT) {
                        return Err(singular(v));
                    }
                    l[(a, a)] = v.sqrt();
                } else {
                    l[(a, b)] = v / l[(b, b)];
                }
            }
        }
        // forward solves L u = R_{S,i}, L w = R_{S,j}
        let mut u = vec![0.0; k];
        let mut w = vec![0.0; k];
        for a in 0..k {
            let mut ua = r(s[a], i);
            let mut wa = r(s[a], j);
            for c in 0..a {
                ua -= l[(a, c)] * u[c];
                wa -= l[(a, c)] * w[c];
            }
            u[a] = ua / l[(a, a)];
            w[a] = wa / l[(a, a)];
        }
        var_i -= u.iter().map(|v| v * v).sum::<f64>();
        var_j -= w.iter().map(|v| v * v).sum::<f64>();
        cov_ij -= u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    }
    if !(var_i > MIN_PIVOT) {
        return Err(singular(var_i));
    }
    let last_pivot = var_j - cov_ij * cov_ij / var_i;
    if !(last_pivot > MIN_PIVOT) {
        return Err(singular(last_pivot));
    }
    Ok((cov_ij / (var_i * var_j).sqrt()).clamp(-1.0, 1.0))
}

/// Everything produced by one psi-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiFit {
    pub psi: PsiMatrix,
    pub scores: ZScoreMatrix,
    pub adjacency: AdjacencyMatrix,
    pub screen: CorrelationScreen,
    pub selection: EdgeSelection,
}

/// [`conditioning_set`] with size ties between different sets settled by
/// the larger total `|r_ik| + |r_jk|`, so the choice does not depend on
/// variable order.
fn balanced_conditioning_set(cov: &DMatrix<f64>, s: &NeighborhoodMap, i: usize, j: usize) -> Vec<usize> {
    let from_i: Vec<usize> = s.get(i).iter().copied().filter(|&k| k != j).collect();
    let from_j: Vec<usize> = s.get(j).iter().copied().filter(|&k| k != i).collect();
    if from_i.len() != from_j.len() {
        return conditioning_set(s, i, j);
    }
    let mut a = from_i.clone();
    let mut b = from_j.clone();
    a.sort_unstable();
    b.sort_unstable();
    if a == b {
        return from_i;
    }
    let r = |x: usize, y: usize| (cov[(x, y)] / (cov[(x, x)] * cov[(y, y)]).sqrt()).abs();
    let strength = |set: &[usize]| set.iter().map(|&k| r(i, k) + r(j, k)).sum::<f64>();
    if strength(&from_j) > strength(&from_i) {
        from_j
    } else {
        from_i
    }
}

/// Psi coefficients for all pairs given a screening result.
pub(crate) fn psi_matrix(cov: &DMatrix<f64>, screen: &CorrelationScreen, n: usize) -> Result<PsiMatrix> {
    let p = cov.nrows();
    // keeps n - |S| - 3 positive for tiny samples
    let max_cond = n.saturating_sub(4);
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let values: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut s = balanced_conditioning_set(cov, &screen.neighbors, i, j);
            s.truncate(max_cond);
            partial_correlation_from_cov(cov, i, j, &s).map(|v| (v, s.len()))
        })
        .collect::<Result<_>>()?;

    let mut psi = DMatrix::identity(p, p);
    let mut cond_sizes = DMatrix::zeros(p, p);
    for (&(i, j), &(v, k)) in pairs.iter().zip(&values) {
        psi[(i, j)] = v;
        psi[(j, i)] = v;
        cond_sizes[(i, j)] = k;
        cond_sizes[(j, i)] = k;
    }
    Ok(PsiMatrix { psi, cond_sizes, n })
}

/// Runs screening, psi computation and psi-screening on `x`.
pub fn psi_learn(x: &DataMatrix, settings: &PsiSettings) -> Result<PsiFit> {
    for a in [settings.alpha1, settings.alpha2] {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidArgument(format!("significance level {a} outside (0, 1)")));
        }
    }
    let n = x.n();
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let cov = x.covariance();
    let corr = covariance_to_correlation(&cov);
    let screen = correlation_screen(&corr, n, settings.alpha1)?;
    let psi = psi_matrix(&cov, &screen, n)?;
    let scores = psi_scores(&psi);
    let selection = select_edges(&scores, settings.alpha2)?;
    Ok(PsiFit { adjacency: selection.adjacency.clone(), psi, scores, screen, selection })
}

//! Turning psi-partial correlations into scores and merging them across
//! clusters and iterations.
//!
//! Per-cluster scores use Fisher's transformation with the cluster size and
//! the pair's conditioning-set size; clusters are merged with Stouffer's
//! weighted rule using weights `n_k / n`; the post-burn-in scores of an IC
//! chain are averaged elementwise before the final edge test.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiple_testing::{adaptive_fdr_test, z_to_pvalues, TestOutcome};
use crate::types::{AdjacencyMatrix, PsiMatrix, ZScoreMatrix};

/// Largest magnitude a correlation may take before the log in the Fisher
/// transform.
pub const PSI_CLAMP: f64 = 1.0 - 1e-12;

/// `sqrt(n_k - |S| - 3) / 2 * ln((1 + psi) / (1 - psi))`.
pub fn fisher_z(psi: f64, n_k: usize, s_size: usize) -> Result<f64> {
    let dof = n_k as i64 - s_size as i64 - 3;
    if dof <= 0 {
        return Err(Error::InvalidEffectiveSize(dof));
    }
    // evaluated on |psi| so the transform is exactly odd
    let r = psi.abs().min(PSI_CLAMP);
    let magnitude = (dof as f64).sqrt() / 2.0 * ((1.0 + r) / (1.0 - r)).ln();
    Ok(magnitude.copysign(psi))
}

/// `sum_k w_k z_k / sqrt(sum_k w_k^2)`.
pub fn stouffer_combine(z: &[f64], weights: &[f64]) -> Result<f64> {
    if z.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} scores, {} weights", z.len(), weights.len())));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let num: f64 = z.iter().zip(weights).map(|(z, w)| w * z).sum();
    Ok(num / norm)
}

/// Fisher scores of a single psi matrix. Pairs whose effective size is not
/// positive score zero.
pub fn psi_scores(psi: &PsiMatrix) -> ZScoreMatrix {
    ZScoreMatrix::from_upper(psi.p(), |i, j| {
        fisher_z(psi.psi[(i, j)], psi.n, psi.cond_sizes[(i, j)]).unwrap_or_else(|e| {
            debug!("pair ({}, {}) undefined in a cluster of size {}: {}", i + 1, j + 1, psi.n, e);
            0.0
        })
    })
}

/// Combines per-cluster psi matrices into one score matrix with weights
/// `n_k / total_n`.
pub fn integrate_clusters(psi: &[PsiMatrix], total_n: usize) -> Result<ZScoreMatrix> {
    let first = psi.first().ok_or(Error::EmptyInput)?;
    let p = first.p();
    if psi.iter().any(|m| m.p() != p) {
        return Err(Error::DimensionMismatch("psi matrices differ in size".into()));
    }
    if total_n == 0 {
        return Err(Error::InvalidArgument("total sample size is zero".into()));
    }
    let weights: Vec<f64> = psi.iter().map(|m| m.n as f64 / total_n as f64).collect();
    let scores: Vec<ZScoreMatrix> = psi.iter().map(psi_scores).collect();

    let mut buf = vec![0.0; psi.len()];
    let mut failure = None;
    let out = ZScoreMatrix::from_upper(p, |i, j| {
        for (b, s) in buf.iter_mut().zip(&scores) {
            *b = s.get(i, j);
        }
        match stouffer_combine(&buf, &weights) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Elementwise mean of `traces[burn_in..]`.
///
/// Uses a running mean, so a constant trace reproduces its value bit for bit.
pub fn average_zscores(traces: &[ZScoreMatrix], burn_in: usize) -> Result<ZScoreMatrix> {
    if traces.len() <= burn_in {
        return Err(Error::EmptyWindow { iterations: traces.len(), burn_in });
    }
    let window = &traces[burn_in..];
    let p = window[0].p();
    if window.iter().any(|z| z.p() != p) {
        return Err(Error::DimensionMismatch("score matrices differ in size".into()));
    }
    let mut mean = window[0].matrix().clone();
    for (k, z) in window.iter().enumerate().skip(1) {
        let count = (k + 1) as f64;
        mean.zip_apply(z.matrix(), |m, x| *m += (x - *m) / count);
    }
    ZScoreMatrix::new(mean)
}

/// Edge decision for every upper-triangle pair, with its test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSelection {
    pub adjacency: AdjacencyMatrix,
    /// Upper-triangle pairs in row-major order, aligned with `test`.
    pub pairs: Vec<(usize, usize)>,
    pub test: TestOutcome,
}

impl EdgeSelection {
    pub fn qvalue(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().position(|&pr| pr == (a, b)).map(|k| self.test.qvalues[k])
    }
}

/// Two-sided normal p-values for every pair, then the adaptive FDR test.
pub fn select_edges(z: &ZScoreMatrix, alpha: f64) -> Result<EdgeSelection> {
    let p = z.p();
    if p < 2 {
        return Err(Error::TooFewVariables(p));
    }
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let pvalues = z_to_pvalues(&z.upper())?;
    let test = adaptive_fdr_test(&pvalues, alpha)?;
    let adjacency = AdjacencyMatrix::from_edges(
        p,
        pairs.iter().zip(&test.rejected).filter(|(_, &r)| r).map(|(&pr, _)| pr),
    )?;
    Ok(EdgeSelection { adjacency, pairs, test })
}

pub fn adjacency_from_z(z: &ZScoreMatrix, alpha: f64) -> Result<AdjacencyMatrix> {
    select_edges(z, alpha).map(|s| s.adjacency)
}

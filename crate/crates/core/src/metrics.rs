//! Evaluation against a known truth: precision-recall curves, edge
//! confusion counts, covariance losses and clustering error rates.

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_from_cholesky, spd_inverse, symmetric_eigenvalues};
use crate::types::{AdjacencyMatrix, ClusterAssignment, ZScoreMatrix};

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Sweeps a threshold down the distinct values of `|Z|` over the upper
/// triangle. The area is a trapezoid rule over recall, starting at recall
/// zero with the precision of the first point that recovers an edge.
pub fn pr_curve(scores: &ZScoreMatrix, truth: &AdjacencyMatrix) -> Result<PrCurve> {
    let p = scores.p();
    if truth.p() != p {
        return Err(Error::DimensionMismatch(format!("{p} scored variables, {} in truth", truth.p())));
    }
    let total_true = truth.edge_count();
    if total_true == 0 {
        return Err(Error::DegenerateTruth);
    }
    let mut pairs: Vec<(f64, bool)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .map(|(i, j)| (scores.get(i, j).abs(), truth.contains(i, j)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = 0;
    while idx < pairs.len() {
        let threshold = pairs[idx].0;
        while idx < pairs.len() && pairs[idx].0 == threshold {
            if pairs[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / total_true as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    let mut auc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for pt in points.iter().filter(|pt| pt.recall > 0.0) {
        let (r0, p0) = prev.unwrap_or((0.0, pt.precision));
        auc += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        prev = Some((pt.recall, pt.precision));
    }
    Ok(PrCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `FP / (TP + FP)`, zero when nothing is selected.
    pub fn false_discovery_proportion(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.fp as f64 / (self.tp + self.fp) as f64
        }
    }
}

/// Edge decision counts over the upper triangle.
pub fn confusion(est: &AdjacencyMatrix, truth: &AdjacencyMatrix) -> Result<Confusion> {
    let p = est.p();
    if truth.p() != p {
        return Err(Error::DimensionMismatch(format!("{p} estimated variables, {} in truth", truth.p())));
    }
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for i in 0..p {
        for j in (i + 1)..p {
            match (est.contains(i, j), truth.contains(i, j)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormLosses {
    /// Mean spectral norm of the concentration-matrix difference.
    pub sl: f64,
    /// Mean Frobenius norm of the concentration-matrix difference.
    pub fl: f64,
    /// Mean of `tr(S S_hat^{-1}) - log det(S S_hat^{-1}) - p`.
    pub kl: f64,
}

/// Covariance losses averaged over paired components.
pub fn norm_losses(sigma_hat: &[DMatrix<f64>], sigma_true: &[DMatrix<f64>]) -> Result<NormLosses> {
    if sigma_hat.len() != sigma_true.len() || sigma_hat.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated and {} true covariances",
            sigma_hat.len(),
            sigma_true.len()
        )));
    }
    let mut out = NormLosses { sl: 0.0, fl: 0.0, kl: 0.0 };
    for (k, (hat, truth)) in sigma_hat.iter().zip(sigma_true).enumerate() {
        let p = truth.nrows();
        if hat.shape() != (p, p) || truth.ncols() != p {
            return Err(Error::DimensionMismatch(format!("component {} has mismatched shapes", k + 1)));
        }
        let singular = |what: &str| Error::SingularInput(format!("{what} covariance of component {}", k + 1));
        let hat_inv = spd_inverse(hat).ok_or_else(|| singular("estimated"))?;
        let true_inv = spd_inverse(truth).ok_or_else(|| singular("true"))?;
        let diff = &hat_inv - &true_inv;
        out.sl += symmetric_eigenvalues(&diff).abs().max();
        out.fl += diff.norm();

        let log_det_true = log_det_from_cholesky(&cholesky(truth).ok_or_else(|| singular("true"))?);
        let log_det_hat = log_det_from_cholesky(&cholesky(hat).ok_or_else(|| singular("estimated"))?);
        let tr = (truth * &hat_inv).trace();
        out.kl += tr - (log_det_true - log_det_hat) - p as f64;
    }
    let m = sigma_hat.len() as f64;
    out.sl /= m;
    out.fl /= m;
    out.kl /= m;
    Ok(out)
}

fn overlaps(tau_hat: &ClusterAssignment, tau_true: &ClusterAssignment, m: usize) -> Vec<Vec<usize>> {
    let mut o = vec![vec![0; m]; m];
    for (&e, &t) in tau_hat.labels().iter().zip(tau_true.labels()) {
        o[e][t] += 1;
    }
    o
}

#[derive(Debug, Clone, Copy)]
struct MatchScore {
    overlap: i64,
    cost: f64,
    fsr: f64,
}

impl MatchScore {
    const TOL: f64 = 1e-9;

    fn add(self, other: MatchScore) -> MatchScore {
        MatchScore { overlap: self.overlap + other.overlap, cost: self.cost + other.cost, fsr: self.fsr + other.fsr }
    }

    fn better(&self, other: &MatchScore) -> bool {
        if self.overlap != other.overlap {
            return self.overlap > other.overlap;
        }
        if (self.cost - other.cost).abs() > Self::TOL {
            return self.cost < other.cost;
        }
        self.fsr < other.fsr - Self::TOL
    }

    fn ties(&self, other: &MatchScore) -> bool {
        !self.better(other) && !other.better(self)
    }
}

fn pair_score(o: usize, est_size: usize, true_size: usize) -> MatchScore {
    let fsr = if est_size > 0 { (est_size - o) as f64 / est_size as f64 } else { 0.0 };
    let nsr = if true_size > 0 { (true_size - o) as f64 / true_size as f64 } else { 0.0 };
    MatchScore { overlap: o as i64, cost: fsr + nsr, fsr }
}

/// Estimated-to-true label map maximizing total overlap. Among maps with
/// equal overlap the smallest fsr + nsr wins, then the smallest fsr, so the
/// resulting rates do not depend on how either labeling is numbered.
pub fn match_clusters(tau_hat: &ClusterAssignment, tau_true: &ClusterAssignment) -> Result<Vec<usize>> {
    let m = tau_true.n_components();
    if tau_hat.n() != tau_true.n() {
        return Err(Error::DimensionMismatch(format!("{} and {} labels", tau_hat.n(), tau_true.n())));
    }
    if tau_hat.n_components() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated and {} true components",
            tau_hat.n_components(),
            m
        )));
    }
    if m > 16 {
        return Err(Error::InvalidArgument(format!("cluster matching supports up to 16 components, got {m}")));
    }
    let o = overlaps(tau_hat, tau_true, m);
    let (est_sizes, true_sizes) = (tau_hat.counts(), tau_true.counts());
    let score = |e: usize, t: usize| pair_score(o[e][t], est_sizes[e], true_sizes[t]);
    // rest[mask]: best score for estimated clusters popcount(mask)..m on
    // the true clusters outside mask
    let full = (1usize << m) - 1;
    let zero = MatchScore { overlap: 0, cost: 0.0, fsr: 0.0 };
    let mut rest = vec![zero; full + 1];
    for mask in (0..full).rev() {
        let e = mask.count_ones() as usize;
        let mut best: Option<MatchScore> = None;
        for t in (0..m).filter(|&t| mask & (1 << t) == 0) {
            let cand = score(e, t).add(rest[mask | (1 << t)]);
            if best.is_none_or(|b| cand.better(&b)) {
                best = Some(cand);
            }
        }
        rest[mask] = best.unwrap_or(zero);
    }
    let mut map = vec![0; m];
    let mut mask = 0usize;
    for (e, slot) in map.iter_mut().enumerate() {
        let t = (0..m)
            .find(|&t| mask & (1 << t) == 0 && score(e, t).add(rest[mask | (1 << t)]).ties(&rest[mask]))
            .expect("some true cluster attains the optimum");
        *slot = t;
        mask |= 1 << t;
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRates {
    pub fsr: f64,
    pub nsr: f64,
}

/// Averaged false and negative selection rates after optimal matching.
pub fn cluster_rates(tau_hat: &ClusterAssignment, tau_true: &ClusterAssignment) -> Result<ClusterRates> {
    let map = match_clusters(tau_hat, tau_true)?;
    let m = map.len();
    let o = overlaps(tau_hat, tau_true, m);
    let est_sizes = tau_hat.counts();
    let true_sizes = tau_true.counts();
    let mut fsr = 0.0;
    let mut nsr = 0.0;
    for (e, &t) in map.iter().enumerate() {
        let hit = o[e][t] as f64;
        if est_sizes[e] > 0 {
            fsr += (est_sizes[e] as f64 - hit) / est_sizes[e] as f64;
        } else {
            debug!("estimated cluster {} is empty", e + 1);
        }
        if true_sizes[t] > 0 {
            nsr += (true_sizes[t] as f64 - hit) / true_sizes[t] as f64;
        }
    }
    Ok(ClusterRates { fsr: fsr / m as f64, nsr: nsr / m as f64 })
}

/// Every metric for one fitted replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pr: PrCurve,
    pub confusion: Confusion,
    pub losses: Option<NormLosses>,
    pub rates: Option<ClusterRates>,
}

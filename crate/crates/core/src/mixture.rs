//! Mixture Gaussian graphical model fitting by imputation-consistency.
//!
//! Each iteration imputes component labels from their posterior, updates
//! weights and means, runs psi-learning inside every component, merges the
//! component scores into one network, and refits each component covariance
//! under that network. Scores from the iterations after burn-in are averaged
//! for the final network.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_cov::{constrained_cov, GraphCovFit, GraphCovSettings};
use crate::linalg::{log_sum_exp, GaussianDensity};
use crate::psi_integration::{average_zscores, integrate_clusters, select_edges, EdgeSelection};
use crate::psi_learning::{psi_learn, PsiSettings};
use crate::types::{AdjacencyMatrix, ClusterAssignment, DataMatrix, MixtureParams, PosteriorMatrix, ZScoreMatrix};

fn densities(params: &MixtureParams) -> Result<Vec<GaussianDensity>> {
    params
        .means
        .iter()
        .zip(&params.covariances)
        .enumerate()
        .map(|(k, (mu, s))| GaussianDensity::new(mu, s).ok_or(Error::SingularCovariance(k + 1)))
        .collect()
}

fn check_dims(x: &DataMatrix, params: &MixtureParams) -> Result<()> {
    if x.p() != params.p() {
        return Err(Error::DimensionMismatch(format!("data has {} variables, model {}", x.p(), params.p())));
    }
    Ok(())
}

/// `log pi_k + log phi(x_i | mu_k, Sigma_k)` for every sample and component.
fn weighted_log_densities(x: &DataMatrix, params: &MixtureParams) -> Result<DMatrix<f64>> {
    check_dims(x, params)?;
    let dens = densities(params)?;
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let m = params.n_components();
    let mut out = DMatrix::zeros(x.n(), m);
    for i in 0..x.n() {
        let xi = x.row(i);
        for k in 0..m {
            out[(i, k)] = log_w[k] + dens[k].log_pdf(&xi);
        }
    }
    Ok(out)
}

/// Posterior component membership probabilities.
pub fn posterior_probs(x: &DataMatrix, params: &MixtureParams) -> Result<PosteriorMatrix> {
    let mut l = weighted_log_densities(x, params)?;
    for mut row in l.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
    PosteriorMatrix::new(l)
}

/// Draws one label per row from the categorical distribution in that row.
pub fn impute_labels<R: Rng + ?Sized>(gamma: &PosteriorMatrix, rng: &mut R) -> ClusterAssignment {
    let m = gamma.n_components();
    let labels = gamma
        .matrix()
        .row_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut last_positive = 0;
            for k in 0..m {
                if row[k] > 0.0 {
                    last_positive = k;
                }
                cum += row[k];
                if u < cum {
                    return k;
                }
            }
            last_positive
        })
        .collect();
    ClusterAssignment::new(labels, m).expect("labels drawn from the posterior columns")
}

/// Component weights, means and sizes implied by an assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub weights: Vec<f64>,
    /// Means of empty components are zero vectors.
    pub means: Vec<DVector<f64>>,
    pub counts: Vec<usize>,
}

pub fn update_moments(x: &DataMatrix, tau: &ClusterAssignment) -> Result<Moments> {
    if tau.n() != x.n() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} samples", tau.n(), x.n())));
    }
    let m = tau.n_components();
    let mut sums = vec![DVector::zeros(x.p()); m];
    for (i, &k) in tau.labels().iter().enumerate() {
        sums[k] += x.values().row(i).transpose();
    }
    let counts = tau.counts();
    let n = x.n() as f64;
    let weights = counts.iter().map(|&c| c as f64 / n).collect();
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { s })
        .collect();
    Ok(Moments { weights, means, counts })
}

/// Tops up every component below `min_cluster` members.
///
/// Samples are moved from components that can spare them, most probable
/// under the receiving component first. When the receiving component has
/// negligible posterior mass everywhere, the least confidently assigned
/// samples are moved instead. Without a posterior, donors are taken in index
/// order. Returns the number of moved samples.
pub fn repair_assignment(
    tau: &mut ClusterAssignment,
    gamma: Option<&PosteriorMatrix>,
    min_cluster: usize,
) -> Result<usize> {
    let m = tau.n_components();
    let n = tau.n();
    if m * min_cluster > n {
        return Err(Error::EmptyClusterUnrepairable { n, components: m, min_cluster });
    }
    let mut counts = tau.counts();
    let mut moved = 0;
    for k in 0..m {
        if counts[k] >= min_cluster {
            continue;
        }
        let mut candidates: Vec<usize> = (0..n).filter(|&i| tau.labels()[i] != k).collect();
        if let Some(g) = gamma {
            let mass = (0..n).map(|i| g.get(i, k)).fold(0.0, f64::max);
            if mass < 1e-12 {
                let confidence = |i: usize| (0..m).map(|l| g.get(i, l)).fold(0.0, f64::max);
                candidates.sort_by(|&a, &b| confidence(a).total_cmp(&confidence(b)).then(a.cmp(&b)));
            } else {
                candidates.sort_by(|&a, &b| g.get(b, k).total_cmp(&g.get(a, k)).then(a.cmp(&b)));
            }
        }
        let labels = tau.labels_mut();
        for i in candidates {
            if counts[k] >= min_cluster {
                break;
            }
            let from = labels[i];
            if counts[from] > min_cluster {
                labels[i] = k;
                counts[from] -= 1;
                counts[k] += 1;
                moved += 1;
            }
        }
        if counts[k] < min_cluster {
            return Err(Error::EmptyClusterUnrepairable { n, components: m, min_cluster });
        }
    }
    if moved > 0 {
        debug!("moved {moved} samples to keep every component at {min_cluster} or more");
    }
    Ok(moved)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub psi: PsiSettings,
    pub min_cluster: usize,
    pub seed: u64,
    pub graph: GraphCovSettings,
}

impl Default for IcSettings {
    fn default() -> Self {
        Self {
            iterations: 20,
            burn_in: 10,
            psi: PsiSettings::default(),
            min_cluster: 10,
            seed: 1,
            graph: GraphCovSettings::default(),
        }
    }
}

impl IcSettings {
    fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::EmptyWindow { iterations: self.iterations, burn_in: self.burn_in });
        }
        if self.min_cluster < 10 {
            return Err(Error::InvalidArgument(format!("min_cluster {} below 10", self.min_cluster)));
        }
        Ok(())
    }
}

/// State after one imputation-consistency iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRecord {
    pub assignment: ClusterAssignment,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub counts: Vec<usize>,
    pub zscores: ZScoreMatrix,
    pub cluster_adjacency: Vec<AdjacencyMatrix>,
    pub adjacency: AdjacencyMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTrace {
    pub records: Vec<IcRecord>,
    pub burn_in: usize,
    pub seed: u64,
}

impl IcTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Post-burn-in averaged weights and means; covariances refit under the
    /// final network.
    pub params: MixtureParams,
    /// Concentration matrices of the final covariance fits, exactly zero off
    /// the network.
    pub precisions: Vec<DMatrix<f64>>,
    pub adjacency: AdjacencyMatrix,
    pub zbar: ZScoreMatrix,
    pub selection: EdgeSelection,
    /// Most probable component of every sample under the final parameters.
    pub assignments: ClusterAssignment,
    pub trace: IcTrace,
    pub log_likelihood: f64,
    pub bic: f64,
    /// Whether each final covariance fit converged.
    pub converged: Vec<bool>,
}

fn cluster_covariances(
    x: &DataMatrix,
    tau: &ClusterAssignment,
) -> Vec<DMatrix<f64>> {
    (0..tau.n_components()).map(|k| x.select_rows(&tau.members(k)).covariance()).collect()
}

fn fit_covariances(
    covs: &[DMatrix<f64>],
    graph: &AdjacencyMatrix,
    settings: &GraphCovSettings,
) -> Result<Vec<GraphCovFit>> {
    covs.par_iter().map(|s| constrained_cov(s, graph, settings)).collect()
}

/// Fits an `m`-component model from random equal-probability labels.
pub fn ic_fit(x: &DataMatrix, m: usize, settings: &IcSettings) -> Result<FitResult> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let labels = (0..x.n()).map(|_| rng.random_range(0..m)).collect();
    let init = ClusterAssignment::new(labels, m)?;
    run_chain(x, init, settings, rng)
}

/// Fits starting from the given labels; imputation uses `settings.seed`.
pub fn ic_fit_from_labels(x: &DataMatrix, init: ClusterAssignment, settings: &IcSettings) -> Result<FitResult> {
    run_chain(x, init, settings, ChaCha8Rng::seed_from_u64(settings.seed))
}

fn run_chain(x: &DataMatrix, mut tau: ClusterAssignment, settings: &IcSettings, mut rng: ChaCha8Rng) -> Result<FitResult> {
    settings.validate()?;
    if tau.n() != x.n() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} samples", tau.n(), x.n())));
    }
    let m = tau.n_components();
    let n = x.n();
    let p = x.p();

    repair_assignment(&mut tau, None, settings.min_cluster)?;
    let moments = update_moments(x, &tau)?;
    let whole = psi_learn(x, &settings.psi)?;
    let fits = fit_covariances(&cluster_covariances(x, &tau), &whole.adjacency, &settings.graph)?;
    let mut params = MixtureParams::new(
        moments.weights,
        moments.means,
        fits.into_iter().map(|f| f.covariance).collect(),
        whole.adjacency,
    )?;

    let window = (settings.iterations - settings.burn_in) as f64;
    let mut weight_sum = vec![0.0; m];
    let mut mean_sum = vec![DVector::zeros(p); m];
    let mut cov_sum = vec![DMatrix::zeros(p, p); m];
    let mut records = Vec::with_capacity(settings.iterations);

    for t in 0..settings.iterations {
        let gamma = posterior_probs(x, &params)?;
        tau = impute_labels(&gamma, &mut rng);
        repair_assignment(&mut tau, Some(&gamma), settings.min_cluster)?;
        let moments = update_moments(x, &tau)?;

        let members: Vec<Vec<usize>> = (0..m).map(|k| tau.members(k)).collect();
        let cluster_fits = members
            .par_iter()
            .map(|rows| psi_learn(&x.select_rows(rows), &settings.psi))
            .collect::<Result<Vec<_>>>()?;
        let psi: Vec<_> = cluster_fits.iter().map(|f| f.psi.clone()).collect();
        let zscores = integrate_clusters(&psi, n)?;
        let adjacency = select_edges(&zscores, settings.psi.alpha2)?.adjacency;

        let covs = cluster_covariances(x, &tau);
        let fits = fit_covariances(&covs, &adjacency, &settings.graph)?;
        params = MixtureParams::new(
            moments.weights.clone(),
            moments.means.clone(),
            fits.into_iter().map(|f| f.covariance).collect(),
            adjacency.clone(),
        )?;

        if t >= settings.burn_in {
            for k in 0..m {
                weight_sum[k] += moments.weights[k];
                mean_sum[k] += &moments.means[k];
                cov_sum[k] += &covs[k];
            }
        }
        debug!("iteration {}: sizes {:?}, {} edges", t + 1, moments.counts, adjacency.edge_count());
        records.push(IcRecord {
            assignment: tau.clone(),
            weights: moments.weights,
            means: moments.means,
            counts: moments.counts,
            zscores,
            cluster_adjacency: cluster_fits.into_iter().map(|f| f.adjacency).collect(),
            adjacency,
        });
    }

    let traces: Vec<ZScoreMatrix> = records.iter().map(|r| r.zscores.clone()).collect();
    let zbar = average_zscores(&traces, settings.burn_in)?;
    let selection = select_edges(&zbar, settings.psi.alpha2)?;
    let adjacency = selection.adjacency.clone();

    let total: f64 = weight_sum.iter().sum();
    let weights: Vec<f64> = weight_sum.iter().map(|w| w / total).collect();
    let means: Vec<DVector<f64>> = mean_sum.into_iter().map(|s| s / window).collect();
    let covs: Vec<DMatrix<f64>> = cov_sum.into_iter().map(|s| s / window).collect();
    let fits = fit_covariances(&covs, &adjacency, &settings.graph)?;
    let converged: Vec<bool> = fits.iter().map(|f| f.converged).collect();
    if converged.iter().any(|c| !c) {
        warn!("a final covariance fit did not converge");
    }
    let precisions = fits.iter().map(|f| f.precision.clone()).collect();
    let params = MixtureParams::new(weights, means, fits.into_iter().map(|f| f.covariance).collect(), adjacency.clone())?;

    let assignments = posterior_probs(x, &params)?.map_assignment();
    let log_likelihood = log_likelihood(x, &params)?;
    let bic = bic_from_loglik(log_likelihood, n, m, p, adjacency.edge_count());
    info!("M = {m}: {} edges, BIC {bic:.3}", adjacency.edge_count());

    Ok(FitResult {
        params,
        precisions,
        adjacency,
        zbar,
        selection,
        assignments,
        trace: IcTrace { records, burn_in: settings.burn_in, seed: settings.seed },
        log_likelihood,
        bic,
        converged,
    })
}

/// `sum_i log sum_k pi_k phi(x_i | mu_k, Sigma_k)`.
pub fn log_likelihood(x: &DataMatrix, params: &MixtureParams) -> Result<f64> {
    let l = weighted_log_densities(x, params)?;
    Ok(l.row_iter().map(|row| log_sum_exp(&row.iter().copied().collect::<Vec<_>>())).sum())
}

/// Free parameters `M * (p + number of edges)`.
pub fn degrees_of_freedom(m: usize, p: usize, edges: usize) -> usize {
    m * (p + edges)
}

fn bic_from_loglik(ll: f64, n: usize, m: usize, p: usize, edges: usize) -> f64 {
    -2.0 * ll + (n as f64).ln() * degrees_of_freedom(m, p, edges) as f64
}

pub fn bic_score(x: &DataMatrix, params: &MixtureParams, graph: &AdjacencyMatrix) -> Result<f64> {
    let ll = log_likelihood(x, params)?;
    Ok(bic_from_loglik(ll, x.n(), params.n_components(), x.p(), graph.edge_count()))
}

/// One candidate of a component-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub m: usize,
    pub bic: f64,
    pub df: usize,
    pub log_likelihood: f64,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub best: usize,
    /// Every candidate, in input order.
    pub rows: Vec<BicRow>,
}

/// Fits every candidate component count and keeps the smallest BIC; the
/// smaller count wins ties.
pub fn select_m(x: &DataMatrix, candidates: &[usize], settings: &IcSettings) -> Result<ModelSelection> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &m in candidates {
        let fit = ic_fit(x, m, settings)?;
        let edges = fit.adjacency.edge_count();
        rows.push(BicRow {
            m,
            bic: fit.bic,
            df: degrees_of_freedom(m, x.p(), edges),
            log_likelihood: fit.log_likelihood,
            edges,
        });
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.m.cmp(&b.m)))
        .map(|r| r.m)
        .expect("nonempty");
    Ok(ModelSelection { best, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    /// Dense covariances; the adjacency is complete.
    pub params: MixtureParams,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

/// Farthest-first centers: the sample farthest from the grand mean, then
/// repeatedly the sample farthest from every chosen center.
fn farthest_first(x: &DataMatrix, m: usize) -> Vec<usize> {
    let n = x.n();
    let rows: Vec<DVector<f64>> = (0..n).map(|i| x.row(i)).collect();
    let centre = x.column_means();
    let argmax = |d: &[f64]| (0..n).fold(0, |best, i| if d[i] > d[best] { i } else { best });
    let mut dist: Vec<f64> = rows.iter().map(|r| (r - &centre).norm_squared()).collect();
    let mut chosen = vec![argmax(&dist)];
    dist = rows.iter().map(|r| (r - &rows[chosen[0]]).norm_squared()).collect();
    while chosen.len() < m {
        let next = argmax(&dist);
        chosen.push(next);
        for (d, r) in dist.iter_mut().zip(&rows) {
            *d = d.min((r - &rows[next]).norm_squared());
        }
    }
    chosen
}

fn m_step(x: &DataMatrix, gamma: &DMatrix<f64>) -> Result<MixtureParams> {
    let (n, p) = (x.n(), x.p());
    let m = gamma.ncols();
    let mut weights = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut covs = Vec::with_capacity(m);
    for k in 0..m {
        let nk: f64 = gamma.column(k).sum();
        if nk <= p as f64 {
            return Err(Error::SingularCovariance(k + 1));
        }
        let mu = x.values().tr_mul(&gamma.column(k)) / nk;
        let mut s = DMatrix::zeros(p, p);
        for i in 0..n {
            let d = x.row(i) - &mu;
            s.ger(gamma[(i, k)] / nk, &d, &d, 1.0);
        }
        weights.push(nk / n as f64);
        means.push(mu);
        covs.push(s);
    }
    MixtureParams::new(weights, means, covs, AdjacencyMatrix::complete(p))
}

/// Classical EM with dense covariances, for low-dimensional data.
pub fn em_fit_lowdim(x: &DataMatrix, m: usize, tol: f64, max_iter: usize) -> Result<EmFit> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if x.n() <= x.p() + 1 {
        return Err(Error::TooFewSamples { needed: x.p() + 2, got: x.n() });
    }
    let centers = farthest_first(x, m);
    let rows: Vec<DVector<f64>> = (0..x.n()).map(|i| x.row(i)).collect();
    let mut gamma = DMatrix::zeros(x.n(), m);
    for (i, r) in rows.iter().enumerate() {
        let nearest = (0..m)
            .map(|k| (r - &rows[centers[k]]).norm_squared())
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
            .0;
        gamma[(i, nearest)] = 1.0;
    }
    let mut params = m_step(x, &gamma)?;
    let mut trace = vec![log_likelihood(x, &params)?];
    let mut converged = false;
    for _ in 0..max_iter {
        gamma = posterior_probs(x, &params)?.matrix().clone();
        params = m_step(x, &gamma)?;
        let ll = log_likelihood(x, &params)?;
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if gain.abs() < tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit { params, log_likelihood: trace, converged })
}

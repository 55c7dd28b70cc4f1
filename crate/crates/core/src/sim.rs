//! Synthetic mixture designs with banded precision matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, symmetric_eigenvalues};
use crate::types::{AdjacencyMatrix, ClusterAssignment, DataMatrix};

/// `p x p` precision with `c` on the first off-diagonal band, `c / 2` on the
/// second and ones on the diagonal.
pub fn banded_precision(p: usize, c: f64) -> Result<DMatrix<f64>> {
    if p < 3 {
        return Err(Error::InvalidArgument(format!("banded precision needs p >= 3, got {p}")));
    }
    let m = DMatrix::from_fn(p, p, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => c,
        2 => c / 2.0,
        _ => 0.0,
    });
    if cholesky(&m).is_none() {
        return Err(Error::NotPositiveDefinite { c, p });
    }
    Ok(m)
}

/// Draws `n` rows from `N(mean, cov)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = mean.len();
    let l = cholesky(cov)
        .ok_or_else(|| Error::SingularInput("sampling covariance".into()))?
        .unpack();
    let mut out = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for r in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let x = &l * &z + mean;
        out.set_row(r, &x.transpose());
    }
    Ok(out)
}

/// Mixture simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_components: usize,
    pub p: usize,
    pub n_per_cluster: usize,
    /// Mean offset `m`.
    pub mean_offset: f64,
    /// Band strength per component; a single value is shared by all.
    pub band: Vec<f64>,
    pub seed: u64,
}

impl SimDesign {
    /// Shared-precision design with three components, `n = 300`.
    pub fn shared(p: usize, mean_offset: f64, seed: u64) -> Self {
        Self { n_components: 3, p, n_per_cluster: 100, mean_offset, band: vec![0.5], seed }
    }

    /// Three components with band strengths 0.6, 0.5 and 0.4.
    pub fn distinct(p: usize, mean_offset: f64, seed: u64) -> Self {
        Self { n_components: 3, p, n_per_cluster: 100, mean_offset, band: vec![0.6, 0.5, 0.4], seed }
    }

    pub fn band_strength(&self, k: usize) -> f64 {
        if self.band.len() == 1 {
            self.band[0]
        } else {
            self.band[k]
        }
    }

    /// Mean multipliers: `0, +1, -1, +2, -2, ...` for an odd component count
    /// and `+1, -1, +2, -2, ...` for an even one.
    pub fn mean_multiplier(&self, k: usize) -> f64 {
        let idx = if self.n_components % 2 == 1 {
            if k == 0 {
                return 0.0;
            }
            k - 1
        } else {
            k
        };
        let level = (idx / 2 + 1) as f64;
        if idx % 2 == 0 {
            level
        } else {
            -level
        }
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        DVector::from_element(self.p, self.mean_offset * self.mean_multiplier(k))
    }

    pub fn precision(&self, k: usize) -> Result<DMatrix<f64>> {
        banded_precision(self.p, self.band_strength(k))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 || self.n_per_cluster == 0 {
            return Err(Error::InvalidArgument("need at least one component and one sample".into()));
        }
        if self.band.len() != 1 && self.band.len() != self.n_components {
            return Err(Error::InvalidArgument(format!(
                "{} band strengths for {} components",
                self.band.len(),
                self.n_components
            )));
        }
        for k in 0..self.n_components {
            self.precision(k)?;
        }
        Ok(())
    }
}

/// A simulated data set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: DataMatrix,
    pub labels: ClusterAssignment,
    pub adjacency: AdjacencyMatrix,
    pub covariances: Vec<DMatrix<f64>>,
    pub precisions: Vec<DMatrix<f64>>,
    pub means: Vec<DVector<f64>>,
}

/// Draws `n_per_cluster` rows from each component, then shuffles the rows.
pub fn simulate_mixture(design: &SimDesign) -> Result<Simulation> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let m = design.n_components;
    let n = m * design.n_per_cluster;

    let precisions: Vec<DMatrix<f64>> = (0..m).map(|k| design.precision(k)).collect::<Result<_>>()?;
    let covariances: Vec<DMatrix<f64>> = precisions
        .iter()
        .map(|c| spd_inverse(c).ok_or_else(|| Error::SingularInput("band precision".into())))
        .collect::<Result<_>>()?;
    let means: Vec<DVector<f64>> = (0..m).map(|k| design.mean(k)).collect();

    let mut rows = DMatrix::zeros(n, design.p);
    let mut labels = Vec::with_capacity(n);
    for k in 0..m {
        let block = sample_gaussian(&means[k], &covariances[k], design.n_per_cluster, &mut rng)?;
        let start = k * design.n_per_cluster;
        rows.rows_mut(start, design.n_per_cluster).copy_from(&block);
        labels.extend(std::iter::repeat_n(k, design.n_per_cluster));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let shuffled = rows.select_rows(&order);
    let labels = order.iter().map(|&r| labels[r]).collect();

    let mut adjacency = AdjacencyMatrix::empty(design.p);
    for pr in &precisions {
        for (i, j) in AdjacencyMatrix::from_pattern(pr, 0.0).edges() {
            adjacency.insert(i, j);
        }
    }
    Ok(Simulation {
        data: DataMatrix::new(shuffled)?,
        labels: ClusterAssignment::new(labels, m)?,
        adjacency,
        covariances,
        precisions,
        means,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

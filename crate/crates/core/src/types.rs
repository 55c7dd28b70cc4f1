//! Domain data model shared by every stage of the estimator.
//!
//! Indices are 0-based throughout the library. The CLI converts to 1-based
//! numbering on output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validated `n x p` observation matrix. Rows are samples, columns variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    /// Checks finiteness, shape and column variance.
    ///
    /// Errors report 1-based row/column positions.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        if n == 0 || p == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some((r, c)) = first_non_finite(&values) {
            return Err(Error::NonFinite { row: r + 1, col: c + 1 });
        }
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        if p < 2 {
            return Err(Error::TooFewVariables(p));
        }
        for col in 0..p {
            let c = values.column(col);
            let first = c[0];
            if c.iter().all(|&v| v == first) {
                return Err(Error::ConstantColumn(col + 1));
            }
        }
        Ok(Self { values })
    }

    /// Builds from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} values, expected {}",
                bad + 1,
                rows[bad].len(),
                p
            )));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    /// Wraps a matrix that is already known to be finite, e.g. a row subset
    /// of a validated matrix. Constant columns are tolerated here.
    pub(crate) fn from_trusted(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        DataMatrix::from_trusted(self.values.select_rows(indices))
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_iterator(self.p(), self.values.column_iter().map(|c| c.sum() / n))
    }

    /// Sample covariance with the `1/(n-1)` divisor.
    pub fn covariance(&self) -> DMatrix<f64> {
        crate::linalg::sample_covariance(&self.values)
    }
}

// row-major, so the reported position is the first one a reader would hit
fn first_non_finite(values: &DMatrix<f64>) -> Option<(usize, usize)> {
    for row in 0..values.nrows() {
        for col in 0..values.ncols() {
            if !values[(row, col)].is_finite() {
                return Some((row, col));
            }
        }
    }
    None
}

/// Symmetric binary edge indicator with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    p: usize,
    edges: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn empty(p: usize) -> Self {
        Self { p, edges: vec![false; p * p] }
    }

    pub fn complete(p: usize) -> Self {
        let mut a = Self::empty(p);
        for i in 0..p {
            for j in (i + 1)..p {
                a.insert(i, j);
            }
        }
        a
    }

    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(p: usize, edges: I) -> Result<Self> {
        let mut a = Self::empty(p);
        for (i, j) in edges {
            if i >= p || j >= p {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) out of range for p = {}",
                    i + 1,
                    j + 1,
                    p
                )));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop at {}", i + 1)));
            }
            a.insert(i, j);
        }
        Ok(a)
    }

    /// Nonzero off-diagonal pattern of a matrix, with `|x| > tol`.
    pub fn from_pattern(m: &DMatrix<f64>, tol: f64) -> Self {
        let p = m.nrows();
        let mut a = Self::empty(p);
        for i in 0..p {
            for j in (i + 1)..p {
                if m[(i, j)].abs() > tol || m[(j, i)].abs() > tol {
                    a.insert(i, j);
                }
            }
        }
        a
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.p + j]
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        if i != j {
            self.edges[i * self.p + j] = true;
            self.edges[j * self.p + i] = true;
        }
    }

    pub fn remove(&mut self, i: usize, j: usize) {
        self.edges[i * self.p + j] = false;
        self.edges[j * self.p + i] = false;
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.p).filter(|&j| self.contains(i, j)).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.p).filter(|&j| self.contains(i, j)).count()
    }

    /// Upper-triangle edge list `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in (i + 1)..self.p {
                if self.contains(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.p).all(|i| !self.contains(i, i))
            && (0..self.p).all(|i| (0..self.p).all(|j| self.contains(i, j) == self.contains(j, i)))
    }

    /// Relabels variables: variable `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut a = Self::empty(self.p);
        for (i, j) in self.edges() {
            a.insert(perm[i], perm[j]);
        }
        a
    }
}

/// Reduced-network neighborhoods `S_i`, ordered by decreasing absolute
/// correlation with variable `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodMap {
    neighbors: Vec<Vec<usize>>,
}

impl NeighborhoodMap {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        for (i, s) in neighbors.iter().enumerate() {
            if s.contains(&i) {
                return Err(Error::InvalidArgument(format!(
                    "variable {} appears in its own neighborhood",
                    i + 1
                )));
            }
        }
        Ok(Self { neighbors })
    }

    pub fn p(&self) -> usize {
        self.neighbors.len()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn max_size(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Reduced-set partial correlations together with the size of the
/// conditioning set used for each pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiMatrix {
    pub psi: DMatrix<f64>,
    pub cond_sizes: DMatrix<usize>,
    /// Number of samples the matrix was computed from.
    pub n: usize,
}

impl PsiMatrix {
    pub fn p(&self) -> usize {
        self.psi.nrows()
    }
}

/// Symmetric matrix of psi-scores with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreMatrix {
    z: DMatrix<f64>,
}

impl ZScoreMatrix {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        let p = z.nrows();
        if z.ncols() != p {
            return Err(Error::DimensionMismatch(format!("{}x{} score matrix", p, z.ncols())));
        }
        for i in 0..p {
            if z[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument("score matrix diagonal must be zero".into()));
            }
            for j in 0..p {
                if !z[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i + 1, col: j + 1 });
                }
                if z[(i, j)] != z[(j, i)] {
                    return Err(Error::InvalidArgument("score matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { z })
    }

    pub fn zeros(p: usize) -> Self {
        Self { z: DMatrix::zeros(p, p) }
    }

    /// Fills the upper triangle from `f(i, j)` (`i < j`) and mirrors it.
    pub fn from_upper<F: FnMut(usize, usize) -> f64>(p: usize, mut f: F) -> Self {
        let mut z = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in (i + 1)..p {
                let v = f(i, j);
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
        Self { z }
    }

    pub fn p(&self) -> usize {
        self.z.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Upper-triangle entries in row-major order.
    pub fn upper(&self) -> Vec<f64> {
        let p = self.p();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in (i + 1)..p {
                out.push(self.z[(i, j)]);
            }
        }
        out
    }
}

/// Component labels `0..n_components` for every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    n_components: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, n_components: usize) -> Result<Self> {
        if n_components == 0 {
            return Err(Error::InvalidArgument("need at least one component".into()));
        }
        if let Some(pos) = labels.iter().position(|&l| l >= n_components) {
            return Err(Error::InvalidArgument(format!(
                "label {} of sample {} outside 1..={}",
                labels[pos] + 1,
                pos + 1,
                n_components
            )));
        }
        Ok(Self { labels, n_components })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_components];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Membership probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMatrix {
    gamma: DMatrix<f64>,
}

impl PosteriorMatrix {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        for (i, row) in gamma.row_iter().enumerate() {
            if row.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                return Err(Error::InvalidArgument(format!("row {} has entries outside [0, 1]", i + 1)));
            }
            if (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row {} does not sum to one", i + 1)));
            }
        }
        Ok(Self { gamma })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.gamma[(i, k)]
    }

    /// Most probable component per sample, lowest index on ties.
    pub fn map_assignment(&self) -> ClusterAssignment {
        let labels = self
            .gamma
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        ClusterAssignment { labels, n_components: self.gamma.ncols() }
    }
}

/// Mixture proportions, component means and covariances, plus the shared
/// adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub adjacency: AdjacencyMatrix,
}

impl MixtureParams {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        adjacency: AdjacencyMatrix,
    ) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || covariances.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} weights, {} means, {} covariances",
                m,
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must lie on the simplex".into()));
        }
        let p = adjacency.p();
        for (k, (mu, s)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != p || s.shape() != (p, p) {
                return Err(Error::DimensionMismatch(format!("component {} has wrong dimension", k + 1)));
            }
        }
        Ok(Self { weights, means, covariances, adjacency })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.adjacency.p()
    }

    /// Concentration matrices `Sigma_k^{-1}`.
    pub fn precisions(&self) -> Result<Vec<DMatrix<f64>>> {
        self.covariances
            .iter()
            .enumerate()
            .map(|(k, s)| crate::linalg::spd_inverse(s).ok_or(Error::SingularCovariance(k + 1)))
            .collect()
    }
}

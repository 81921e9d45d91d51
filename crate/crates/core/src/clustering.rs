//! BFIF grouping: Mahalanobis distances, Gaussian-kernel similarity graph and
//! Markov clustering (MCL).

use nalgebra::{DMatrix, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::geometry::Twist;

/// How the covariance behind the Mahalanobis distance is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceMode {
    /// Sample covariance of the whole BFIF set of the current update.
    Sample,
    /// Half the second moment of each BFIF's difference to its nearest
    /// neighbor (Euclidean): an estimate of the within-group spread that is
    /// not inflated by the separation between groups.
    NearestNeighbor,
}

/// Rule for the Gaussian kernel width σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    /// Median of all off-diagonal distances.
    Median,
    /// `scale` times the median, over nodes, of the distance to the `k`-th nearest neighbor.
    NeighborMedian {
        k: usize,
        scale: f64,
    },
    Fixed(f64),
}

/// Floor on the kernel width.
pub const MIN_BANDWIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub expansion: u32,
    pub inflation: f64,
    pub prune_threshold: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub cov_regularizer: f64,
    pub covariance_mode: CovarianceMode,
    pub bandwidth_mode: BandwidthMode,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            expansion: 2,
            inflation: 1.5,
            prune_threshold: 1e-5,
            max_iters: 100,
            convergence_tol: 1e-6,
            cov_regularizer: 1e-6,
            covariance_mode: CovarianceMode::NearestNeighbor,
            bandwidth_mode: BandwidthMode::NeighborMedian { k: 3, scale: 4.0 },
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.expansion >= 2
            && self.inflation > 1.0
            && self.prune_threshold > 0.0
            && self.prune_threshold <= 1e-2
            && self.max_iters >= 1
            && self.cov_regularizer > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cluster config {self:?}")))
        }
    }
}

/// Symmetric similarity matrix with unit diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub weights: DMatrix<f64>,
}

impl SimilarityGraph {
    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }
}

/// Sample covariance (n − 1 denominator; zero for n < 2).
pub fn sample_covariance(bfifs: &[Twist]) -> Matrix6<f64> {
    let n = bfifs.len();
    if n < 2 {
        return Matrix6::zeros();
    }
    let mean = bfifs.iter().map(Twist::to_vector).sum::<Vector6<f64>>() / n as f64;
    let mut cov = Matrix6::zeros();
    for t in bfifs {
        let d = t.to_vector() - mean;
        cov += d * d.transpose();
    }
    cov / (n as f64 - 1.0)
}

/// `½·mean(δδᵀ)` over each BFIF's difference δ to its Euclidean nearest neighbor.
pub fn nearest_neighbor_covariance(bfifs: &[Twist]) -> Matrix6<f64> {
    let n = bfifs.len();
    if n < 2 {
        return Matrix6::zeros();
    }
    let vs: Vec<Vector6<f64>> = bfifs.iter().map(Twist::to_vector).collect();
    let mut cov = Matrix6::zeros();
    for (i, a) in vs.iter().enumerate() {
        let nn = vs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .min_by(|x, y| {
                (x.1 - a)
                    .norm_squared()
                    .total_cmp(&(y.1 - a).norm_squared())
            })
            .map(|(_, b)| b)
            .expect("n >= 2");
        let d = a - nn;
        cov += d * d.transpose();
    }
    cov / (2.0 * n as f64)
}

/// Pairwise distances `sqrt((a−b)ᵀ (Σ + εI)⁻¹ (a−b))` for a given Σ.
pub fn mahalanobis_with_covariance(
    bfifs: &[Twist],
    cov: &Matrix6<f64>,
    cov_regularizer: f64,
) -> DMatrix<f64> {
    let n = bfifs.len();
    let reg = cov + Matrix6::identity() * cov_regularizer;
    let inv = reg
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| reg.try_inverse())
        .unwrap_or_else(|| Matrix6::identity() / cov_regularizer);
    let vs: Vec<Vector6<f64>> = bfifs.iter().map(Twist::to_vector).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = vs[i] - vs[j];
            let q = (diff.transpose() * inv * diff)[(0, 0)].max(0.0);
            d[(i, j)] = q.sqrt();
            d[(j, i)] = d[(i, j)];
        }
    }
    d
}

/// Pairwise Mahalanobis distances under the sample covariance of the set.
pub fn pairwise_mahalanobis(bfifs: &[Twist], cov_regularizer: f64) -> DMatrix<f64> {
    mahalanobis_with_covariance(bfifs, &sample_covariance(bfifs), cov_regularizer)
}

/// Distances under the covariance selected by `cfg.covariance_mode`.
pub fn bfif_distances(bfifs: &[Twist], cfg: &ClusterConfig) -> DMatrix<f64> {
    let cov = match cfg.covariance_mode {
        CovarianceMode::Sample => sample_covariance(bfifs),
        CovarianceMode::NearestNeighbor => nearest_neighbor_covariance(bfifs),
    };
    mahalanobis_with_covariance(bfifs, &cov, cfg.cov_regularizer)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Kernel width for a distance matrix under `mode`, floored at [`MIN_BANDWIDTH`].
pub fn bandwidth(distances: &DMatrix<f64>, mode: BandwidthMode) -> f64 {
    let n = distances.nrows();
    let sigma = match mode {
        BandwidthMode::Fixed(s) => s,
        BandwidthMode::Median => {
            let off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| distances[(i, j)])
                .collect();
            median(off).unwrap_or(0.0)
        }
        BandwidthMode::NeighborMedian { k, scale } => {
            let kth: Vec<f64> = (0..n)
                .filter_map(|i| {
                    let mut row: Vec<f64> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| distances[(i, j)])
                        .collect();
                    if row.is_empty() {
                        return None;
                    }
                    row.sort_by(f64::total_cmp);
                    Some(row[(k.max(1) - 1).min(row.len() - 1)])
                })
                .collect();
            scale * median(kth).unwrap_or(0.0)
        }
    };
    if sigma.is_finite() {
        sigma.max(MIN_BANDWIDTH)
    } else {
        MIN_BANDWIDTH
    }
}

/// `w(a,b) = exp(−d²/(2σ²))`.
pub fn similarity_graph(distances: &DMatrix<f64>, cfg: &ClusterConfig) -> SimilarityGraph {
    let sigma = bandwidth(distances, cfg.bandwidth_mode);
    let n = distances.nrows();
    let mut w = DMatrix::from_fn(n, n, |i, j| {
        let d = distances[(i, j)];
        (-(d * d) / (2.0 * sigma * sigma)).exp()
    });
    for i in 0..n {
        w[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let s = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    SimilarityGraph { weights: w }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MclOutcome {
    /// Disjoint index sets covering `0..n`, each sorted, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub iterations: usize,
    /// False when `max_iters` was reached before the change fell below tolerance.
    pub converged: bool,
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let s: f64 = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
}

/// Markov clustering by alternating expansion, inflation and pruning on the
/// column-stochastic similarity matrix. Clusters are the connected components
/// of the converged matrix's non-zero pattern.
pub fn markov_cluster(g: &SimilarityGraph, cfg: &ClusterConfig) -> MclOutcome {
    let n = g.node_count();
    if n == 0 {
        return MclOutcome {
            clusters: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    let mut m = g.weights.clone();
    normalize_columns(&mut m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut next = m.clone();
        for _ in 1..cfg.expansion {
            next = &next * &m;
        }
        next.apply(|x| *x = x.powf(cfg.inflation));
        normalize_columns(&mut next);
        next.apply(|x| {
            if *x < cfg.prune_threshold {
                *x = 0.0
            }
        });
        normalize_columns(&mut next);
        let change = (&next - &m).amax();
        m = next;
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    // Union-find over the support of the converged matrix.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_slot[r]].push(i);
    }
    MclOutcome {
        clusters,
        iterations,
        converged,
    }
}

/// Distances, kernel and MCL in one call.
pub fn group_bfifs(bfifs: &[Twist], cfg: &ClusterConfig) -> MclOutcome {
    let d = bfif_distances(bfifs, cfg);
    markov_cluster(&similarity_graph(&d, cfg), cfg)
}

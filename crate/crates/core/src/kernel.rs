//! Kernel weight matrices, kernel density estimates and neighbourhood graphs.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Squared Euclidean distance between two rows.
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Heat-kernel prefactor `(4 pi eps)^(-d/2)`.
pub fn gaussian_prefactor(epsilon: f64, dim: usize) -> f64 {
    (4.0 * PI * epsilon).powf(-(dim as f64) / 2.0)
}

/// `k_eps(x, y) = (4 pi eps)^(-d/2) exp(-|x - y|^2 / (4 eps))`.
pub fn gaussian_kernel(sq_distance: f64, epsilon: f64, dim: usize) -> f64 {
    gaussian_prefactor(epsilon, dim) * (-sq_distance / (4.0 * epsilon)).exp()
}

/// Which similarity function fills the weight matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// Gaussian heat kernel. `cutoff`, when set, zeroes pairs farther apart than
    /// `cutoff * sqrt(eps)`.
    Gaussian { normalized: bool, cutoff: Option<f64> },
    /// 0/1 adjacency: weight 1 iff `|x - y| <= tau`.
    Binary { tau: f64, self_loops: bool },
}

impl Default for KernelKind {
    fn default() -> Self {
        KernelKind::Gaussian {
            normalized: true,
            cutoff: None,
        }
    }
}

/// Dense pairwise weights `K(i, j)` and degrees `rho_i = sum_j K(i, j)`.
///
/// Degrees include the self-weight `K(i, i)`.
#[derive(Debug, Clone)]
pub struct KernelGraph {
    pub weights: Array2<f64>,
    pub degrees: Array1<f64>,
    pub epsilon: f64,
    pub dim: usize,
    pub kind: KernelKind,
}

impl KernelGraph {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn normalized(&self) -> bool {
        matches!(self.kind, KernelKind::Gaussian { normalized: true, .. })
    }

    /// Unnormalized graph Laplacian `L = M - K` with `M = diag(rho)`.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = -&self.weights;
        for (i, d) in self.degrees.iter().enumerate() {
            l[[i, i]] += d;
        }
        l
    }
}

/// Gaussian kernel graph with the `(4 pi eps)^(-d/2)` prefactor.
pub fn build_kernel(cloud: &PointCloud, epsilon: f64) -> Result<KernelGraph> {
    build_kernel_with(cloud, epsilon, KernelKind::default())
}

pub fn build_kernel_with(cloud: &PointCloud, epsilon: f64, kind: KernelKind) -> Result<KernelGraph> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("bandwidth must be positive, got {epsilon}")));
    }
    match kind {
        KernelKind::Binary { tau, .. } if !(tau > 0.0) => {
            return Err(Error::param(format!("adjacency threshold must be positive, got {tau}")))
        }
        KernelKind::Gaussian { cutoff: Some(c), .. } if !(c > 0.0) => {
            return Err(Error::param(format!("kernel cutoff must be positive, got {c}")))
        }
        _ => {}
    }
    let n = cloud.n();
    let dim = cloud.dim();
    let x = cloud.points();
    let mut weights = Array2::zeros((n, n));
    let pref = match kind {
        KernelKind::Gaussian { normalized: true, .. } => gaussian_prefactor(epsilon, dim),
        _ => 1.0,
    };
    for i in 0..n {
        for j in i..n {
            let d2 = sq_dist(x.row(i), x.row(j));
            let w = match kind {
                KernelKind::Gaussian { cutoff, .. } => {
                    match cutoff {
                        Some(c) if d2 > c * c * epsilon => 0.0,
                        _ => pref * (-d2 / (4.0 * epsilon)).exp(),
                    }
                }
                KernelKind::Binary { tau, self_loops } => {
                    if i == j {
                        if self_loops {
                            1.0
                        } else {
                            0.0
                        }
                    } else if d2 <= tau * tau {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            weights[[i, j]] = w;
            weights[[j, i]] = w;
        }
    }
    let degrees = weights.rows().into_iter().map(|r| r.sum()).collect();
    Ok(KernelGraph {
        weights,
        degrees,
        epsilon,
        dim,
        kind,
    })
}

/// Kernel density estimate at the samples: `p(X_i) = (1/n) sum_j k(X_i, X_j)`.
pub fn kde(graph: &KernelGraph) -> Array1<f64> {
    let n = graph.n() as f64;
    graph.degrees.mapv(|d| d / n)
}

/// Neighbourhood graph: an edge joins every pair at distance `<= threshold`.
#[derive(Debug, Clone)]
pub struct EpsilonGraph {
    pub n: usize,
    pub threshold: f64,
    /// Edges `(i, j, length)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl EpsilonGraph {
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }
}

pub fn epsilon_graph(cloud: &PointCloud, tau: f64) -> Result<EpsilonGraph> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("graph threshold must be positive, got {tau}")));
    }
    let n = cloud.n();
    let x = cloud.points();
    let tau2 = tau * tau;
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sq_dist(x.row(i), x.row(j));
            if d2 <= tau2 {
                let d = d2.sqrt();
                edges.push((i, j, d));
                adjacency[i].push((j, d));
                adjacency[j].push((i, d));
            }
        }
    }
    Ok(EpsilonGraph {
        n,
        threshold: tau,
        edges,
        adjacency,
    })
}

/// Per-point neighbour counts inside the ball of radius `sqrt(2 eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCounts {
    pub counts: Vec<usize>,
    pub median: f64,
}

pub fn median_usize(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// `N_i = #{j : |X_i - X_j| <= sqrt(2 eps)}`, the point itself included.
pub fn neighbor_counts(cloud: &PointCloud, epsilon: f64) -> Result<NeighborCounts> {
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("bandwidth must be positive, got {epsilon}")));
    }
    let n = cloud.n();
    let x = cloud.points();
    let r2 = 2.0 * epsilon;
    let mut counts = vec![1usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if sq_dist(x.row(i), x.row(j)) <= r2 {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    let median = median_usize(&counts);
    Ok(NeighborCounts { counts, median })
}

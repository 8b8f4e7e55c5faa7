//! Bandwidth selection: bootstrap signal-to-noise ratio, neighbourhood size and
//! minimal spanning tree rules.

use ndarray::{Array1, ArrayView1};
use rand::Rng as _;

use crate::eigen::{decompose_with, EigenSolver};
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, median_usize, sq_dist};
use crate::markov::build_markov;
use crate::nystrom::{extend_eigenvector, ExtensionQuery};
use crate::pointcloud::PointCloud;
use crate::rng;

/// Default SNR threshold `K_n`.
pub const DEFAULT_SNR_THRESHOLD: f64 = 5.0;

/// `K_n = C n^(2 / (d + 8))`.
pub fn scaling_threshold(c: f64, n: usize, dim: usize) -> f64 {
    c * (n as f64).powf(2.0 / (dim as f64 + 8.0))
}

/// `|mean|^2`, the replicate spread `xi^2` and the resulting SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrStats {
    pub signal: f64,
    pub noise: f64,
    /// `f64::INFINITY` when the replicates coincide and the mean is nonzero.
    pub snr: f64,
}

fn weighted_sq_norm(v: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    v.iter().zip(w.iter()).map(|(a, b)| b * a * a).sum()
}

/// Flips every replicate whose weighted inner product with the first is negative.
pub fn align_signs(replicates: &mut [Array1<f64>], weights: ArrayView1<'_, f64>) {
    let Some((first, rest)) = replicates.split_first_mut() else {
        return;
    };
    for r in rest {
        let ip: f64 = r
            .iter()
            .zip(first.iter())
            .zip(weights.iter())
            .map(|((a, b), w)| w * a * b)
            .sum();
        if ip < 0.0 {
            r.mapv_inplace(|v| -v);
        }
    }
}

/// `SNR = sqrt((|mean|^2 - xi^2)_+ / xi^2)` with `xi^2 = (1/B) sum_b |r_b - mean|^2`,
/// all norms weighted by `weights`. Replicates must already be sign-aligned.
pub fn snr_statistic(replicates: &[Array1<f64>], weights: ArrayView1<'_, f64>) -> SnrStats {
    let b = replicates.len() as f64;
    let mut mean = Array1::zeros(weights.len());
    for r in replicates {
        mean += r;
    }
    mean /= b;
    let signal = weighted_sq_norm(mean.view(), weights);
    let noise = replicates
        .iter()
        .map(|r| weighted_sq_norm((r - &mean).view(), weights))
        .sum::<f64>()
        / b;
    let snr = if noise > 0.0 {
        ((signal - noise).max(0.0) / noise).sqrt()
    } else if signal > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    SnrStats { signal, noise, snr }
}

/// SNR as a function of bandwidth for one eigenvector (or its sign pattern).
#[derive(Debug, Clone)]
pub struct SnrCurve {
    pub epsilons: Vec<f64>,
    pub snr: Vec<f64>,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    /// Some replicate at this bandwidth had a degenerate eigenvalue at `ell`.
    pub degenerate: Vec<bool>,
    pub replicates: usize,
    pub ell: usize,
    pub threshold: f64,
    pub selected: Option<f64>,
    pub nodal: bool,
    pub warnings: Vec<String>,
}

/// Bootstrap SNR of `psi_ell` over a bandwidth grid.
pub fn bootstrap_snr(
    cloud: &PointCloud,
    ell: usize,
    grid: &[f64],
    replicates: usize,
    threshold: f64,
    seed: u64,
) -> Result<SnrCurve> {
    bootstrap(cloud, ell, grid, replicates, threshold, seed, false)
}

/// Bootstrap SNR of the nodal map `sign(psi_ell)` over a bandwidth grid.
pub fn bootstrap_snr_nodal(
    cloud: &PointCloud,
    ell: usize,
    grid: &[f64],
    replicates: usize,
    threshold: f64,
    seed: u64,
) -> Result<SnrCurve> {
    bootstrap(cloud, ell, grid, replicates, threshold, seed, true)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("bandwidth grid is empty"));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::param("bandwidths must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("bandwidth grid must be strictly increasing"));
    }
    Ok(())
}

fn bootstrap(
    cloud: &PointCloud,
    ell: usize,
    grid: &[f64],
    replicates: usize,
    threshold: f64,
    seed: u64,
    nodal: bool,
) -> Result<SnrCurve> {
    check_grid(grid)?;
    if replicates < 2 {
        return Err(Error::param("at least two bootstrap replicates are required"));
    }
    let n = cloud.n();
    if ell + 1 > n {
        return Err(Error::param(format!("eigenvector {ell} needs more than {n} points")));
    }
    if !(threshold >= 0.0) {
        return Err(Error::param("SNR threshold must be nonnegative"));
    }
    let solver = if n > 300 {
        EigenSolver::lanczos()
    } else {
        EigenSolver::Dense
    };
    let query = ExtensionQuery::from_cloud(cloud);
    let mut curve = SnrCurve {
        epsilons: grid.to_vec(),
        snr: Vec::with_capacity(grid.len()),
        signal: Vec::with_capacity(grid.len()),
        noise: Vec::with_capacity(grid.len()),
        degenerate: Vec::with_capacity(grid.len()),
        replicates,
        ell,
        threshold,
        selected: None,
        nodal,
        warnings: Vec::new(),
    };
    for (e, &eps) in grid.iter().enumerate() {
        let weights = build_markov(&build_kernel(cloud, eps)?)?.stationary;
        let mut reps = Vec::with_capacity(replicates);
        let mut degenerate = false;
        for b in 0..replicates {
            let mut rng = rng::stream(seed, &[e as u64, b as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = cloud.select(&idx);
            let model = build_markov(&build_kernel(&sample, eps)?)?;
            let dec = decompose_with(&model, ell + 1, solver)?;
            degenerate |= dec.is_degenerate(ell);
            let mut ext = extend_eigenvector(&sample, &dec, ell, &query)?;
            if nodal {
                ext.mapv_inplace(sign);
            }
            reps.push(ext);
        }
        align_signs(&mut reps, weights.view());
        let stats = snr_statistic(&reps, weights.view());
        if degenerate {
            curve.warnings.push(format!(
                "eps = {eps}: eigenvalue {ell} is degenerate in some replicates; the eigenvector is not identifiable"
            ));
        }
        curve.snr.push(stats.snr);
        curve.signal.push(stats.signal);
        curve.noise.push(stats.noise);
        curve.degenerate.push(degenerate);
    }
    curve.selected = grid
        .iter()
        .zip(&curve.snr)
        .find(|(_, s)| **s >= threshold)
        .map(|(e, _)| *e);
    Ok(curve)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Median neighbour count at each grid bandwidth and the selected one.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSelection {
    pub epsilons: Vec<f64>,
    pub medians: Vec<f64>,
    pub k: usize,
    pub selected: Option<f64>,
}

/// Smallest grid bandwidth whose median neighbour count within `sqrt(2 eps)`
/// (self included) reaches `k`.
pub fn neighborhood_rule(cloud: &PointCloud, grid: &[f64], k: usize) -> Result<NeighborhoodSelection> {
    check_grid(grid)?;
    if k == 0 {
        return Err(Error::param("target neighbour count must be at least 1"));
    }
    let n = cloud.n();
    let x = cloud.points();
    let radii: Vec<f64> = grid.iter().map(|e| 2.0 * e).collect();
    // counts[g][i]: neighbours of i within the g-th radius
    let mut counts = vec![vec![1usize; n]; grid.len()];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sq_dist(x.row(i), x.row(j));
            let first = radii.partition_point(|r| *r < d2);
            for c in &mut counts[first..] {
                c[i] += 1;
                c[j] += 1;
            }
        }
    }
    let medians: Vec<f64> = counts.iter().map(|c| median_usize(c)).collect();
    let selected = grid
        .iter()
        .zip(&medians)
        .find(|(_, m)| **m >= k as f64)
        .map(|(e, _)| *e);
    Ok(NeighborhoodSelection {
        epsilons: grid.to_vec(),
        medians,
        k,
        selected,
    })
}

/// Longest edge `L` of the Euclidean minimal spanning tree and `eps = L^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MstSelection {
    pub longest_edge: f64,
    pub epsilon: f64,
    /// Tree edges `(parent, child, length)`.
    pub edges: Vec<(usize, usize, f64)>,
}

pub fn mst_rule(cloud: &PointCloud) -> Result<MstSelection> {
    let n = cloud.n();
    if n < 2 {
        return Err(Error::param("the spanning-tree rule needs at least two points"));
    }
    let x = cloud.points();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if !in_tree[v] {
                let d2 = sq_dist(x.row(current), x.row(v));
                if d2 < best[v] {
                    best[v] = d2;
                    parent[v] = current;
                }
            }
        }
        let next = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("vertices remain");
        in_tree[next] = true;
        edges.push((parent[next], next, best[next].sqrt()));
        current = next;
    }
    let longest_edge = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    Ok(MstSelection {
        longest_edge,
        epsilon: longest_edge * longest_edge / 2.0,
        edges,
    })
}

//! k-means quantization in diffusion coordinates and the coarse-grained chain.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::{eigen_power, DiffusionEmbedding};
use crate::eigen::{decompose, dense_top};
use crate::error::{Error, Result};
use crate::kernel::sq_dist;
use crate::markov::{m_step, MarkovModel};
use crate::rng;

/// Default number of k-means restarts.
pub const DEFAULT_RESTARTS: usize = 10;

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone)]
pub struct Quantization {
    /// `k x q` cluster centres.
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    pub k: usize,
    /// Per cluster, the sample closest to its centre.
    pub representatives: Vec<usize>,
    /// `(1/n) sum_i |x_i - c(x_i)|^2`.
    pub distortion: f64,
    /// Distortion after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

impl Quantization {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn nearest(x: ArrayView1<'_, f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Distance-weighted seeding: each new centre is drawn with probability
/// proportional to the squared distance to the closest centre so far.
fn seed_centers(x: &Array2<f64>, k: usize, rng: &mut rng::Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > u && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

struct Run {
    centers: Array2<f64>,
    assignment: Vec<usize>,
    distortion: f64,
    history: Vec<f64>,
}

fn lloyd(x: &Array2<f64>, k: usize, rng: &mut rng::Rng) -> Result<Run> {
    let n = x.nrows();
    let mut centers = seed_centers(x, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(x.row(i), &centers);
            if c != assignment[i] {
                changed = true;
                assignment[i] = c;
            }
            dist[i] = d;
        }
        // an empty cluster takes over the point farthest from its own centre
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignment[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                .filter(|&i| dist[i] > 0.0)
                .ok_or_else(|| Error::param(format!("fewer than k = {k} distinct points")))?;
            sizes[assignment[far]] -= 1;
            sizes[c] = 1;
            assignment[far] = c;
            dist[far] = 0.0;
            centers.row_mut(c).assign(&x.row(far));
            changed = true;
        }
        history.push(dist.iter().sum::<f64>() / n as f64);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        for (i, &a) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += &x.row(i);
        }
        for c in 0..k {
            let mut row = sums.row_mut(c);
            row /= sizes[c] as f64;
        }
        centers = sums;
    }
    let distortion = *history.last().expect("at least one iteration");
    Ok(Run {
        centers,
        assignment,
        distortion,
        history,
    })
}

/// k-means in diffusion coordinates; the best of `restarts` seeded runs.
pub fn kmeans_diffusion(
    embedding: &DiffusionEmbedding,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Quantization> {
    kmeans(&embedding.coords, k, seed, restarts)
}

/// k-means on the rows of `x`.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<Quantization> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::param(format!("cluster count must be in 1..={n}, got {k}")));
    }
    if restarts == 0 {
        return Err(Error::param("at least one restart is required"));
    }
    let mut best: Option<Run> = None;
    for r in 0..restarts {
        let mut rng = rng::stream(seed, &[r as u64]);
        let run = lloyd(x, k, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.distortion < b.distortion) {
            best = Some(run);
        }
    }
    let run = best.expect("restarts > 0");
    let representatives = (0..k)
        .map(|c| {
            (0..n)
                .filter(|&i| run.assignment[i] == c)
                .min_by(|&a, &b| {
                    sq_dist(x.row(a), run.centers.row(c)).total_cmp(&sq_dist(x.row(b), run.centers.row(c)))
                })
                .expect("clusters are nonempty")
        })
        .collect();
    Ok(Quantization {
        centers: run.centers,
        assignment: run.assignment,
        k,
        representatives,
        distortion: run.distortion,
        history: run.history,
    })
}

/// Chain over clusters: `T(c, c') = sum_{i in c, j in c'} s_i A^m(i, j) / sum_{i in c} s_i`.
#[derive(Debug, Clone)]
pub struct CoarseChain {
    pub transition: Array2<f64>,
    /// Stationary mass of each cluster.
    pub masses: Array1<f64>,
    pub m: u64,
}

impl CoarseChain {
    pub fn k(&self) -> usize {
        self.masses.len()
    }

    /// Eigenvalues in descending order, through the symmetric conjugate
    /// `diag(sqrt(mass)) T diag(1/sqrt(mass))`.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let k = self.k();
        let root = self.masses.mapv(f64::sqrt);
        let mut sym = Array2::zeros((k, k));
        for a in 0..k {
            for b in a..k {
                let v = 0.5
                    * (root[a] * self.transition[[a, b]] / root[b]
                        + root[b] * self.transition[[b, a]] / root[a]);
                sym[[a, b]] = v;
                sym[[b, a]] = v;
            }
        }
        Ok(dense_top(&sym, k)?.0)
    }
}

pub fn coarse_chain(model: &MarkovModel, quant: &Quantization, m: u64) -> Result<CoarseChain> {
    let n = model.n();
    if quant.assignment.len() != n {
        return Err(Error::param("quantization does not cover the model's points"));
    }
    let k = quant.k;
    let am = m_step(model, m);
    let s = &model.stationary;
    let mut masses = Array1::<f64>::zeros(k);
    for (i, &c) in quant.assignment.iter().enumerate() {
        masses[c] += s[i];
    }
    // column aggregation, then stationary-weighted row aggregation
    let mut cols = Array2::<f64>::zeros((n, k));
    for j in 0..n {
        let c = quant.assignment[j];
        let mut col = cols.column_mut(c);
        col += &am.column(j);
    }
    let mut transition = Array2::<f64>::zeros((k, k));
    for i in 0..n {
        let c = quant.assignment[i];
        let mut row = transition.row_mut(c);
        row.scaled_add(s[i], &cols.row(i));
    }
    for c in 0..k {
        let mut row = transition.row_mut(c);
        row /= masses[c];
    }
    Ok(CoarseChain {
        transition,
        masses,
        m,
    })
}

/// `|lambda_l(coarse) - lambda_l(fine)^m| / lambda_l(fine)^m` for `l = 1..=j`.
pub fn spectral_fidelity(model: &MarkovModel, coarse: &CoarseChain, j: usize) -> Result<Vec<f64>> {
    if j >= coarse.k() {
        return Err(Error::param(format!(
            "a {}-state chain has no eigenvalue {j}",
            coarse.k()
        )));
    }
    let fine = decompose(model, j)?;
    let coarse_values = coarse.eigenvalues()?;
    Ok((1..=j)
        .map(|l| {
            let f = eigen_power(fine.eigenvalues[l], coarse.m);
            (coarse_values[l] - f).abs() / f.abs()
        })
        .collect())
}

/// Parameters of the document-word pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordsPreset {
    pub epsilon: f64,
    pub snr_cutoff: f64,
    pub m: u64,
    pub q: usize,
    pub k: usize,
}

impl Default for WordsPreset {
    fn default() -> Self {
        WordsPreset {
            epsilon: 150.0,
            snr_cutoff: 2.0,
            m: 3,
            q: 12,
            k: 100,
        }
    }
}

/// Mean of the rows assigned to each cluster; for tests and diagnostics.
pub fn cluster_means(x: &Array2<f64>, assignment: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        let mut row = sums.row_mut(a);
        row += &x.row(i);
    }
    for (c, n) in counts.iter().enumerate() {
        if *n > 0 {
            let mut row = sums.row_mut(c);
            row /= *n as f64;
        }
    }
    sums
}

/// Total variance `(1/n) sum_i |x_i - mean|^2`.
pub fn total_variance(x: &Array2<f64>) -> f64 {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    x.rows().into_iter().map(|r| sq_dist(r, mean.view())).sum::<f64>() / x.nrows() as f64
}

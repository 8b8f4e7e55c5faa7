//! Shortest-path distances on neighbourhood graphs and the noisy spiral
//! experiments comparing them with diffusion distances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::diffusion::diffusion_distance_direct;
use crate::error::{Error, Result};
use crate::kernel::{build_kernel_with, epsilon_graph, sq_dist, EpsilonGraph, KernelKind};
use crate::markov::build_markov;
use crate::pointcloud::{generate, spiral_point, Distribution, GeneratorSpec, PointCloud};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicResult {
    /// `f64::INFINITY` when the vertices are not connected.
    pub distance: f64,
    /// Vertex sequence from `a` to `b`; empty when disconnected.
    pub path: Vec<usize>,
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra shortest path from `a` to `b`.
pub fn graph_distance(graph: &EpsilonGraph, a: usize, b: usize) -> Result<GeodesicResult> {
    let n = graph.n;
    if a >= n || b >= n {
        return Err(Error::param(format!("vertex out of range for a graph of {n} vertices")));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[a] = 0.0;
    heap.push(Entry { dist: 0.0, vertex: a });
    while let Some(Entry { dist: d, vertex: v }) = heap.pop() {
        if v == b {
            break;
        }
        if d > dist[v] {
            continue;
        }
        for &(w, len) in graph.neighbors(v) {
            let nd = d + len;
            if nd < dist[w] {
                dist[w] = nd;
                prev[w] = v;
                heap.push(Entry { dist: nd, vertex: w });
            }
        }
    }
    if !dist[b].is_finite() {
        return Ok(GeodesicResult {
            distance: f64::INFINITY,
            path: Vec::new(),
            connected: false,
        });
    }
    let mut path = vec![b];
    let mut v = b;
    while v != a {
        v = prev[v];
        path.push(v);
    }
    path.reverse();
    Ok(GeodesicResult {
        distance: dist[b],
        path,
        connected: true,
    })
}

/// Reference points `A` (at `t = pi / 2b`) and `B` (at `t = 5 pi / 2b`).
pub fn spiral_references(a: f64, b: f64) -> ([f64; 2], [f64; 2]) {
    (
        spiral_point(a, b, PI / (2.0 * b)),
        spiral_point(a, b, 5.0 * PI / (2.0 * b)),
    )
}

/// Arc length of the spiral between parameters `t0 < t1` (composite Simpson).
pub fn spiral_arc_length(a: f64, b: f64, t0: f64, t1: f64) -> f64 {
    let speed = |t: f64| {
        let r = t.powf(a);
        let dr = a * t.powf(a - 1.0);
        (dr * dr + (r * b) * (r * b)).sqrt()
    };
    let steps = 20_000;
    let h = (t1 - t0) / steps as f64;
    let mut acc = speed(t0) + speed(t1);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * speed(t0 + i as f64 * h);
    }
    acc * h / 3.0
}

/// Index of the sample closest to `target`.
pub fn nearest_sample(cloud: &PointCloud, target: &[f64]) -> usize {
    let t = ndarray::ArrayView1::from(target);
    (0..cloud.n())
        .min_by(|&i, &j| {
            sq_dist(cloud.point(i), t).total_cmp(&sq_dist(cloud.point(j), t))
        })
        .expect("nonempty cloud")
}

/// Settings of the noise-sensitivity experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub tau: f64,
    pub n: usize,
    pub reps: usize,
    /// Noiseless realizations averaged into the baseline distances.
    pub baseline_reps: usize,
    /// Diffusion steps.
    pub m: u64,
    pub seed: u64,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            a: 0.8,
            b: 10.0,
            beta: 0.09,
            tau: 0.15,
            n: 800,
            reps: 100,
            baseline_reps: 100,
            m: 50,
            seed: 0,
            t_min: None,
            t_max: None,
        }
    }
}

/// Geodesic and diffusion distance between the samples nearest `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationDistances {
    pub geodesic: f64,
    pub diffusion: f64,
    pub connected: bool,
}

/// Histogram bin width on the relative-change scale.
pub const HISTOGRAM_BIN: f64 = 0.02;

/// Sample moments and histogram modes of relative changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Centres of histogram bins (width [`HISTOGRAM_BIN`]) holding at least three
    /// values and at least as many as every bin within 0.1 on either side.
    pub modes: Vec<f64>,
    /// Fraction of values below `-0.5`.
    pub shortcut_fraction: f64,
}

impl ChangeSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count.max(1) as f64;
        let variance = if count > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let shortcut_fraction =
            values.iter().filter(|v| **v < -0.5).count() as f64 / count.max(1) as f64;
        ChangeSummary {
            count,
            mean,
            variance,
            modes: histogram_modes(values, HISTOGRAM_BIN, 5, 3),
            shortcut_fraction,
        }
    }
}

/// Bin centres that are maxima over `window` bins on each side and hold at
/// least `min_count` values. Plateaus report their first bin.
pub fn histogram_modes(values: &[f64], bin: f64, window: usize, min_count: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let index = |v: f64| ((v - lo) / bin).floor() as usize;
    let bins = index(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)) + 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[index(v)] += 1;
    }
    let mut modes = Vec::new();
    for i in 0..bins {
        if counts[i] < min_count {
            continue;
        }
        let from = i.saturating_sub(window);
        let to = (i + window).min(bins - 1);
        let left_ok = (from..i).all(|j| counts[j] < counts[i]);
        let right_ok = (i + 1..=to).all(|j| counts[j] <= counts[i]);
        if left_ok && right_ok {
            modes.push(lo + (i as f64 + 0.5) * bin);
        }
    }
    modes
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub config: SensitivityConfig,
    pub baseline_geodesic: f64,
    pub baseline_diffusion: f64,
    pub baseline_disconnected: usize,
    pub realizations: Vec<RealizationDistances>,
    /// Relative changes against the baselines, connected realizations only.
    pub geodesic_change: Vec<f64>,
    pub diffusion_change: Vec<f64>,
    pub disconnected: usize,
    pub geodesic_summary: ChangeSummary,
    pub diffusion_summary: ChangeSummary,
}

fn spiral_cloud(a: f64, b: f64, beta: f64, t_min: Option<f64>, t_max: Option<f64>, n: usize, seed: u64) -> Result<PointCloud> {
    let spec = GeneratorSpec::new(Distribution::Spiral { a, b, beta, t_min, t_max }, seed);
    generate(&spec, n)
}

fn realization(cfg: &SensitivityConfig, beta: f64, seed: u64) -> Result<RealizationDistances> {
    let cloud = spiral_cloud(cfg.a, cfg.b, beta, cfg.t_min, cfg.t_max, cfg.n, seed)?;
    let (ref_a, ref_b) = spiral_references(cfg.a, cfg.b);
    let ia = nearest_sample(&cloud, &ref_a);
    let ib = nearest_sample(&cloud, &ref_b);
    let graph = epsilon_graph(&cloud, cfg.tau)?;
    let geo = graph_distance(&graph, ia, ib)?;
    let kind = KernelKind::Binary {
        tau: cfg.tau,
        self_loops: true,
    };
    let model = build_markov(&build_kernel_with(&cloud, cfg.tau, kind)?)?;
    let diffusion = diffusion_distance_direct(&model, cfg.m, ia, ib)?;
    Ok(RealizationDistances {
        geodesic: geo.distance,
        diffusion,
        connected: geo.connected,
    })
}

fn validate_spiral(a: f64, b: f64, beta: f64, tau: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::param("spiral parameters a and b must be positive"));
    }
    if !(beta >= 0.0) {
        return Err(Error::param("noise mean must be nonnegative"));
    }
    if !(tau > 0.0) {
        return Err(Error::param("graph threshold must be positive"));
    }
    Ok(())
}

/// Relative change of geodesic and diffusion distances under noise, against
/// the mean over noiseless realizations.
pub fn spiral_sensitivity_experiment(cfg: &SensitivityConfig) -> Result<SensitivityResult> {
    validate_spiral(cfg.a, cfg.b, cfg.beta, cfg.tau)?;
    if cfg.n < 2 || cfg.reps == 0 || cfg.baseline_reps == 0 {
        return Err(Error::param("need n >= 2 and at least one realization"));
    }
    let mut base_geo = Vec::new();
    let mut base_diff = Vec::new();
    let mut baseline_disconnected = 0;
    for r in 0..cfg.baseline_reps {
        let d = realization(cfg, 0.0, derive_seed(cfg.seed, &[0, r as u64]))?;
        if d.connected {
            base_geo.push(d.geodesic);
            base_diff.push(d.diffusion);
        } else {
            baseline_disconnected += 1;
        }
    }
    if base_geo.is_empty() {
        return Err(Error::param("every noiseless realization is disconnected; increase tau or n"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let baseline_geodesic = mean(&base_geo);
    let baseline_diffusion = mean(&base_diff);
    let mut realizations = Vec::with_capacity(cfg.reps);
    let mut geodesic_change = Vec::new();
    let mut diffusion_change = Vec::new();
    for r in 0..cfg.reps {
        let d = realization(cfg, cfg.beta, derive_seed(cfg.seed, &[1, r as u64]))?;
        if d.connected {
            geodesic_change.push((d.geodesic - baseline_geodesic) / baseline_geodesic);
            diffusion_change.push((d.diffusion - baseline_diffusion) / baseline_diffusion);
        }
        realizations.push(d);
    }
    let disconnected = realizations.iter().filter(|d| !d.connected).count();
    Ok(SensitivityResult {
        config: cfg.clone(),
        baseline_geodesic,
        baseline_diffusion,
        baseline_disconnected,
        realizations,
        geodesic_summary: ChangeSummary::from_values(&geodesic_change),
        diffusion_summary: ChangeSummary::from_values(&diffusion_change),
        geodesic_change,
        diffusion_change,
        disconnected,
    })
}

/// Settings of the sample-size consistency experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub tau: f64,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            a: 0.8,
            b: 10.0,
            beta: 0.09,
            tau: 0.1,
            sizes: vec![600, 2000, 4000],
            reps: 100,
            seed: 0,
            t_min: None,
            t_max: None,
        }
    }
}

/// Geodesic distances for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    pub n: usize,
    /// Connected realizations only.
    pub distances: Vec<f64>,
    pub disconnected: usize,
    pub mean: f64,
    /// Fraction of distances closer to the manifold distance than to the
    /// Euclidean one.
    pub manifold_fraction: f64,
}

impl SizeDistribution {
    pub fn closer_to_manifold(&self, manifold: f64, euclidean: f64) -> bool {
        (self.mean - manifold).abs() < (self.mean - euclidean).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub config: ConsistencyConfig,
    /// Arc length between the reference points.
    pub manifold_distance: f64,
    pub euclidean_distance: f64,
    pub per_size: Vec<SizeDistribution>,
}

pub fn spiral_consistency_experiment(cfg: &ConsistencyConfig) -> Result<ConsistencyResult> {
    validate_spiral(cfg.a, cfg.b, cfg.beta, cfg.tau)?;
    if cfg.reps == 0 || cfg.sizes.iter().any(|&n| n < 2) {
        return Err(Error::param("need sample sizes >= 2 and at least one realization"));
    }
    let (ref_a, ref_b) = spiral_references(cfg.a, cfg.b);
    let manifold_distance = spiral_arc_length(cfg.a, cfg.b, PI / (2.0 * cfg.b), 5.0 * PI / (2.0 * cfg.b));
    let euclidean_distance = ((ref_a[0] - ref_b[0]).powi(2) + (ref_a[1] - ref_b[1]).powi(2)).sqrt();
    let mut per_size = Vec::with_capacity(cfg.sizes.len());
    for (s, &n) in cfg.sizes.iter().enumerate() {
        let mut distances = Vec::with_capacity(cfg.reps);
        let mut disconnected = 0;
        for r in 0..cfg.reps {
            let seed = derive_seed(cfg.seed, &[s as u64, r as u64]);
            let cloud = spiral_cloud(cfg.a, cfg.b, cfg.beta, cfg.t_min, cfg.t_max, n, seed)?;
            let ia = nearest_sample(&cloud, &ref_a);
            let ib = nearest_sample(&cloud, &ref_b);
            let geo = graph_distance(&epsilon_graph(&cloud, cfg.tau)?, ia, ib)?;
            if geo.connected {
                distances.push(geo.distance);
            } else {
                disconnected += 1;
            }
        }
        let count = distances.len().max(1) as f64;
        let mean = if distances.is_empty() {
            f64::NAN
        } else {
            distances.iter().sum::<f64>() / count
        };
        let manifold_fraction = distances
            .iter()
            .filter(|d| (**d - manifold_distance).abs() < (**d - euclidean_distance).abs())
            .count() as f64
            / count;
        per_size.push(SizeDistribution {
            n,
            distances,
            disconnected,
            mean,
            manifold_fraction,
        });
    }
    Ok(ConsistencyResult {
        config: cfg.clone(),
        manifold_distance,
        euclidean_distance,
        per_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn trivial_and_collinear_paths() {
        let cloud = PointCloud::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let g = epsilon_graph(&cloud, 1.5).unwrap();
        let same = graph_distance(&g, 1, 1).unwrap();
        assert_eq!(same.distance, 0.0);
        assert_eq!(same.path, vec![1]);
        let r = graph_distance(&g, 0, 2).unwrap();
        assert_eq!(r.distance, 2.0);
        assert_eq!(r.path, vec![0, 1, 2]);
        let cut = graph_distance(&epsilon_graph(&cloud, 0.5).unwrap(), 0, 2).unwrap();
        assert!(!cut.connected && cut.distance.is_infinite() && cut.path.is_empty());
        assert!(graph_distance(&g, 0, 3).is_err());
    }

    #[test]
    fn complete_graph_gives_euclidean_distance() {
        let cloud = PointCloud::new(array![[0.0, 0.0], [1.0, 0.2], [0.3, 2.0], [3.0, 4.0]]).unwrap();
        let g = epsilon_graph(&cloud, 100.0).unwrap();
        let r = graph_distance(&g, 0, 3).unwrap();
        assert!((r.distance - 5.0).abs() < 1e-12);
        assert_eq!(r.path, vec![0, 3]);
    }

    #[test]
    fn reference_geometry() {
        let (a, b) = spiral_references(0.8, 10.0);
        let euclid = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        assert!((euclid - 0.60).abs() < 0.01);
        let arc = spiral_arc_length(0.8, 10.0, PI / 20.0, 5.0 * PI / 20.0);
        assert!((arc - 3.46).abs() < 0.02, "{arc}");
    }

    #[test]
    fn noiseless_spiral_follows_the_curve() {
        let cfg = ConsistencyConfig {
            beta: 0.0,
            sizes: vec![800],
            reps: 3,
            ..Default::default()
        };
        let res = spiral_consistency_experiment(&cfg).unwrap();
        let d = &res.per_size[0];
        assert_eq!(d.disconnected, 0);
        assert!((d.mean - 3.46).abs() <= 0.346);
    }

    #[test]
    fn noiseless_sensitivity_has_no_change() {
        let cfg = SensitivityConfig {
            beta: 0.0,
            reps: 3,
            baseline_reps: 3,
            n: 300,
            ..Default::default()
        };
        let res = spiral_sensitivity_experiment(&cfg).unwrap();
        assert!(res.geodesic_change.iter().sum::<f64>().abs() < 0.05);
        assert!(res.geodesic_summary.mean.abs() < 0.05);
    }

    #[test]
    fn histogram_modes_find_two_peaks() {
        let mut v = vec![-0.75; 10];
        v.extend(vec![-0.15; 20]);
        v.extend([-0.5, 0.1, 0.3]);
        let modes = histogram_modes(&v, 0.02, 5, 3);
        assert_eq!(modes.len(), 2);
        assert!((modes[0] + 0.75).abs() < 0.02 && (modes[1] + 0.15).abs() < 0.02);
        let s = ChangeSummary::from_values(&v);
        assert!((s.shortcut_fraction - 10.0 / 33.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn triangle_inequality_and_monotone_in_threshold(
            xs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..25),
            tau in 0.5f64..3.0,
        ) {
            let n = xs.len();
            let pts = ndarray::Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { xs[i].0 } else { xs[i].1 });
            let cloud = PointCloud::new(pts).unwrap();
            let g = epsilon_graph(&cloud, tau).unwrap();
            let g2 = epsilon_graph(&cloud, tau * 1.5).unwrap();
            let d = |g: &EpsilonGraph, a, b| graph_distance(g, a, b).unwrap().distance;
            for (a, b, c) in [(0, 1, 2), (n - 1, 0, 1)] {
                prop_assert!(d(&g, a, c) <= (d(&g, a, b) + d(&g, b, c)) * (1.0 + 1e-14));
                prop_assert!(d(&g2, a, c) <= d(&g, a, c));
                let r = graph_distance(&g, a, c).unwrap();
                if r.connected {
                    let straight = sq_dist(cloud.point(a), cloud.point(c)).sqrt();
                    prop_assert!(r.distance >= straight - 1e-12);
                    let sum: f64 = r.path.windows(2).map(|w| sq_dist(cloud.point(w[0]), cloud.point(w[1])).sqrt()).collect::<Vec<_>>().iter().sum();
                    prop_assert!((sum - r.distance).abs() <= 1e-12 * (1.0 + sum));
                    prop_assert!(r.path.windows(2).all(|w| sq_dist(cloud.point(w[0]), cloud.point(w[1])).sqrt() <= tau));
                }
            }
        }
    }
}

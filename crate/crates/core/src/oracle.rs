//! One-dimensional quadrature ground truth.
//!
//! A known density is discretized on a uniform grid with weights
//! `w_i = p(x_i) dx`, and the population operator
//! `A f(x) = int k(x, y) f(y) dP(y) / int k(x, y) dP(y)` becomes the weighted
//! Markov chain `A(i, j) = k(x_i, x_j) w_j / sum_l k(x_i, x_l) w_l`. Its
//! eigenpairs approximate the population eigenfunctions at the chosen
//! bandwidth; at a small bandwidth they stand in for the limit `eps -> 0`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::diffusion::eigen_power;
use crate::eigen::{decompose_with, EigenSolver, SpectralDecomposition};
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, gaussian_kernel};
use crate::markov::{build_markov, MarkovModel};
use crate::nystrom::{extend_columns, ExtensionQuery};
use crate::pointcloud::{Component, PointCloud};
use crate::rng;

/// Bandwidth of the reference eigenfunctions.
pub const REFERENCE_EPSILON: f64 = 1e-3;
/// Grid size of the reference eigenfunctions.
pub const REFERENCE_GRID: usize = 4096;
/// Mixture grids extend this many standard deviations past every component mean.
pub const SPAN_SDS: f64 = 6.0;
/// Truncated mass above which a warning is recorded.
pub const TRUNCATION_WARNING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// Analytic one-dimensional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    GaussianMixture { components: Vec<Component> },
    UniformSegments { segments: Vec<Segment> },
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

/// `P(Z > z)` for a standard normal.
fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

impl Density {
    /// `0.5 N(-2, 1) + 0.5 N(2, 1)`.
    pub fn two_gaussians() -> Self {
        Density::GaussianMixture {
            components: vec![component(-2.0, 1.0, 0.5), component(2.0, 1.0, 0.5)],
        }
    }

    /// Two nearby clusters and a distant third.
    pub fn three_gaussians() -> Self {
        Density::GaussianMixture {
            components: vec![
                component(0.0, 0.5, 0.3),
                component(2.0, 0.5, 0.3),
                component(6.0, 0.8, 0.4),
            ],
        }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Density::UniformSegments {
            segments: vec![Segment { lo, hi, weight: 1.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights: Vec<f64> = match self {
            Density::GaussianMixture { components } => {
                for c in components {
                    if c.mean.len() != 1 {
                        return Err(Error::param("quadrature densities are one-dimensional"));
                    }
                    if !(c.sd > 0.0 && c.mean[0].is_finite()) {
                        return Err(Error::param("component sd must be positive"));
                    }
                }
                components.iter().map(|c| c.weight).collect()
            }
            Density::UniformSegments { segments } => {
                for s in segments {
                    if !(s.hi > s.lo && s.lo.is_finite() && s.hi.is_finite()) {
                        return Err(Error::param("segments need lo < hi"));
                    }
                }
                segments.iter().map(|s| s.weight).collect()
            }
        };
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::param("density needs at least one positive weight"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("density weights must sum to 1"));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Density::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * normal_pdf(x, c.mean[0], c.sd))
                .sum(),
            Density::UniformSegments { segments } => segments
                .iter()
                .filter(|s| x >= s.lo && x <= s.hi)
                .map(|s| s.weight / (s.hi - s.lo))
                .sum(),
        }
    }

    /// Grid span: component means +- 6 sd, or the union of the segments.
    pub fn span(&self) -> (f64, f64) {
        match self {
            Density::GaussianMixture { components } => {
                let lo = components
                    .iter()
                    .map(|c| c.mean[0] - SPAN_SDS * c.sd)
                    .fold(f64::INFINITY, f64::min);
                let hi = components
                    .iter()
                    .map(|c| c.mean[0] + SPAN_SDS * c.sd)
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            Density::UniformSegments { segments } => (
                segments.iter().map(|s| s.lo).fold(f64::INFINITY, f64::min),
                segments.iter().map(|s| s.hi).fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }

    /// Probability mass outside `[lo, hi]`.
    pub fn mass_outside(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Density::GaussianMixture { components } => components
                .iter()
                .map(|c| {
                    c.weight
                        * (normal_tail((c.mean[0] - lo) / c.sd) + normal_tail((hi - c.mean[0]) / c.sd))
                })
                .sum(),
            Density::UniformSegments { segments } => segments
                .iter()
                .map(|s| {
                    let inside = (s.hi.min(hi) - s.lo.max(lo)).max(0.0);
                    s.weight * (1.0 - inside / (s.hi - s.lo))
                })
                .sum(),
        }
    }

    /// `n` i.i.d. draws; labels record the component or segment.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PointCloud> {
        self.validate()?;
        let mut rng = rng::rng_from(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weights: Vec<f64> = match self {
            Density::GaussianMixture { components } => components.iter().map(|c| c.weight).collect(),
            Density::UniformSegments { segments } => segments.iter().map(|s| s.weight).collect(),
        };
        let mut xs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = i;
                    break;
                }
            }
            let x = match self {
                Density::GaussianMixture { components } => {
                    let z: f64 = std_normal.sample(&mut rng);
                    components[c].mean[0] + components[c].sd * z
                }
                Density::UniformSegments { segments } => rng.random_range(segments[c].lo..=segments[c].hi),
            };
            xs.push(x);
            labels.push(c as i64);
        }
        PointCloud::with_labels(Array2::from_shape_vec((n, 1), xs).expect("shape"), Some(labels))
    }
}

fn component(mean: f64, sd: f64, weight: f64) -> Component {
    Component {
        mean: vec![mean],
        sd,
        weight,
    }
}

/// Discretized population operator.
#[derive(Debug, Clone)]
pub struct QuadratureModel {
    /// Midpoints of the grid cells that carry positive density.
    pub grid: Array1<f64>,
    pub spacing: f64,
    /// `p(x_i) dx`, renormalized to sum to 1.
    pub weights: Array1<f64>,
    pub density: Density,
    pub epsilon: f64,
    pub chain: MarkovModel,
    /// Probability mass outside the grid span.
    pub truncated_mass: f64,
    pub warnings: Vec<String>,
}

impl QuadratureModel {
    /// The `G x G` operator matrix.
    pub fn operator(&self) -> &Array2<f64> {
        &self.chain.transition
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

pub fn quadrature_operator(density: &Density, epsilon: f64, grid_size: usize) -> Result<QuadratureModel> {
    density.validate()?;
    if grid_size < 100 {
        return Err(Error::param(format!("grid size must be at least 100, got {grid_size}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("bandwidth must be positive, got {epsilon}")));
    }
    let (lo, hi) = density.span();
    let spacing = (hi - lo) / grid_size as f64;
    let mut grid = Vec::with_capacity(grid_size);
    let mut mass = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let x = lo + (i as f64 + 0.5) * spacing;
        let p = density.pdf(x);
        // uniform segments: cells outside the support are dropped
        if p > 0.0 {
            grid.push(x);
            mass.push(p * spacing);
        }
    }
    let grid = Array1::from(grid);
    let total: f64 = mass.iter().sum();
    let weights = Array1::from(mass) / total;
    let g = grid.len();
    let mut kernel = Array2::zeros((g, g));
    for i in 0..g {
        for j in i..g {
            let d = grid[i] - grid[j];
            let v = gaussian_kernel(d * d, epsilon, 1);
            kernel[[i, j]] = v;
            kernel[[j, i]] = v;
        }
    }
    let chain = MarkovModel::from_weighted_kernel(&kernel, &weights, epsilon)?;
    let truncated_mass = density.mass_outside(lo, hi);
    let mut warnings = Vec::new();
    if truncated_mass > TRUNCATION_WARNING {
        warnings.push(format!(
            "grid [{lo}, {hi}] leaves probability mass {truncated_mass:.3e} outside"
        ));
    }
    Ok(QuadratureModel {
        grid,
        spacing,
        weights,
        density: density.clone(),
        epsilon,
        chain,
        truncated_mass,
        warnings,
    })
}

/// Reference eigenpairs on the quadrature grid.
#[derive(Debug, Clone)]
pub struct ReferenceSpectrum {
    pub grid: Array1<f64>,
    /// Quadrature weights of the grid points.
    pub weights: Array1<f64>,
    pub decomposition: SpectralDecomposition,
}

impl ReferenceSpectrum {
    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.decomposition.eigenvalues
    }

    pub fn psi(&self, ell: usize) -> ArrayView1<'_, f64> {
        self.decomposition.psi.column(ell)
    }

    /// Linear interpolation of `psi_ell` at `x`, constant beyond the grid ends.
    pub fn interpolate(&self, ell: usize, x: f64) -> f64 {
        interpolate(self.grid.view(), self.psi(ell), x)
    }
}

/// Piecewise-linear interpolation on an increasing grid.
pub fn interpolate(grid: ArrayView1<'_, f64>, values: ArrayView1<'_, f64>, x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    let k = grid.as_slice().map_or_else(
        || grid.iter().position(|g| *g > x).unwrap_or(n - 1),
        |s| s.partition_point(|g| *g <= x),
    );
    let (x0, x1) = (grid[k - 1], grid[k]);
    let u = (x - x0) / (x1 - x0);
    values[k - 1] * (1.0 - u) + values[k] * u
}

/// Eigendecomposition of the quadrature operator with the same normalization
/// (`sum_i s_i psi(x_i)^2 = 1`) and sign convention as the empirical one.
pub fn reference_eigenfunctions(model: &QuadratureModel, q: usize) -> Result<ReferenceSpectrum> {
    let solver = if model.len() > crate::eigen::DENSE_LIMIT && q < 64 {
        EigenSolver::Lanczos {
            max_dim: 1500,
            tol: 1e-13,
        }
    } else {
        EigenSolver::Dense
    };
    let decomposition = decompose_with(&model.chain, q, solver)?;
    Ok(ReferenceSpectrum {
        grid: model.grid.clone(),
        weights: model.weights.clone(),
        decomposition,
    })
}

/// Row `x0` of the `m`-step operator, `m = round(t / eps)`.
#[derive(Debug, Clone)]
pub struct DensityEvolution {
    pub t: f64,
    pub m: u64,
    /// Transition probabilities to each grid point; they sum to 1.
    pub probabilities: Array1<f64>,
    /// `probabilities / dx`.
    pub density: Array1<f64>,
}

impl DensityEvolution {
    /// Strict local maxima of the density above `floor * max`.
    pub fn mode_count(&self, floor: f64) -> usize {
        let d = &self.density;
        let top = d.iter().cloned().fold(0.0, f64::max);
        let n = d.len();
        (0..n)
            .filter(|&i| {
                d[i] > floor * top
                    && (i == 0 || d[i] > d[i - 1])
                    && (i + 1 == n || d[i] >= d[i + 1])
            })
            .count()
    }
}

/// `e_x0^T A^m` by repeated squaring (at most `2 log2(m)` products).
pub fn evolve_density(model: &QuadratureModel, t: f64, x0: usize) -> Result<DensityEvolution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param(format!("time must be nonnegative, got {t}")));
    }
    let g = model.len();
    if x0 >= g {
        return Err(Error::param(format!("start index {x0} outside a grid of {g}")));
    }
    let steps = (t / model.epsilon).round();
    if steps > u64::MAX as f64 / 2.0 {
        return Err(Error::param("time too large for the step count"));
    }
    let m = steps as u64;
    let mut row = Array1::zeros(g);
    row[x0] = 1.0;
    let a = model.operator();
    if m <= 64 {
        for _ in 0..m {
            row = a.t().dot(&row);
        }
    } else {
        let mut base = a.clone();
        let mut e = m;
        loop {
            if e & 1 == 1 {
                row = base.t().dot(&row);
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.dot(&base);
        }
    }
    let density = &row / model.spacing;
    Ok(DensityEvolution {
        t,
        m,
        probabilities: row,
        density,
    })
}

/// Grid probabilities proportional to `p(x)^2`, the large-time limit of every row.
pub fn squared_density_limit(model: &QuadratureModel) -> Array1<f64> {
    let p2 = model.grid.mapv(|x| model.density.pdf(x).powi(2));
    let total = p2.sum();
    p2 / total
}

/// `(1/2) sum_i |a_i - b_i|`.
pub fn total_variation(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Eigenpairs of an estimate evaluated on a quadrature grid.
#[derive(Debug, Clone)]
pub struct GridSpectrum {
    pub eigenvalues: Array1<f64>,
    /// `G x (q + 1)`.
    pub psi: Array2<f64>,
    pub epsilon: f64,
}

impl GridSpectrum {
    pub fn from_reference(reference: &ReferenceSpectrum) -> Self {
        GridSpectrum {
            eigenvalues: reference.decomposition.eigenvalues.clone(),
            psi: reference.decomposition.psi.clone(),
            epsilon: reference.decomposition.epsilon,
        }
    }

    pub fn order(&self) -> usize {
        self.eigenvalues.len() - 1
    }
}

/// Nyström extension of an empirical decomposition to the grid.
pub fn extend_to_grid(cloud: &PointCloud, dec: &SpectralDecomposition, model: &QuadratureModel) -> Result<GridSpectrum> {
    let query = ExtensionQuery::new(model.grid.clone().insert_axis(Axis(1)))?;
    let ells: Vec<usize> = (0..=dec.q).collect();
    Ok(GridSpectrum {
        eigenvalues: dec.eigenvalues.clone(),
        psi: extend_columns(cloud, dec, &ells, &query)?,
        epsilon: dec.epsilon,
    })
}

/// Default dictionary: the first 20 reference eigenfunctions and the monomials
/// of degree at most 3 in the rescaled grid coordinate.
pub fn default_dictionary(reference: &ReferenceSpectrum) -> Vec<Array1<f64>> {
    let mut dict: Vec<Array1<f64>> = (0..=reference.decomposition.q.min(19))
        .map(|l| reference.psi(l).to_owned())
        .collect();
    let (lo, hi) = (reference.grid[0], reference.grid[reference.grid.len() - 1]);
    let u = reference.grid.mapv(|x| 2.0 * (x - lo) / (hi - lo) - 1.0);
    for k in 0..=3 {
        dict.push(u.mapv(|v| v.powi(k)));
    }
    dict
}

/// Dictionary lower bound on an operator-norm loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    /// `max_f |(A_t^ref - A_t^est) f| / |f|`, a lower bound on the operator norm.
    pub value: f64,
    /// Dictionary index attaining the maximum.
    pub argmax: usize,
}

/// `sum_{l <= q} lambda_l^(t / eps) <psi_l, f> psi_l` with inner products weighted
/// by the grid stationary distribution `s`.
fn projector_sum(spec: &GridSpectrum, q: usize, t: f64, s: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> Array1<f64> {
    let power = t / spec.epsilon;
    let mut out = Array1::zeros(f.len());
    for l in 0..=q {
        let lambda = spec.eigenvalues[l];
        let factor = if (power - power.round()).abs() <= 1e-9 * power.max(1.0) && power.round() <= u64::MAX as f64 {
            eigen_power(lambda, power.round() as u64)
        } else {
            lambda.max(0.0).powf(power)
        };
        if factor == 0.0 {
            continue;
        }
        let psi = spec.psi.column(l);
        let coeff: f64 = psi.iter().zip(f.iter()).zip(s.iter()).map(|((a, b), w)| a * b * w).sum();
        out.scaled_add(factor * coeff, &psi);
    }
    out
}

/// Approximates `|A_t - A_t(eps, q, P_n)|` from below over a dictionary of
/// grid functions, with `L2(P)` norms from the quadrature weights. The
/// reference operator uses every eigenpair of `reference`.
pub fn estimate_loss(
    estimate: &GridSpectrum,
    reference: &ReferenceSpectrum,
    model: &QuadratureModel,
    t: f64,
    q: usize,
    dictionary: &[Array1<f64>],
) -> Result<LossEstimate> {
    if dictionary.is_empty() {
        return Err(Error::param("loss dictionary is empty"));
    }
    if q > estimate.order() {
        return Err(Error::param(format!(
            "order {q} exceeds the estimate's order {}",
            estimate.order()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::param("time must be nonnegative"));
    }
    let g = model.len();
    if estimate.psi.nrows() != g || dictionary.iter().any(|f| f.len() != g) {
        return Err(Error::param("functions must live on the quadrature grid"));
    }
    let s = reference.decomposition.stationary.view();
    let full = GridSpectrum::from_reference(reference);
    let norm = |v: &Array1<f64>| {
        v.iter()
            .zip(model.weights.iter())
            .map(|(a, w)| w * a * a)
            .sum::<f64>()
            .sqrt()
    };
    let mut best = LossEstimate {
        value: 0.0,
        argmax: 0,
    };
    for (idx, f) in dictionary.iter().enumerate() {
        let nf = norm(f);
        if nf == 0.0 {
            continue;
        }
        let r = projector_sum(&full, full.order(), t, s, f.view());
        let e = projector_sum(estimate, q, t, s, f.view());
        let v = norm(&(&r - &e)) / nf;
        if v > best.value {
            best = LossEstimate { value: v, argmax: idx };
        }
    }
    Ok(best)
}

/// `|psi_hat - psi_ref|` over the samples, weighted by the empirical stationary
/// distribution, after aligning the sign of the reference to the estimate.
pub fn eigenvector_error(cloud: &PointCloud, dec: &SpectralDecomposition, ell: usize, reference: &ReferenceSpectrum) -> Result<f64> {
    if cloud.dim() != 1 {
        return Err(Error::param("the quadrature reference is one-dimensional"));
    }
    if ell > dec.q || ell > reference.decomposition.q {
        return Err(Error::param(format!("eigenvector {ell} is not available")));
    }
    let s = &dec.stationary;
    let est = dec.psi.column(ell);
    let refv: Array1<f64> = (0..cloud.n()).map(|i| reference.interpolate(ell, cloud.point(i)[0])).collect();
    let ip: f64 = (0..cloud.n()).map(|i| s[i] * est[i] * refv[i]).sum();
    let sign = if ip < 0.0 { -1.0 } else { 1.0 };
    Ok((0..cloud.n())
        .map(|i| s[i] * (est[i] - sign * refv[i]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Eigenvector error over a bandwidth grid and several seeds.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub ell: usize,
    /// `errors[s][e]` for seed index `s` and bandwidth index `e`.
    pub errors: Vec<Vec<f64>>,
}

impl ConvergenceStudy {
    pub fn mean_curve(&self) -> Vec<f64> {
        mean_over_rows(&self.errors, &(0..self.errors.len()).collect::<Vec<_>>())
    }

    /// Index of the smallest mean error over the given seed rows.
    pub fn argmin_for(&self, rows: &[usize]) -> usize {
        let mean = mean_over_rows(&self.errors, rows);
        (0..mean.len())
            .min_by(|&a, &b| mean[a].total_cmp(&mean[b]))
            .expect("nonempty grid")
    }
}

fn mean_over_rows(errors: &[Vec<f64>], rows: &[usize]) -> Vec<f64> {
    let width = errors.first().map_or(0, |r| r.len());
    (0..width)
        .map(|e| rows.iter().map(|&r| errors[r][e]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// For each seed draws `n` points from `density`, fits every bandwidth and
/// records the error of `psi_ell` against `reference`.
pub fn convergence_study(
    density: &Density,
    n: usize,
    epsilons: &[f64],
    seeds: &[u64],
    ell: usize,
    reference: &ReferenceSpectrum,
) -> Result<ConvergenceStudy> {
    if epsilons.is_empty() || seeds.is_empty() {
        return Err(Error::param("need at least one bandwidth and one seed"));
    }
    let solver = if n > 300 { EigenSolver::lanczos() } else { EigenSolver::Dense };
    let mut errors = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cloud = density.sample(n, seed)?;
        let mut row = Vec::with_capacity(epsilons.len());
        for &eps in epsilons {
            let model = build_markov(&build_kernel(&cloud, eps)?)?;
            let dec = decompose_with(&model, ell, solver)?;
            row.push(eigenvector_error(&cloud, &dec, ell, reference)?);
        }
        errors.push(row);
    }
    Ok(ConvergenceStudy {
        epsilons: epsilons.to_vec(),
        seeds: seeds.to_vec(),
        n,
        ell,
        errors,
    })
}

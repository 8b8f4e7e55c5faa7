//! Diffusion maps, diffusion distances and the semigroup built from the spectrum.

use ndarray::{Array1, Array2, ArrayView1};

use crate::eigen::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::markov::MarkovModel;

/// Diffusion coordinates `(lambda_1^m psi_1, ..., lambda_q^m psi_q)` of every sample.
#[derive(Debug, Clone)]
pub struct DiffusionEmbedding {
    /// `n x q`; column `l - 1` holds `lambda_l^m psi_l`.
    pub coords: Array2<f64>,
    pub m: u64,
    pub q: usize,
    pub epsilon: f64,
    /// `lambda_1, ..., lambda_q`.
    pub eigenvalues: Array1<f64>,
}

impl DiffusionEmbedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }
}

/// `lambda^m` for a real eigenvalue and integer step count.
pub fn eigen_power(lambda: f64, m: u64) -> f64 {
    match i32::try_from(m) {
        Ok(e) => lambda.powi(e),
        Err(_) => lambda.powf(m as f64),
    }
}

pub fn embed(dec: &SpectralDecomposition, m: u64, q: usize) -> Result<DiffusionEmbedding> {
    if q > dec.q {
        return Err(Error::param(format!(
            "embedding dimension {q} exceeds decomposition order {}",
            dec.q
        )));
    }
    if m == 0 {
        return Err(Error::param("step count m must be at least 1"));
    }
    let n = dec.n();
    let scale: Vec<f64> = (1..=q).map(|l| eigen_power(dec.eigenvalues[l], m)).collect();
    let coords = Array2::from_shape_fn((n, q), |(i, c)| scale[c] * dec.psi[[i, c + 1]]);
    Ok(DiffusionEmbedding {
        coords,
        m,
        q,
        epsilon: dec.epsilon,
        eigenvalues: dec.eigenvalues.slice(ndarray::s![1..=q]).to_owned(),
    })
}

fn check_index(n: usize, i: usize) -> Result<()> {
    if i >= n {
        return Err(Error::param(format!("point index {i} out of range for n = {n}")));
    }
    Ok(())
}

/// `D_m(i, j)` from the first `q` nontrivial eigenpairs.
pub fn diffusion_distance_spectral(
    dec: &SpectralDecomposition,
    m: u64,
    i: usize,
    j: usize,
    q: usize,
) -> Result<f64> {
    check_index(dec.n(), i)?;
    check_index(dec.n(), j)?;
    if q > dec.q {
        return Err(Error::param(format!(
            "order {q} exceeds decomposition order {}",
            dec.q
        )));
    }
    let d2: f64 = (1..=q)
        .map(|l| {
            let diff = dec.psi[[i, l]] - dec.psi[[j, l]];
            eigen_power(dec.eigenvalues[l], m).powi(2) * diff * diff
        })
        .sum();
    Ok(d2.sqrt())
}

/// `D_m(i, j)^2 = sum_k (A^m(i, k) - A^m(j, k))^2 / s_k`, evaluated from the
/// transition rows themselves.
pub fn diffusion_distance_direct(model: &MarkovModel, m: u64, i: usize, j: usize) -> Result<f64> {
    check_index(model.n(), i)?;
    check_index(model.n(), j)?;
    if i == j {
        return Ok(0.0);
    }
    let rows = model.transition_rows(m, &[i, j]);
    Ok(row_distance(rows.row(0), rows.row(1), model.stationary.view()))
}

/// Weighted distance between two transition rows.
pub fn row_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, s: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(s.iter())
        .map(|((x, y), w)| (x - y) * (x - y) / w)
        .sum::<f64>()
        .sqrt()
}

/// `G_eps f = (A f - f) / eps`.
pub fn apply_generator(model: &MarkovModel, f: ArrayView1<'_, f64>, epsilon: f64) -> Result<Array1<f64>> {
    if f.len() != model.n() {
        return Err(Error::param("function length must match the number of points"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::param("bandwidth must be positive"));
    }
    let af = model.apply(f);
    Ok((&af - &f) / epsilon)
}

/// Output of [`apply_a_t`].
#[derive(Debug, Clone)]
pub struct SemigroupApplication {
    pub values: Array1<f64>,
    /// Set when negative eigenvalues were clamped to zero for a fractional power.
    pub clamped: bool,
}

/// `A_t f = sum_{l <= q} lambda_l^(t / eps) <psi_l, f>_s psi_l`.
pub fn apply_a_t(
    dec: &SpectralDecomposition,
    t: f64,
    q: usize,
    f: ArrayView1<'_, f64>,
) -> Result<SemigroupApplication> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param(format!("time must be nonnegative, got {t}")));
    }
    if q > dec.q {
        return Err(Error::param(format!(
            "order {q} exceeds decomposition order {}",
            dec.q
        )));
    }
    if f.len() != dec.n() {
        return Err(Error::param("function length must match the number of points"));
    }
    let power = t / dec.epsilon;
    let rounded = power.round();
    let integral = (power - rounded).abs() <= 1e-9 * power.max(1.0);
    let mut clamped = false;
    let mut values = Array1::zeros(dec.n());
    for l in 0..=q {
        let lambda = dec.eigenvalues[l];
        let factor = if integral && rounded <= i32::MAX as f64 {
            lambda.powi(rounded as i32)
        } else if lambda < 0.0 {
            clamped = true;
            0.0
        } else {
            lambda.powf(power)
        };
        if factor == 0.0 {
            continue;
        }
        let psi = dec.psi.column(l);
        let coeff = dec.inner(psi, f);
        values.scaled_add(factor * coeff, &psi);
    }
    Ok(SemigroupApplication { values, clamped })
}

/// `rho(t) = sum_{l >= 1} exp(-nu_l^2 t)` over the available eigenpairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoDiagnostic {
    pub value: f64,
    /// Set when the last retained term still exceeds `1e-3`.
    pub truncated: bool,
}

pub fn rho_diagnostic(dec: &SpectralDecomposition, t: f64) -> Result<RhoDiagnostic> {
    if !(t > 0.0) {
        return Err(Error::param(format!("time must be positive, got {t}")));
    }
    let terms: Vec<f64> = (1..=dec.q).map(|l| (-dec.nu_sq[l] * t).exp()).collect();
    Ok(RhoDiagnostic {
        value: terms.iter().sum(),
        truncated: terms.last().is_some_and(|&v| v > 1e-3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{decompose, decompose_with, EigenSolver};
    use crate::kernel::build_kernel;
    use crate::markov::{build_markov, m_step};
    use crate::pointcloud::{generate, Distribution, GeneratorSpec, PointCloud};

    fn model_of(cloud: &PointCloud, eps: f64) -> MarkovModel {
        build_markov(&build_kernel(cloud, eps).unwrap()).unwrap()
    }

    fn gaussian_model(seed: u64, n: usize, eps: f64) -> MarkovModel {
        model_of(&generate(&GeneratorSpec::two_gaussians(seed), n).unwrap(), eps)
    }

    fn clusters(n: usize) -> (PointCloud, MarkovModel) {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-3,
            },
            11,
        );
        let cloud = generate(&spec, n).unwrap();
        let model = model_of(&cloud, 1e-3);
        (cloud, model)
    }

    #[test]
    fn embedding_scales_and_norms() {
        let model = gaussian_model(1, 120, 0.1);
        let dec = decompose(&model, 4).unwrap();
        let e1 = embed(&dec, 1, 4).unwrap();
        let e2 = embed(&dec, 2, 4).unwrap();
        for c in 0..4 {
            let lam = dec.eigenvalues[c + 1];
            let col = e1.coords.column(c);
            assert!((dec.inner(col, col) - lam * lam).abs() <= 1e-8);
            let scaled = &col * lam;
            assert!((&scaled - &e2.coords.column(c)).iter().all(|v| v.abs() < 1e-14));
        }
        assert!(matches!(embed(&dec, 1, 5), Err(Error::Parameter(_))));
        assert!(matches!(embed(&dec, 0, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn one_dimensional_embedding_splits_clusters() {
        let (cloud, model) = clusters(40);
        let dec = decompose(&model, 1).unwrap();
        let e = embed(&dec, 1, 1).unwrap();
        let labels = cloud.labels().unwrap();
        let value = |c: i64| {
            let v: Vec<f64> = (0..40).filter(|&i| labels[i] == c).map(|i| e.coords[[i, 0]]).collect();
            (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        let (a, b) = (value(0), value(1));
        assert!(a.1 < b.0 || b.1 < a.0);
    }

    #[test]
    fn spectral_and_direct_distances_agree_at_full_order() {
        let model = gaussian_model(2, 80, 0.15);
        let dec = decompose(&model, 79).unwrap();
        for &(i, j) in &[(0, 1), (3, 40), (10, 79), (5, 5)] {
            for m in [1, 2, 5] {
                let spec = diffusion_distance_spectral(&dec, m, i, j, 79).unwrap();
                let direct = diffusion_distance_direct(&model, m, i, j).unwrap();
                assert!((spec * spec - direct * direct).abs() <= 1e-8 * direct.powi(2).max(1e-300));
            }
        }
        assert_eq!(diffusion_distance_spectral(&dec, 1, 7, 7, 79).unwrap(), 0.0);
    }

    #[test]
    fn embedding_distance_matches_spectral_distance() {
        let model = gaussian_model(3, 60, 0.2);
        let dec = decompose(&model, 6).unwrap();
        let e = embed(&dec, 3, 6).unwrap();
        let d = &e.coords.row(2) - &e.coords.row(17);
        let euclid = d.dot(&d).sqrt();
        let spec = diffusion_distance_spectral(&dec, 3, 2, 17, 6).unwrap();
        assert!((euclid - spec).abs() <= 1e-14 * spec.max(1.0));
    }

    #[test]
    fn polarization_identity() {
        let model = gaussian_model(4, 50, 0.2);
        let s = &model.stationary;
        for m in [1u64, 3] {
            let a2m = m_step(&model, 2 * m);
            for &(i, j) in &[(0, 1), (10, 30), (49, 2)] {
                let d = diffusion_distance_direct(&model, m, i, j).unwrap();
                let polar = a2m[[i, i]] / s[i] + a2m[[j, j]] / s[j] - a2m[[i, j]] / s[j] - a2m[[j, i]] / s[i];
                assert!((d * d - polar).abs() <= 1e-10 * polar.abs().max(1.0));
            }
        }
    }

    #[test]
    fn collinear_distance_by_hand() {
        let model = model_of(&PointCloud::from_scalars(&[0.0, 1.0, 2.0]).unwrap(), 0.5);
        let e = (-0.5f64).exp();
        let e2 = (-2.0f64).exp();
        let r0 = [1.0, e, e2].map(|v| v / (1.0 + e + e2));
        let r1 = [e, 1.0, e].map(|v| v / (1.0 + 2.0 * e));
        let deg = [1.0 + e + e2, 1.0 + 2.0 * e, 1.0 + e + e2];
        let total: f64 = deg.iter().sum();
        let hand: f64 = (0..3).map(|k| (r0[k] - r1[k]).powi(2) / (deg[k] / total)).sum();
        let d = diffusion_distance_direct(&model, 1, 0, 1).unwrap();
        assert!((d * d - hand).abs() <= 1e-12);
        assert_eq!(diffusion_distance_direct(&model, 3, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn clusters_separate_in_diffusion_distance() {
        let (cloud, model) = clusters(40);
        let dec = decompose(&model, 39).unwrap();
        let labels = cloud.labels().unwrap();
        let a = (0..40).find(|&i| labels[i] == 0).unwrap();
        let a2 = (0..40).filter(|&i| labels[i] == 0).nth(1).unwrap();
        let b = (0..40).find(|&i| labels[i] == 1).unwrap();
        let within = diffusion_distance_spectral(&dec, 1, a, a2, 39).unwrap();
        let between = diffusion_distance_spectral(&dec, 1, a, b, 39).unwrap();
        assert!(between >= 10.0 * within);
    }

    #[test]
    fn distance_is_a_pseudometric() {
        let model = gaussian_model(5, 70, 0.1);
        let dec = decompose(&model, 69).unwrap();
        let d = |i, j| diffusion_distance_spectral(&dec, 2, i, j, 69).unwrap();
        for &(i, j, k) in &[(0, 1, 2), (5, 40, 69), (12, 13, 60)] {
            assert_eq!(d(i, j), d(j, i));
            assert!(d(i, k) <= d(i, j) + d(j, k) + 1e-10);
        }
    }

    #[test]
    fn generator_of_constants_and_eigenvectors() {
        let model = gaussian_model(6, 100, 0.1);
        let g = apply_generator(&model, Array1::ones(100).view(), 0.1).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
        let dec = decompose(&model, 3).unwrap();
        for l in 1..=3 {
            let psi = dec.psi.column(l);
            let g = apply_generator(&model, psi, 0.1).unwrap();
            let expected = &psi * (-dec.nu_sq[l]);
            assert!((&g - &expected).iter().all(|v| v.abs() <= 1e-7));
        }
    }

    #[test]
    fn generator_on_uniform_grid_is_second_derivative() {
        // G_eps x^2 = (A x^2 - x^2)/eps; with kernel variance 2 eps this tends to
        // f'' = 2 away from the boundary of a uniform design.
        let n = 4000;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let eps = 1e-3;
        let model = model_of(&PointCloud::from_scalars(&xs).unwrap(), eps);
        let f = Array1::from_iter(xs.iter().map(|x| x * x));
        let g = apply_generator(&model, f.view(), eps).unwrap();
        for (i, x) in xs.iter().enumerate() {
            if (0.25..=0.75).contains(x) {
                assert!((g[i] - 2.0).abs() <= 0.2, "x = {x}: {}", g[i]);
            }
        }
    }

    #[test]
    fn semigroup_limits() {
        let model = gaussian_model(7, 60, 0.2);
        let dec = decompose(&model, 59).unwrap();
        let f = Array1::from_iter((0..60).map(|i| (i as f64 * 0.37).sin()));
        let id = apply_a_t(&dec, 0.0, 59, f.view()).unwrap();
        assert!((&id.values - &f).iter().all(|v| v.abs() <= 1e-8));
        let a3 = m_step(&model, 3).dot(&f);
        let at = apply_a_t(&dec, 0.6, 59, f.view()).unwrap();
        assert!(!at.clamped);
        assert!((&at.values - &a3).iter().all(|v| v.abs() <= 1e-8));
        let far = apply_a_t(&dec, 1e6, 59, f.view()).unwrap();
        let mean = dec.stationary.dot(&f);
        assert!(far.values.iter().all(|v| (v - mean).abs() <= 1e-8));
        assert!(apply_a_t(&dec, -1.0, 3, f.view()).is_err());
    }

    #[test]
    fn fractional_power_clamps_negative_eigenvalues() {
        let model = gaussian_model(8, 40, 0.2);
        let mut dec = decompose(&model, 39).unwrap();
        dec.eigenvalues[39] = -1e-14;
        let f = Array1::ones(40);
        assert!(apply_a_t(&dec, 0.3, 39, f.view()).unwrap().clamped);
        assert!(!apply_a_t(&dec, 0.4, 39, f.view()).unwrap().clamped);
    }

    #[test]
    fn disconnected_lines_do_not_mix() {
        let spec = GeneratorSpec::new(
            Distribution::ParallelLines {
                length: std::f64::consts::PI,
                separation: 1.0,
                weight_first: 0.5,
            },
            3,
        );
        let cloud = generate(&spec, 160).unwrap();
        let labels = cloud.labels().unwrap().to_vec();
        let f = Array1::from_iter(labels.iter().map(|&c| if c == 0 { 1.0 } else { 0.0 }));
        let mut previous = f64::INFINITY;
        for eps in [0.1, 0.05, 0.025] {
            let dec = decompose_with(&model_of(&cloud, eps), 159, EigenSolver::Dense).unwrap();
            let out = apply_a_t(&dec, 0.5, 159, f.view()).unwrap().values;
            let cross: f64 = (0..160)
                .filter(|&i| labels[i] == 1)
                .map(|i| dec.stationary[i] * out[i].abs())
                .sum();
            assert!(cross < previous);
            previous = cross;
        }
        assert!(previous < 1e-3);
    }

    #[test]
    fn rho_decreases_in_time() {
        let model = gaussian_model(9, 150, 0.1);
        let dec = decompose(&model, 20).unwrap();
        let a = rho_diagnostic(&dec, 1.0).unwrap();
        let b = rho_diagnostic(&dec, 0.5).unwrap();
        assert!(a.value > 0.0 && b.value > a.value);
        assert!(rho_diagnostic(&dec, 1e9).unwrap().value < 1e-12);
        assert!(rho_diagnostic(&dec, 0.0).is_err());
    }
}

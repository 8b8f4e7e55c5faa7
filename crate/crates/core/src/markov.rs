//! Row-stochastic normalization of a kernel graph.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::kernel::KernelGraph;

/// The Markov chain `A = M^{-1} K` together with its symmetric conjugate
/// `M^{1/2} A M^{-1/2}` and stationary distribution.
///
/// A model may also carry per-point quadrature weights `w`, in which case the
/// chain is `A(i, j) = K(i, j) w_j / sum_k K(i, k) w_k`. The empirical chain is
/// the special case `w_j = 1/n`.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    pub transition: Array2<f64>,
    pub symmetric: Array2<f64>,
    pub stationary: Array1<f64>,
    /// `rho_i = n sum_j K(i, j) w_j`; the plain kernel row sums for an empirical chain.
    pub degrees: Array1<f64>,
    pub epsilon: f64,
    weights: Option<Array1<f64>>,
}

pub fn build_markov(graph: &KernelGraph) -> Result<MarkovModel> {
    MarkovModel::from_parts(&graph.weights, None, graph.epsilon)
}

impl MarkovModel {
    /// Chain over points carrying quadrature weights (positive, any scale).
    pub fn from_weighted_kernel(
        kernel: &Array2<f64>,
        weights: &Array1<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if weights.len() != kernel.nrows() {
            return Err(Error::param("one weight per kernel row is required"));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::param("point weights must be positive and finite"));
        }
        MarkovModel::from_parts(kernel, Some(weights), epsilon)
    }

    fn from_parts(kernel: &Array2<f64>, weights: Option<&Array1<f64>>, epsilon: f64) -> Result<Self> {
        let n = kernel.nrows();
        if n == 0 || kernel.ncols() != n {
            return Err(Error::param("kernel matrix must be square and non-empty"));
        }
        let nf = n as f64;
        // column scaling n*w_j, identically 1 for the empirical chain
        let col_scale: Array1<f64> = match weights {
            Some(w) => {
                let total = w.sum();
                w.mapv(|v| nf * v / total)
            }
            None => Array1::ones(n),
        };
        let scaled = if weights.is_some() {
            kernel * &col_scale.view().insert_axis(Axis(0))
        } else {
            kernel.clone()
        };
        let degrees: Array1<f64> = scaled.sum_axis(Axis(1));
        if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::IsolatedVertex(i));
        }
        let transition = &scaled / &degrees.view().insert_axis(Axis(1));
        let mass: Array1<f64> = &degrees * &col_scale;
        let total_mass = mass.sum();
        let stationary = mass.mapv(|m| m / total_mass);
        // sqrt(n w_i / rho_i); the conjugate is K(i,j) r_i r_j, mirrored for exact symmetry
        let r: Array1<f64> = (&col_scale / &degrees).mapv(f64::sqrt);
        let mut symmetric = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = kernel[[i, j]] * (r[i] * r[j]);
                symmetric[[i, j]] = v;
                symmetric[[j, i]] = v;
            }
        }
        Ok(MarkovModel {
            transition,
            symmetric,
            stationary,
            degrees,
            epsilon,
            weights: weights.map(|w| w / w.sum()),
        })
    }

    pub fn n(&self) -> usize {
        self.transition.nrows()
    }

    /// Normalized point weights, `None` for the empirical (uniform) chain.
    pub fn point_weights(&self) -> Option<&Array1<f64>> {
        self.weights.as_ref()
    }

    /// `L = M (I - A)`, which is `M - K` for an empirical chain.
    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let d = if i == j { 1.0 } else { 0.0 };
            self.degrees[i] * (d - self.transition[[i, j]])
        })
    }

    /// `A f`.
    pub fn apply(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        self.transition.dot(&f)
    }

    /// Rows `e_i^T A^m` for every requested index, by repeated propagation.
    pub fn transition_rows(&self, m: u64, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.n()));
        for (r, &i) in rows.iter().enumerate() {
            out[[r, i]] = 1.0;
        }
        for _ in 0..m {
            out = out.dot(&self.transition);
        }
        out
    }
}

/// `A^m`; `m = 0` gives the identity. Uses repeated squaring above 8 steps.
pub fn m_step(model: &MarkovModel, m: u64) -> Array2<f64> {
    let n = model.n();
    let a = &model.transition;
    if m == 0 {
        return Array2::eye(n);
    }
    if m <= 8 {
        let mut p = a.clone();
        for _ in 1..m {
            p = p.dot(a);
        }
        return p;
    }
    let mut result: Option<Array2<f64>> = None;
    let mut base = a.clone();
    let mut e = m;
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.dot(&base),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.dot(&base);
    }
    result.expect("m > 0")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, build_kernel_with, KernelKind};
    use crate::pointcloud::{generate, Distribution, GeneratorSpec, PointCloud};

    fn collinear() -> MarkovModel {
        let cloud = PointCloud::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        build_markov(&build_kernel(&cloud, 0.5).unwrap()).unwrap()
    }

    fn random_model(seed: u64, n: usize) -> MarkovModel {
        let cloud = generate(&GeneratorSpec::two_gaussians(seed), n).unwrap();
        build_markov(&build_kernel(&cloud, 0.3).unwrap()).unwrap()
    }

    #[test]
    fn collinear_chain_matches_hand_table() {
        let a = collinear();
        let e = (-0.5f64).exp();
        let e2 = (-2.0f64).exp();
        let expected = [
            [1.0 / (1.0 + e + e2), e / (1.0 + e + e2), e2 / (1.0 + e + e2)],
            [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)],
            [e2 / (1.0 + e + e2), e / (1.0 + e + e2), 1.0 / (1.0 + e + e2)],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.transition[[i, j]] - expected[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn chain_identities() {
        let model = random_model(3, 120);
        let n = model.n();
        for row in model.transition.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let s = &model.stationary;
        assert!((s.sum() - 1.0).abs() <= 1e-12);
        let st = s.dot(&model.transition);
        for i in 0..n {
            assert!((st[i] - s[i]).abs() <= 1e-10);
            for j in 0..n {
                let lhs = s[i] * model.transition[[i, j]];
                let rhs = s[j] * model.transition[[j, i]];
                assert!((lhs - rhs).abs() <= 1e-12);
                let back = model.symmetric[[i, j]] * (s[j] / s[i]).sqrt();
                assert!((back - model.transition[[i, j]]).abs() <= 1e-12);
                assert_eq!(model.symmetric[[i, j]], model.symmetric[[j, i]]);
            }
        }
        for row in model.laplacian().rows() {
            assert!(row.sum().abs() <= 1e-12 * model.degrees.iter().cloned().fold(0.0, f64::max));
        }
    }

    #[test]
    fn separated_clusters_are_nearly_block_diagonal() {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-3,
            },
            9,
        );
        let cloud = generate(&spec, 40).unwrap();
        let labels = cloud.labels().unwrap().to_vec();
        let model = build_markov(&build_kernel(&cloud, 1e-3).unwrap()).unwrap();
        for i in 0..40 {
            let off: f64 = (0..40)
                .filter(|&j| labels[j] != labels[i])
                .map(|j| model.transition[[i, j]])
                .sum();
            assert!(off < 1e-6);
        }
    }

    #[test]
    fn isolated_vertex_is_reported() {
        let cloud = PointCloud::from_scalars(&[0.0, 0.5, 4.0]).unwrap();
        let kind = KernelKind::Binary {
            tau: 1.0,
            self_loops: false,
        };
        let graph = build_kernel_with(&cloud, 1.0, kind).unwrap();
        assert!(matches!(build_markov(&graph), Err(Error::IsolatedVertex(2))));
    }

    #[test]
    fn matrix_powers() {
        let model = random_model(5, 30);
        assert_eq!(m_step(&model, 0), Array2::eye(30));
        assert_eq!(m_step(&model, 1), model.transition);
        let sq = m_step(&model, 2);
        for i in 0..30 {
            for j in 0..30 {
                let brute: f64 = (0..30)
                    .map(|k| model.transition[[i, k]] * model.transition[[k, j]])
                    .sum();
                assert!((sq[[i, j]] - brute).abs() <= 1e-12);
            }
        }
        let p13 = m_step(&model, 13);
        let mut naive = model.transition.clone();
        for _ in 1..13 {
            naive = naive.dot(&model.transition);
        }
        assert!((&p13 - &naive).iter().all(|v| v.abs() < 1e-12));
        for row in p13.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let rows = model.transition_rows(13, &[4, 7]);
        assert!((&rows.row(1) - &p13.row(7)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_chain_with_uniform_weights_matches_empirical() {
        let cloud = generate(&GeneratorSpec::two_gaussians(2), 25).unwrap();
        let graph = build_kernel(&cloud, 0.2).unwrap();
        let a = build_markov(&graph).unwrap();
        let b = MarkovModel::from_weighted_kernel(&graph.weights, &Array1::from_elem(25, 3.0), 0.2)
            .unwrap();
        assert!((&a.transition - &b.transition).iter().all(|v| v.abs() < 1e-14));
        assert!((&a.stationary - &b.stationary).iter().all(|v| v.abs() < 1e-15));
    }
}

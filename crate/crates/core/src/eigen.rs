//! Spectral decomposition of the Markov chain through its symmetric conjugate.
//!
//! The symmetric matrix `S = M^{1/2} A M^{-1/2}` has eigenvectors `v`; the right
//! eigenvectors of `A` are `psi = v / sqrt(s)` and the left ones `phi = v sqrt(s)`,
//! where `s` is the stationary distribution. With `|v| = 1` this gives the
//! weighted normalization `sum_i s_i psi(i)^2 = 1` and biorthogonality
//! `sum_i phi_k(i) psi_l(i) = delta_kl` for free.

use faer::{Mat, Side};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::markov::MarkovModel;
use crate::rng;

/// Eigenvalue gap below which neighbouring pairs are flagged as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Residual above which a decomposition is rejected as unconverged.
pub const MAX_RELATIVE_RESIDUAL: f64 = 1e-6;

/// Dense solves are used up to this size under [`EigenSolver::Auto`].
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenSolver {
    /// Dense for `n <= DENSE_LIMIT`, Lanczos above.
    Auto,
    Dense,
    /// Lanczos with full reorthogonalization, deflated against the known
    /// stationary eigenvector.
    Lanczos { max_dim: usize, tol: f64 },
}

impl EigenSolver {
    pub fn lanczos() -> Self {
        EigenSolver::Lanczos {
            max_dim: 600,
            tol: 1e-12,
        }
    }
}

/// Leading eigenpairs `lambda_0 >= ... >= lambda_q` of a Markov chain.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    /// `n x (q+1)`; column `l` is the right eigenvector `psi_l`.
    pub psi: Array2<f64>,
    /// `n x (q+1)`; `phi_l(i) = s_i psi_l(i)`.
    pub phi: Array2<f64>,
    /// `(1 - lambda_l) / eps`.
    pub nu_sq: Array1<f64>,
    pub epsilon: f64,
    pub q: usize,
    pub stationary: Array1<f64>,
    /// `degenerate[l]` is set when `lambda_l` is within [`DEGENERACY_GAP`] of a neighbour.
    pub degenerate: Vec<bool>,
    /// Largest `|A psi_l - lambda_l psi_l| / |psi_l|`.
    pub max_residual: f64,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn psi(&self, ell: usize) -> ArrayView1<'_, f64> {
        self.psi.column(ell)
    }

    /// `<f, g>_s = sum_i s_i f_i g_i`.
    pub fn inner(&self, f: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>) -> f64 {
        self.stationary
            .iter()
            .zip(f.iter().zip(g.iter()))
            .map(|(s, (a, b))| s * a * b)
            .sum()
    }

    pub fn is_degenerate(&self, ell: usize) -> bool {
        self.degenerate.get(ell).copied().unwrap_or(false)
    }
}

pub fn decompose(model: &MarkovModel, q: usize) -> Result<SpectralDecomposition> {
    decompose_with(model, q, EigenSolver::Auto)
}

pub fn decompose_with(
    model: &MarkovModel,
    q: usize,
    solver: EigenSolver,
) -> Result<SpectralDecomposition> {
    let n = model.n();
    let k = q + 1;
    if k > n {
        return Err(Error::param(format!(
            "order q = {q} needs q + 1 <= n = {n}"
        )));
    }
    let s = &model.stationary;
    let solver = match solver {
        EigenSolver::Auto if n <= DENSE_LIMIT => EigenSolver::Dense,
        EigenSolver::Auto => EigenSolver::lanczos(),
        other => other,
    };
    // The stationary eigenvector sqrt(s) is known exactly; the solvers only see
    // its orthogonal complement, so psi_0 stays constant even when lambda_1 = 1.
    let root: Array1<f64> = s.mapv(f64::sqrt);
    let v0 = &root / root.dot(&root).sqrt();
    let (rest_values, rest) = match solver {
        EigenSolver::Lanczos { max_dim, tol } if k < n => {
            lanczos_top(&model.symmetric, k - 1, &v0, max_dim, tol)?
        }
        _ => {
            let mut deflated = model.symmetric.clone();
            let outer = v0.view().insert_axis(Axis(1));
            deflated.scaled_add(-3.0, &outer.dot(&outer.t()));
            dense_top(&deflated, k - 1)?
        }
    };
    let mut values = vec![1.0];
    values.extend(rest_values);
    let mut vectors = Array2::zeros((n, k));
    vectors.column_mut(0).assign(&v0);
    vectors.slice_mut(s![.., 1..]).assign(&rest);

    let inv_root = s.mapv(|v| 1.0 / v.sqrt());
    let mut psi = &vectors * &inv_root.view().insert_axis(Axis(1));
    for mut col in psi.columns_mut() {
        // orient so that the largest-magnitude entry is positive (first on ties)
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let phi = &psi * &s.view().insert_axis(Axis(1));
    let eigenvalues = Array1::from(values);
    let nu_sq = eigenvalues.mapv(|l| (1.0 - l) / model.epsilon);
    let degenerate = (0..k)
        .map(|l| {
            let prev = l > 0 && (eigenvalues[l - 1] - eigenvalues[l]).abs() < DEGENERACY_GAP;
            let next = l + 1 < k && (eigenvalues[l] - eigenvalues[l + 1]).abs() < DEGENERACY_GAP;
            prev || next
        })
        .collect();

    let applied = model.transition.dot(&psi);
    let mut max_residual = 0.0f64;
    for l in 0..k {
        let col = psi.column(l);
        let r = (&applied.column(l) - &(&col * eigenvalues[l]))
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        let norm = col.dot(&col).sqrt();
        max_residual = max_residual.max(r / norm);
    }
    if !(max_residual <= MAX_RELATIVE_RESIDUAL) {
        return Err(Error::Numeric {
            reason: "eigenvector residual too large".into(),
            residual: max_residual,
        });
    }

    Ok(SpectralDecomposition {
        eigenvalues,
        psi,
        phi,
        nu_sq,
        epsilon: model.epsilon,
        q,
        stationary: s.clone(),
        degenerate,
        max_residual,
    })
}

fn to_faer(a: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Full symmetric eigendecomposition, returning the `k` largest pairs in
/// descending order.
pub fn dense_top(a: &Array2<f64>, k: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric {
            reason: format!("dense eigensolver failed: {e:?}"),
            residual: f64::NAN,
        })?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let mut values = Vec::with_capacity(k);
    let mut out = Array2::zeros((n, k));
    for c in 0..k {
        let src = n - 1 - c;
        values.push(vals[src]);
        for i in 0..n {
            out[[i, c]] = vecs[(i, src)];
        }
    }
    Ok((values, out))
}

/// Symmetric tridiagonal eigenproblem (small, dense).
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Mat<f64>) {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .expect("tridiagonal eigenproblem");
    let vals = evd.S().column_vector().iter().copied().collect();
    (vals, evd.U().to_owned())
}

/// `k` largest eigenpairs of symmetric `a` on the orthogonal complement of the
/// unit vector `deflate`, which must itself be an eigenvector.
pub fn lanczos_top(
    a: &Array2<f64>,
    k: usize,
    deflate: &Array1<f64>,
    max_dim: usize,
    tol: f64,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if k == 0 {
        return Ok((Vec::new(), Array2::zeros((n, 0))));
    }
    // the complement has dimension n - 1
    let max_dim = max_dim.min(n - 1).max(k);
    let project = |w: &mut Array1<f64>, basis: &Array2<f64>, used: usize| {
        for _ in 0..2 {
            let c = deflate.dot(w);
            w.scaled_add(-c, deflate);
            if used > 0 {
                let b = basis.slice(s![.., ..used]);
                let coeffs = b.t().dot(w);
                *w -= &b.dot(&coeffs);
            }
        }
    };

    let mut rng = rng::rng_from(0x5eed_1a9c);
    let mut basis = Array2::<f64>::zeros((n, max_dim));
    let mut start: Array1<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project(&mut start, &basis, 0);
    let norm = start.dot(&start).sqrt();
    basis.column_mut(0).assign(&(&start / norm));

    let mut alpha = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
    let mut next_check = (2 * k + 10).min(max_dim);
    let mut last_residual = f64::INFINITY;
    for j in 0..max_dim {
        let qj = basis.column(j).to_owned();
        let mut w = a.dot(&qj);
        let aj = qj.dot(&w);
        alpha.push(aj);
        w.scaled_add(-aj, &qj);
        if j > 0 {
            w.scaled_add(-beta[j - 1], &basis.column(j - 1));
        }
        project(&mut w, &basis, j + 1);
        let bj = w.dot(&w).sqrt();
        let exhausted = bj < 1e-13;
        let dim = j + 1;
        if dim >= k && (dim >= next_check || exhausted || dim == max_dim) {
            let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
            let mut worst = 0.0f64;
            for c in 0..k {
                let idx = dim - 1 - c;
                let res = bj * vecs[(dim - 1, idx)].abs();
                worst = worst.max(res / vals[idx].abs().max(1.0));
            }
            last_residual = worst;
            if worst <= tol || exhausted || dim == max_dim {
                if worst > tol.max(1e-10) && !exhausted {
                    break;
                }
                let q = basis.slice(s![.., ..dim]);
                let mut values = Vec::with_capacity(k);
                let mut out = Array2::zeros((n, k));
                for c in 0..k {
                    let idx = dim - 1 - c;
                    values.push(vals[idx]);
                    let y: Array1<f64> = (0..dim).map(|r| vecs[(r, idx)]).collect();
                    let mut x = q.dot(&y);
                    let nx = x.dot(&x).sqrt();
                    x /= nx;
                    out.column_mut(c).assign(&x);
                }
                return Ok((values, out));
            }
            next_check = (dim + dim / 4).max(dim + 5).min(max_dim);
        }
        if exhausted {
            break;
        }
        beta.push(bj);
        basis.column_mut(j + 1).assign(&(&w / bj));
    }
    Err(Error::Numeric {
        reason: format!("Lanczos did not converge within {max_dim} vectors"),
        residual: last_residual,
    })
}

/// Biorthogonality defects of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biorthogonality {
    /// `max_{k != l} |sum_i phi_k(i) psi_l(i)|`.
    pub off_diagonal: f64,
    /// `max_l |sum_i phi_l(i) psi_l(i) - 1|`.
    pub normalization: f64,
}

impl Biorthogonality {
    pub fn max(&self) -> f64 {
        self.off_diagonal.max(self.normalization)
    }
}

pub fn biorthogonality_check(dec: &SpectralDecomposition) -> Biorthogonality {
    let gram = dec.phi.t().dot(&dec.psi);
    let k = gram.nrows();
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                diag = diag.max((gram[[a, b]] - 1.0).abs());
            } else {
                off = off.max(gram[[a, b]].abs());
            }
        }
    }
    Biorthogonality {
        off_diagonal: off,
        normalization: diag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;
    use crate::markov::build_markov;
    use crate::pointcloud::{generate, Distribution, GeneratorSpec, PointCloud};

    fn model_of(cloud: &PointCloud, eps: f64) -> MarkovModel {
        build_markov(&build_kernel(cloud, eps).unwrap()).unwrap()
    }

    fn two_gaussian_model(seed: u64, n: usize, eps: f64) -> MarkovModel {
        model_of(&generate(&GeneratorSpec::two_gaussians(seed), n).unwrap(), eps)
    }

    /// Characteristic polynomial roots of a 3x3 matrix by bisection, independent
    /// of any eigensolver.
    fn eigenvalues_3x3(a: &Array2<f64>) -> Vec<f64> {
        let det = |l: f64| {
            let m = |i: usize, j: usize| a[[i, j]] - if i == j { l } else { 0.0 };
            m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
        };
        let mut roots = Vec::new();
        let steps = 200_000;
        let (lo, hi) = (-1.5, 1.5);
        let h = (hi - lo) / steps as f64;
        for s in 0..steps {
            let (mut x0, mut x1) = (lo + s as f64 * h, lo + (s + 1) as f64 * h);
            if det(x0) == 0.0 {
                roots.push(x0);
                continue;
            }
            if det(x0).signum() != det(x1).signum() {
                for _ in 0..100 {
                    let mid = 0.5 * (x0 + x1);
                    if det(mid).signum() == det(x0).signum() {
                        x0 = mid;
                    } else {
                        x1 = mid;
                    }
                }
                roots.push(0.5 * (x0 + x1));
            }
        }
        roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
        roots
    }

    #[test]
    fn collinear_eigenvalues_match_characteristic_roots() {
        let model = model_of(&PointCloud::from_scalars(&[0.0, 1.0, 2.0]).unwrap(), 0.5);
        let dec = decompose(&model, 2).unwrap();
        let brute = eigenvalues_3x3(&model.transition);
        assert_eq!(brute.len(), 3);
        for (a, b) in dec.eigenvalues.iter().zip(&brute) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn leading_pair_is_trivial() {
        let model = two_gaussian_model(1, 150, 0.1);
        let dec = decompose(&model, 5).unwrap();
        assert!((dec.eigenvalues[0] - 1.0).abs() <= 1e-10);
        let psi0 = dec.psi(0);
        let mean = psi0.mean().unwrap();
        assert!(psi0.iter().all(|v| (v - mean).abs() <= 1e-8));
        assert!(mean > 0.0);
        assert!(dec.nu_sq[0].abs() <= 1e-10 / 0.1);
        for w in dec.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for l in 0..=5 {
            let c = dec.psi(l);
            assert!((dec.inner(c, c) - 1.0).abs() <= 1e-10);
            assert!(dec.eigenvalues[l].abs() <= 1.0 + 1e-10);
        }
        assert!(dec.max_residual <= 1e-8);
    }

    #[test]
    fn separated_clusters_give_two_valued_fiedler_vector() {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-3,
            },
            4,
        );
        let cloud = generate(&spec, 60).unwrap();
        let labels = cloud.labels().unwrap().to_vec();
        let dec = decompose(&model_of(&cloud, 1e-3), 1).unwrap();
        assert!(dec.eigenvalues[1] >= 1.0 - 1e-6);
        let psi1 = dec.psi(1);
        let group = |c: i64| -> Vec<f64> {
            (0..60).filter(|&i| labels[i] == c).map(|i| psi1[i]).collect()
        };
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let (g0, g1) = (group(0), group(1));
        let gap = (g0.iter().sum::<f64>() / g0.len() as f64 - g1.iter().sum::<f64>() / g1.len() as f64).abs();
        assert!(sd(&g0) <= 1e-3 * gap && sd(&g1) <= 1e-3 * gap);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let model = two_gaussian_model(7, 400, 0.05);
        let dense = decompose_with(&model, 6, EigenSolver::Dense).unwrap();
        let lanczos = decompose_with(&model, 6, EigenSolver::lanczos()).unwrap();
        for l in 0..=6 {
            assert!((dense.eigenvalues[l] - lanczos.eigenvalues[l]).abs() < 1e-10);
            let d = &dense.psi(l) - &lanczos.psi(l);
            assert!(d.iter().all(|v| v.abs() < 1e-6), "ell {l}");
        }
        assert!(lanczos.max_residual <= 1e-8);
    }

    #[test]
    fn lanczos_separates_disconnected_clusters() {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-2,
            },
            8,
        );
        let cloud = generate(&spec, 100).unwrap();
        let dec = decompose_with(&model_of(&cloud, 1e-3), 2, EigenSolver::lanczos()).unwrap();
        assert!(dec.eigenvalues[1] > 1.0 - 1e-9);
        assert!(dec.eigenvalues[2] < dec.eigenvalues[1]);
    }

    #[test]
    fn order_larger_than_sample_is_rejected() {
        let model = two_gaussian_model(1, 5, 0.1);
        assert!(matches!(decompose(&model, 5), Err(Error::Parameter(_))));
        assert!(decompose(&model, 4).is_ok());
    }

    #[test]
    fn biorthogonality_holds() {
        let model = two_gaussian_model(2, 200, 0.1);
        let dec = decompose(&model, 10).unwrap();
        assert!(biorthogonality_check(&dec).max() <= 1e-8);
        let dec0 = decompose(&model, 0).unwrap();
        assert!(biorthogonality_check(&dec0).normalization <= 1e-10);
        assert_eq!(biorthogonality_check(&dec0).off_diagonal, 0.0);
    }

    #[test]
    fn full_order_mercer_reconstruction() {
        let model = two_gaussian_model(3, 60, 0.2);
        let dec = decompose(&model, 59).unwrap();
        let lam = dec.eigenvalues.view().insert_axis(Axis(0));
        let recon = (&dec.psi * &lam).dot(&dec.phi.t());
        let err = (&recon - &model.transition).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn signs_are_deterministic() {
        let model = two_gaussian_model(4, 100, 0.1);
        let a = decompose(&model, 4).unwrap();
        let b = decompose(&model, 4).unwrap();
        assert_eq!(a.psi, b.psi);
        for l in 0..=4 {
            let col = a.psi(l);
            let best = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let first = col.iter().position(|v| v.abs() == best).unwrap();
            assert!(col[first] > 0.0);
        }
    }
}

//! Out-of-sample extension of eigenvectors by the Nyström formula.

use ndarray::{Array1, Array2, ArrayView1};

use crate::diffusion::eigen_power;
use crate::eigen::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::kernel::sq_dist;
use crate::pointcloud::PointCloud;

/// Eigenvalues below this magnitude are not extended.
pub const MIN_EXTENSION_EIGENVALUE: f64 = 1e-8;

/// New locations at which eigenvectors are evaluated.
#[derive(Debug, Clone)]
pub struct ExtensionQuery {
    pub points: Array2<f64>,
}

impl ExtensionQuery {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("query coordinates must be finite"));
        }
        Ok(ExtensionQuery { points })
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        ExtensionQuery {
            points: cloud.points().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

fn check(cloud: &PointCloud, dec: &SpectralDecomposition, query: &ExtensionQuery) -> Result<()> {
    if cloud.n() != dec.n() {
        return Err(Error::param("decomposition does not belong to this point cloud"));
    }
    if query.points.ncols() != cloud.dim() && !query.is_empty() {
        return Err(Error::param(format!(
            "query dimension {} does not match training dimension {}",
            query.points.ncols(),
            cloud.dim()
        )));
    }
    Ok(())
}

/// Normalized kernel weights `k(x, X_i) / sum_j k(x, X_j)` for one query.
///
/// Exponents are shifted by the nearest squared distance so that far queries
/// do not underflow; the normalizing prefactor cancels.
fn smoothing_weights(cloud: &PointCloud, x: ArrayView1<'_, f64>, epsilon: f64, out: &mut Array1<f64>) {
    let pts = cloud.points();
    let mut min = f64::INFINITY;
    for (i, row) in pts.rows().into_iter().enumerate() {
        let d2 = sq_dist(row, x);
        out[i] = d2;
        min = min.min(d2);
    }
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (-(*v - min) / (4.0 * epsilon)).exp();
        total += *v;
    }
    *out /= total;
}

/// `psi_l(x) = sum_i k(x, X_i) psi_l(X_i) / (lambda_l sum_i k(x, X_i))` for each query.
pub fn extend_eigenvector(
    cloud: &PointCloud,
    dec: &SpectralDecomposition,
    ell: usize,
    query: &ExtensionQuery,
) -> Result<Array1<f64>> {
    Ok(extend_columns(cloud, dec, &[ell], query)?.column(0).to_owned())
}

/// Extensions of several eigenvectors at once, one column per requested index.
pub fn extend_columns(
    cloud: &PointCloud,
    dec: &SpectralDecomposition,
    ells: &[usize],
    query: &ExtensionQuery,
) -> Result<Array2<f64>> {
    check(cloud, dec, query)?;
    for &ell in ells {
        if ell > dec.q {
            return Err(Error::param(format!(
                "eigenvector {ell} exceeds decomposition order {}",
                dec.q
            )));
        }
        let lambda = dec.eigenvalues[ell];
        if lambda.abs() < MIN_EXTENSION_EIGENVALUE {
            return Err(Error::IllConditioned { ell, lambda });
        }
    }
    let mut out = Array2::zeros((query.len(), ells.len()));
    let mut w = Array1::zeros(cloud.n());
    for (r, x) in query.points.rows().into_iter().enumerate() {
        smoothing_weights(cloud, x, dec.epsilon, &mut w);
        for (c, &ell) in ells.iter().enumerate() {
            out[[r, c]] = w.dot(&dec.psi.column(ell)) / dec.eigenvalues[ell];
        }
    }
    Ok(out)
}

/// Diffusion coordinates `lambda_l^m psi_l(x)`, `l = 1..q`, at the query points.
pub fn extend_embedding(
    cloud: &PointCloud,
    dec: &SpectralDecomposition,
    m: u64,
    q: usize,
    query: &ExtensionQuery,
) -> Result<Array2<f64>> {
    if q > dec.q {
        return Err(Error::param(format!(
            "embedding dimension {q} exceeds decomposition order {}",
            dec.q
        )));
    }
    let ells: Vec<usize> = (1..=q).collect();
    let mut coords = extend_columns(cloud, dec, &ells, query)?;
    for (c, &ell) in ells.iter().enumerate() {
        let scale = eigen_power(dec.eigenvalues[ell], m);
        coords.column_mut(c).mapv_inplace(|v| v * scale);
    }
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::embed;
    use crate::eigen::decompose;
    use crate::kernel::build_kernel;
    use crate::markov::build_markov;
    use crate::pointcloud::{generate, Distribution, GeneratorSpec};
    use ndarray::Axis;

    fn fit(cloud: &PointCloud, eps: f64, q: usize) -> SpectralDecomposition {
        decompose(&build_markov(&build_kernel(cloud, eps).unwrap()).unwrap(), q).unwrap()
    }

    #[test]
    fn training_points_are_fixed_points() {
        let cloud = generate(&GeneratorSpec::two_gaussians(1), 150).unwrap();
        let dec = fit(&cloud, 0.1, 12);
        let query = ExtensionQuery::from_cloud(&cloud);
        for ell in 0..=12 {
            if dec.eigenvalues[ell] <= 1e-6 {
                continue;
            }
            let ext = extend_eigenvector(&cloud, &dec, ell, &query).unwrap();
            let err = (&ext - &dec.psi.column(ell)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-8, "ell {ell}: {err}");
        }
        let emb = extend_embedding(&cloud, &dec, 2, 4, &query).unwrap();
        let reference = embed(&dec, 2, 4).unwrap();
        assert!((&emb - &reference.coords).iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn trivial_eigenvector_extends_to_constant() {
        let cloud = generate(&GeneratorSpec::two_gaussians(2), 80).unwrap();
        let dec = fit(&cloud, 0.1, 2);
        let query = ExtensionQuery::new(ndarray::array![[-10.0], [0.3], [55.0]]).unwrap();
        let ext = extend_eigenvector(&cloud, &dec, 0, &query).unwrap();
        let c = dec.psi[[0, 0]];
        assert!(ext.iter().all(|v| (v - c).abs() <= 1e-10));
    }

    #[test]
    fn midpoint_lies_between_plateaus() {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-3,
            },
            5,
        );
        let cloud = generate(&spec, 40).unwrap();
        let dec = fit(&cloud, 0.05, 1);
        let query = ExtensionQuery::new(ndarray::array![[0.5]]).unwrap();
        let mid = extend_eigenvector(&cloud, &dec, 1, &query).unwrap()[0];
        let psi = dec.psi.column(1);
        let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < mid && mid < hi);
    }

    #[test]
    fn extension_is_monotone_across_the_gap() {
        let cloud = generate(&GeneratorSpec::two_gaussians(3), 300).unwrap();
        let dec = fit(&cloud, 0.1, 1);
        let grid: Vec<f64> = (0..81).map(|i| -4.0 + 0.1 * i as f64).collect();
        let query = ExtensionQuery::new(Array2::from_shape_vec((81, 1), grid).unwrap()).unwrap();
        let ext = extend_eigenvector(&cloud, &dec, 1, &query).unwrap();
        let diffs: Vec<f64> = ext.windows(2).into_iter().map(|w| w[1] - w[0]).collect();
        let inner = &diffs[25..55];
        assert!(inner.iter().all(|d| *d > 0.0) || inner.iter().all(|d| *d < 0.0));
    }

    #[test]
    fn empty_query_and_bounds() {
        let cloud = generate(&GeneratorSpec::two_gaussians(4), 60).unwrap();
        let dec = fit(&cloud, 0.2, 3);
        let empty = ExtensionQuery::new(Array2::zeros((0, 1))).unwrap();
        assert_eq!(extend_embedding(&cloud, &dec, 1, 3, &empty).unwrap().dim(), (0, 3));
        let query = ExtensionQuery::new(ndarray::array![[-7.0], [-1.1], [0.0], [2.5], [9.0]]).unwrap();
        for ell in 1..=3 {
            let ext = extend_eigenvector(&cloud, &dec, ell, &query).unwrap();
            let bound = dec.psi.column(ell).iter().fold(0.0f64, |m, v| m.max(v.abs()))
                / dec.eigenvalues[ell].abs();
            assert!(ext.iter().all(|v| v.abs() <= bound + 1e-12));
        }
    }

    #[test]
    fn extension_ignores_training_order() {
        let cloud = generate(&GeneratorSpec::two_gaussians(6), 50).unwrap();
        let dec = fit(&cloud, 0.2, 2);
        let perm: Vec<usize> = (0..50).rev().collect();
        let shuffled = cloud.select(&perm);
        let mut dec2 = dec.clone();
        dec2.psi = dec.psi.select(Axis(0), &perm);
        let query = ExtensionQuery::new(ndarray::array![[0.1], [3.0]]).unwrap();
        let a = extend_eigenvector(&cloud, &dec, 1, &query).unwrap();
        let b = extend_eigenvector(&shuffled, &dec2, 1, &query).unwrap();
        assert!((&a - &b).iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn tiny_eigenvalues_are_rejected() {
        let cloud = generate(&GeneratorSpec::two_gaussians(7), 30).unwrap();
        let mut dec = fit(&cloud, 0.2, 2);
        dec.eigenvalues[2] = 1e-9;
        let query = ExtensionQuery::from_cloud(&cloud);
        assert!(matches!(
            extend_eigenvector(&cloud, &dec, 2, &query),
            Err(Error::IllConditioned { ell: 2, .. })
        ));
        let wrong_dim = ExtensionQuery::new(Array2::zeros((2, 2))).unwrap();
        assert!(extend_eigenvector(&cloud, &dec, 1, &wrong_dim).is_err());
    }
}

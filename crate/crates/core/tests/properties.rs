use ndarray::{Array1, Array2};
use proptest::prelude::*;

use sca::diffusion::{apply_a_t, diffusion_distance_direct, diffusion_distance_spectral, embed};
use sca::eigen::{decompose_with, EigenSolver};
use sca::kernel::build_kernel;
use sca::markov::{build_markov, MarkovModel};
use sca::pointcloud::PointCloud;

fn cloud() -> impl Strategy<Value = (PointCloud, f64)> {
    (5usize..40, 1usize..4, -2.0f64..0.5).prop_flat_map(|(n, d, log_eps)| {
        prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| {
            let pts = Array2::from_shape_vec((n, d), v).unwrap();
            (PointCloud::new(pts).unwrap(), 10f64.powf(log_eps))
        })
    })
}

fn model(cloud: &PointCloud, eps: f64) -> MarkovModel {
    build_markov(&build_kernel(cloud, eps).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_is_reversible((c, eps) in cloud()) {
        let m = model(&c, eps);
        let n = m.n();
        prop_assert!((m.stationary.sum() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!((m.transition.row(i).sum() - 1.0).abs() < 1e-12);
            for j in 0..n {
                let flow = m.stationary[i] * m.transition[[i, j]] - m.stationary[j] * m.transition[[j, i]];
                prop_assert!(flow.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_lies_in_unit_interval((c, eps) in cloud()) {
        let m = model(&c, eps);
        let dec = decompose_with(&m, m.n() - 1, EigenSolver::Dense).unwrap();
        prop_assert!((dec.eigenvalues[0] - 1.0).abs() < 1e-12);
        prop_assert!(dec.eigenvalues.iter().all(|l| *l <= 1.0 + 1e-12 && *l >= -1e-12));
        prop_assert!(dec.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn diffusion_distance_is_a_metric((c, eps) in cloud(), steps in 1u64..4) {
        let m = model(&c, eps);
        let n = m.n();
        let d = |i, j| diffusion_distance_direct(&m, steps, i, j).unwrap();
        let (a, b, k) = (0, n / 2, n - 1);
        prop_assert_eq!(d(a, a), 0.0);
        prop_assert!((d(a, b) - d(b, a)).abs() < 1e-12);
        prop_assert!(d(a, k) <= d(a, b) + d(b, k) + 1e-12);
    }

    #[test]
    fn embedding_distance_matches_spectral((c, eps) in cloud(), steps in 1u64..4) {
        let m = model(&c, eps);
        let n = m.n();
        let q = n - 1;
        let dec = decompose_with(&m, q, EigenSolver::Dense).unwrap();
        let emb = embed(&dec, steps, q).unwrap();
        let (i, j) = (0, n - 1);
        let euclid = (&emb.coords.row(i) - &emb.coords.row(j)).mapv(|v| v * v).sum().sqrt();
        let spectral = diffusion_distance_spectral(&dec, steps, i, j, q).unwrap();
        prop_assert!((euclid - spectral).abs() <= 1e-9 * (1.0 + spectral));
    }

    #[test]
    fn semigroup_fixes_constants((c, eps) in cloud(), t in 0.0f64..5.0) {
        let m = model(&c, eps);
        let n = m.n();
        let dec = decompose_with(&m, n - 1, EigenSolver::Dense).unwrap();
        let ones = Array1::<f64>::ones(n);
        let out = apply_a_t(&dec, t, n - 1, ones.view()).unwrap();
        prop_assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

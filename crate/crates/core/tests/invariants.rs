//! Property tests over randomly drawn configurations. Each case draws a
//! seed and shape parameters; matrices are generated from the seed.

use nalgebra::DMatrix;
use proptest::prelude::*;

use rdpg_core::alignment::{align_anchor, procrustes};
use rdpg_core::dynamics::{eval_field, induced_p_velocity, integrate, DynamicsSpec};
use rdpg_core::geometry::{connection_form, curvature_norm, horizontal_lift, vertical_project};
use rdpg_core::inference::{crb_baseline_check, fisher_polynomial, lyapunov_invert, DEFAULT_PROB_FLOOR};
use rdpg_core::io::{read_matrix, write_matrix};
use rdpg_core::linalg;
use rdpg_core::model::{probability_matrix, spectral_decompose};
use rdpg_core::observation::{inject_gauge_jitter, EmbeddingSeries};
use rdpg_core::random::{
    gaussian_matrix, haar_orthogonal, random_skew, random_symmetric, rng_from_seed, uniform_positive_ball,
};

fn shape() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=4).prop_flat_map(|(seed, d)| (Just(seed), (d + 1)..=12, Just(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probability_matrix_is_gauge_invariant((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = gaussian_matrix(&mut rng, n, d);
        let q = haar_orthogonal(&mut rng, d);
        let p = probability_matrix(&x).into_matrix();
        let pq = probability_matrix(&(&x * q)).into_matrix();
        prop_assert!((p - pq).amax() <= 1e-12 * x.norm_squared().max(1.0));
    }

    #[test]
    fn pure_gauge_fields_are_invisible((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = gaussian_matrix(&mut rng, n, d);
        let omega = random_skew(&mut rng, d);
        let v = eval_field(&DynamicsSpec::pure_gauge(&omega), &x).unwrap();
        let pdot = induced_p_velocity(&v, &x).unwrap();
        prop_assert!(pdot.norm() < 1e-12 * x.norm_squared().max(1.0));
    }

    #[test]
    fn jitter_preserves_probabilities((seed, n, d) in shape(), frames in 1usize..6) {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<_> = (0..frames).map(|_| gaussian_matrix(&mut rng, n, d)).collect();
        let series = EmbeddingSeries::new(xs.clone(), (0..frames).map(|t| t as f64).collect()).unwrap();
        let jittered = inject_gauge_jitter(&series, seed ^ 1);
        for (a, b) in xs.iter().zip(&jittered.embeddings) {
            prop_assert!((a * a.transpose() - b * b.transpose()).amax() <= 1e-12 * a.norm_squared().max(1.0));
        }
    }

    #[test]
    fn horizontality_is_equivariant((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = gaussian_matrix(&mut rng, n, d);
        let h = random_symmetric(&mut rng, n) * &x;
        let q = haar_orthogonal(&mut rng, d);
        let xq = &x * &q;
        let hq = &h * &q;
        prop_assert!(linalg::asymmetry(&(xq.transpose() * hq)) <= 1e-10 * h.norm().max(1.0) * x.norm());
    }

    #[test]
    fn connection_solve_residual_is_small((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = gaussian_matrix(&mut rng, n, d);
        let g = x.transpose() * &x;
        let (vals, _) = linalg::sym_eigen_desc(&g);
        prop_assume!(vals[0] / vals[d - 1] <= 1e4);
        let z = gaussian_matrix(&mut rng, n, d);
        let omega = connection_form(&x, &z).unwrap();
        let xtz = x.transpose() * &z;
        let rhs = &xtz - xtz.transpose();
        prop_assert!((&g * &omega + &omega * &g - rhs).norm() <= 1e-10 * z.norm() * g.norm().max(1.0));
        prop_assert!(linalg::skew_defect(&omega) <= 1e-12 * omega.amax().max(1.0));
    }

    #[test]
    fn lift_reproduces_horizontal_part((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = uniform_positive_ball(&mut rng, n, d);
        let dec = spectral_decompose(&probability_matrix(&x), d, 1e-12).unwrap();
        prop_assume!(dec.gap() > 1e-3 * dec.eigenvalues[0]);
        let z = gaussian_matrix(&mut rng, n, d);
        let h = vertical_project(&x, &z).unwrap().horizontal;
        let pdot = induced_p_velocity(&h, &x).unwrap();
        let lift = horizontal_lift(&dec, &pdot).unwrap();
        let xc = dec.scaled_embedding();
        let r = procrustes(&xc, &x).unwrap();
        prop_assert!((&lift * r - &h).norm() <= 1e-6 * h.norm().max(1e-12));
    }

    #[test]
    fn curvature_scales_with_sixth_power((seed, n, d) in shape(), c in 0.3f64..3.0) {
        prop_assume!(d >= 2);
        let mut rng = rng_from_seed(seed);
        let x = gaussian_matrix(&mut rng, n, d);
        let m2 = random_symmetric(&mut rng, n);
        let base = curvature_norm(&x, &probability_matrix(&x).into_matrix(), &m2).unwrap();
        let xs = &x * c;
        let scaled = curvature_norm(&xs, &probability_matrix(&xs).into_matrix(), &m2).unwrap();
        let expected = base.vertical_bracket_norm_sq * c.powi(6);
        prop_assert!((scaled.vertical_bracket_norm_sq - expected).abs() <= 1e-8 * expected.max(1e-300));
        prop_assert!(
            (base.vertical_bracket_norm_sq - base.direct_norm_sq).abs()
                <= 1e-8 * base.direct_norm_sq.max(1e-300)
        );
    }

    #[test]
    fn procrustes_is_globally_optimal((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let a = gaussian_matrix(&mut rng, n, d);
        let b = gaussian_matrix(&mut rng, n, d);
        let q = procrustes(&a, &b).unwrap();
        prop_assert!((q.transpose() * &q - DMatrix::<f64>::identity(d, d)).amax() < 1e-10);
        let best = (&a * &q - &b).norm();
        for _ in 0..100 {
            let other = haar_orthogonal(&mut rng, d);
            prop_assert!(best <= (&a * other - &b).norm() + 1e-10);
        }
    }

    #[test]
    fn anchor_alignment_is_exact_without_noise(seed in any::<u64>(), d in 2usize..4, steps in 2usize..40) {
        let mut rng = rng_from_seed(seed);
        let n = 20;
        let x0 = uniform_positive_ball(&mut rng, n, d);
        let anchors: Vec<usize> = (0..2 * d).collect();
        let spec = DynamicsSpec::polynomial(vec![-0.3, 0.003]).with_anchors(anchors.clone(), 0.0);
        let traj = integrate(&spec, &x0, steps, 0.05).unwrap();
        let block = linalg::select_rows(&x0, &anchors);
        let sv = linalg::singular_values(&block);
        prop_assume!(sv[d - 1] > 1e-3 * sv[0]);
        let series = inject_gauge_jitter(&EmbeddingSeries::from_trajectory(&traj).unwrap(), seed);
        let report = align_anchor(&series, &anchors, 0).unwrap().with_errors(&series, &traj.states).unwrap();
        prop_assert!(report.per_time_error.iter().all(|&e| e < 1e-10));
    }

    #[test]
    fn lyapunov_inversion_round_trip((seed, n, d) in shape()) {
        let mut rng = rng_from_seed(seed);
        let x = uniform_positive_ball(&mut rng, n, d);
        let dec = spectral_decompose(&probability_matrix(&x), d, 1e-12).unwrap();
        prop_assume!(dec.gap() > 1e-4 * dec.eigenvalues[0]);
        let n_mat = random_symmetric(&mut rng, n);
        let p = dec.reconstruct();
        let inv = lyapunov_invert(&dec, &(&n_mat * &p + &p * &n_mat)).unwrap();
        prop_assert!(inv.residual <= 1e-8);
        let v = &dec.eigenvectors;
        let rr = v.transpose() * &n_mat * v;
        prop_assert!((&inv.range_range - &rr).norm() <= 1e-8 * rr.norm().max(1.0));
        if n > d {
            let free = random_symmetric(&mut rng, n - d);
            let a = inv.generator() * &x;
            let b = inv.generator_with_free_block(&free).unwrap() * &x;
            prop_assert!((a - b).norm() <= 1e-12 * free.norm().max(1.0) * x.norm().max(1.0));
        }
    }

    #[test]
    fn fisher_is_psd_and_bounded(seed in any::<u64>(), t_count in 1usize..40) {
        let mut rng = rng_from_seed(seed);
        let x = uniform_positive_ball(&mut rng, 15, 2);
        let dec = spectral_decompose(&probability_matrix(&x), 2, 1e-12).unwrap();
        prop_assume!(dec.min_relative_separation() > 1e-3);
        let report = fisher_polynomial(&dec, &[-0.3, 0.01], t_count, 0.05, DEFAULT_PROB_FLOOR).unwrap();
        let info = &report.info_matrix;
        prop_assert!(linalg::asymmetry(info) <= 1e-12 * info.amax());
        let (vals, _) = linalg::sym_eigen_desc(info);
        prop_assert!(vals[1] >= -1e-10 * info.trace());
        prop_assert!(crb_baseline_check(info).iter().all(|r| r.holds));
    }

    #[test]
    fn matrices_survive_csv_and_json(seed in any::<u64>(), r in 1usize..8, c in 1usize..8) {
        let mut rng = rng_from_seed(seed);
        let m = gaussian_matrix(&mut rng, r, c) * 1e3;
        let dir = tempfile::tempdir().unwrap();
        for name in ["m.csv", "m.json"] {
            let path = dir.path().join(name);
            write_matrix(&path, &m).unwrap();
            prop_assert_eq!(read_matrix(&path).unwrap(), m.clone());
        }
    }
}

#[test]
fn linear_crb_trace_decreases_with_horizon() {
    let mut rng = rng_from_seed(3);
    let x = uniform_positive_ball(&mut rng, 30, 2);
    let dec = spectral_decompose(&probability_matrix(&x), 2, 1e-12).unwrap();
    let mut prev = f64::INFINITY;
    for t_count in [5, 10, 20, 40, 80] {
        let report = fisher_polynomial(&dec, &[-0.05], t_count, 0.05, DEFAULT_PROB_FLOOR).unwrap();
        assert!(report.crb_trace < prev);
        prev = report.crb_trace;
    }
}

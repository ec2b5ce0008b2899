mod linalg {
    use gappy_core::evaluation::linalg::*;
    use gappy_core::evaluation::EvalError;
    use ndarray::Array2;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let s = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let eig = sym_eig_small(s.view()).unwrap();
        assert_eq!(eig.values.to_vec(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn two_by_two_analytic() {
        let s = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = sym_eig_small(s.view()).unwrap();
        assert_abs_diff_eq!(eig.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-14);
        let r = eig.reconstruct();
        assert_abs_diff_eq!(r, s, epsilon = 1e-13);
    }

    #[test]
    fn asymmetric_rejected() {
        let s = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(
            sym_eig_small(s.view()),
            Err(EvalError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn zero_matrix() {
        let s = Array2::<f64>::zeros((3, 3));
        let eig = sym_eig_small(s.view()).unwrap();
        assert!(eig.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn works_in_single_precision() {
        let s = array![[2.0f32, 1.0], [1.0, 2.0]];
        let eig = sym_eig_small(s.view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn determinant_small_cases() {
        assert_abs_diff_eq!(determinant(array![[2.0, 1.0], [1.0, 2.0]].view()), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            determinant(array![[0.0, 1.0], [1.0, 0.0]].view()),
            -1.0,
            epsilon = 1e-14
        );
        assert_eq!(determinant(array![[1.0, 2.0], [2.0, 4.0]].view()), 0.0);
    }

    #[test]
    fn orthonormal_completion() {
        let mut b = Array2::<f64>::zeros((3, 3));
        let s = 1.0 / 2f64.sqrt();
        b.column_mut(0).assign(&array![s, s, 0.0]);
        complete_orthonormal(&mut b, 1);
        let g = b.t().dot(&b);
        assert_abs_diff_eq!(g, Array2::eye(3), epsilon = 1e-12);
    }
}

mod procrustes {
    use gappy_core::evaluation::procrustes::*;
    use gappy_core::evaluation::EvalError;
    use ndarray::{Array1, Array2};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn square() -> Array2<f64> {
        array![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0], [0.0, 2.0], [0.3, 0.7]]
    }

    #[test]
    fn identity_recovered() {
        let s = square();
        let t = procrustes_fit(s.view(), s.view(), false).unwrap();
        assert_abs_diff_eq!(t.rotation, Array2::eye(2), epsilon = 1e-12);
        assert_abs_diff_eq!(t.translation, Array1::zeros(2), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_plus_shift_recovered() {
        let s = square();
        let rot = array![[0.0, -1.0], [1.0, 0.0]];
        let shift = array![1.0, 2.0];
        let truth = RigidTransform {
            rotation: rot.clone(),
            translation: shift.clone(),
        };
        let d = truth.apply(s.view());
        let fit = procrustes_fit(s.view(), d.view(), false).unwrap();
        assert_abs_diff_eq!(fit.rotation, rot, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.translation, shift, epsilon = 1e-10);
    }

    #[test]
    fn mirror_needs_reflection() {
        let s = square();
        let mut d = s.clone();
        d.column_mut(0).mapv_inplace(|x| -x);
        let proper = procrustes_fit(s.view(), d.view(), false).unwrap();
        assert_abs_diff_eq!(proper.determinant(), 1.0, epsilon = 1e-12);
        assert!(residual(&proper, s.view(), d.view()) > 1e-3);
        let improper = procrustes_fit(s.view(), d.view(), true).unwrap();
        assert_abs_diff_eq!(improper.determinant(), -1.0, epsilon = 1e-12);
        assert!(residual(&improper, s.view(), d.view()) < 1e-20);
    }

    #[test]
    fn collinear_points_in_3d_rejected() {
        let s = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            procrustes_fit(s.view(), s.view(), false),
            Err(EvalError::Degenerate(_))
        ));
    }

    #[test]
    fn collinear_points_in_plane_still_fit() {
        // rank p - 1 is enough for a proper rotation
        let s = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let fit = procrustes_fit(s.view(), s.view(), false).unwrap();
        assert!(residual(&fit, s.view(), s.view()) < 1e-20);
    }

    #[test]
    fn too_few_points() {
        let s = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert!(procrustes_fit(s.view(), s.view(), true).is_err());
    }
}

mod metrics {
    use gappy_core::evaluation::metrics::*;
    use gappy_core::evaluation::EvalError;
    use ndarray::array;

    #[test]
    fn identity_embedding_has_zero_error() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let s = isometry_error(x.view(), x.view(), 100, 0).unwrap();
        assert_eq!(s.rmse, 0.0);
        assert_eq!(s.max_error, 0.0);
        assert_eq!(s.n_pairs, 6);
    }

    #[test]
    fn doubled_scale_is_one_hundred_percent() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let y = &x * 2.0;
        let s = isometry_error(y.view(), x.view(), 100, 0).unwrap();
        for &(l, e) in &s.pairs {
            assert!(((e - l) / l - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relative_rmse_by_hand() {
        // pairs: latent 1 vs embedded 2 -> error 1, mean latent 1
        let x = array![[0.0], [1.0]];
        let y = array![[0.0], [2.0]];
        let s = isometry_error(y.view(), x.view(), 10, 0).unwrap();
        assert_eq!(s.rmse, 1.0);
        assert_eq!(s.relative_rmse, 1.0);
    }

    #[test]
    fn count_mismatch() {
        let x = array![[0.0], [1.0]];
        let y = array![[0.0], [1.0], [2.0]];
        assert!(matches!(
            isometry_error(y.view(), x.view(), 10, 0),
            Err(EvalError::CountMismatch { .. })
        ));
        assert!(matches!(
            isometry_error(x.slice(ndarray::s![..1, ..]), x.slice(ndarray::s![..1, ..]), 10, 0),
            Err(EvalError::TooFewPoints(1))
        ));
    }

    #[test]
    fn large_sets_are_sampled_deterministically() {
        let n = ALL_PAIRS_LIMIT + 10;
        let x = ndarray::Array2::from_shape_fn((n, 2), |(i, j)| (i * (j + 1)) as f64 * 0.01);
        let y = &x * 1.1;
        let a = isometry_error(y.view(), x.view(), 5000, 7).unwrap();
        let b = isometry_error(y.view(), x.view(), 5000, 7).unwrap();
        assert_eq!(a.n_pairs, 5000);
        assert_eq!(a, b);
        let n = a.pairs.len() as f64;
        let rms = (a.pairs.iter().map(|&(l, _)| l * l).sum::<f64>() / n).sqrt();
        let mean = a.pairs.iter().map(|&(l, _)| l).sum::<f64>() / n;
        assert!((a.relative_rmse - 0.1 * rms / mean).abs() < 1e-9);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![MetricRow {
            scenario: "same_domain".into(),
            method: "gappy_loca".into(),
            rmse: 0.012345678901234567,
            relative_rmse: 0.05,
            max_error: 0.3,
            n_pairs: 10,
            seed: 3,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,method,rmse,relative_rmse,max_error,n_pairs,seed"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);

        let mut buf = Vec::new();
        write_scatter_csv(&mut buf, &[(1.0, 1.5), (2.0, 2.25)]).unwrap();
        assert_eq!(read_scatter_csv(buf.as_slice()).unwrap(), vec![(1.0, 1.5), (2.0, 2.25)]);
    }
}

mod completion {
    use gappy_core::evaluation::completion::*;
    use gappy_core::evaluation::EvalError;
    use ndarray::array;

    fn full(points: &[[f64; 2]]) -> PartialDistanceMatrix {
        let mut p = PartialDistanceMatrix::new(points.len());
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
                p.set(i, j, d);
            }
        }
        p
    }

    #[test]
    fn fully_known_is_unchanged() {
        let p = full(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let out = complete_from_points(&[None, None, None], &p).unwrap();
        assert_eq!(out, p.values);
    }

    #[test]
    fn unknown_entries_use_embedding_distances() {
        let mut p = PartialDistanceMatrix::new(3);
        p.set(0, 1, 1.0);
        let pts = vec![Some(array![0.0, 0.0]), Some(array![1.0, 0.0]), Some(array![0.0, 2.0])];
        let out = complete_from_points(&pts, &p).unwrap();
        assert_eq!(out[[0, 2]], 2.0);
        assert!((out[[1, 2]] - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(out, out.t());
        assert!(out.diag().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unmapped_row_is_an_error() {
        let p = PartialDistanceMatrix::new(2);
        assert!(matches!(
            complete_from_points(&[Some(array![0.0]), None], &p),
            Err(EvalError::Unmapped(1))
        ));
    }

    #[test]
    fn invalid_partials_are_rejected() {
        let mut p = PartialDistanceMatrix::new(2);
        p.known[[0, 1]] = true;
        assert!(p.validate().is_err());
        let mut p = PartialDistanceMatrix::new(2);
        p.set(0, 1, -1.0);
        assert!(p.validate().is_err());
    }
}

use gappy_core::evaluation::linalg::determinant;
use gappy_core::evaluation::procrustes::residual;
use gappy_core::evaluation::{complete_from_points, isometry_error, procrustes_fit, sym_eig_small, PartialDistanceMatrix};
use gappy_core::model::roundtrip;
use gappy_core::rigidity::{check_point_rigidity, disconnected_subgraphs, select_point_modalities, Graph, RigidityError};
use gappy_core::{Burst, CalibrationLink, FusionDataset, ModalityData, SensorId, SensorPoint};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn symmetric(n: usize) -> impl Strategy<Value = Array2<f64>> {
    matrix(n, n, -2.0, 2.0).prop_map(|a| (&a + &a.t()) * 0.5)
}

/// Orthogonal matrix from Gram-Schmidt on a random square; `None` when the
/// draw is too close to singular.
fn orthogonalize(mut q: Array2<f64>) -> Option<Array2<f64>> {
    let p = q.nrows();
    for j in 0..p {
        for k in 0..j {
            let dot = q.column(j).dot(&q.column(k));
            let ck = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-dot, &ck);
        }
        let n = q.column(j).dot(&q.column(j)).sqrt();
        if n < 1e-3 {
            return None;
        }
        q.column_mut(j).mapv_inplace(|v| v / n);
    }
    Some(q)
}

/// `(points, rotation, translation)` with a possibly improper rotation.
fn rigid_case() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, Array1<f64>)> {
    (1usize..=4, 3usize..=25).prop_flat_map(|(p, n)| {
        (
            matrix(n, p, -5.0, 5.0),
            matrix(p, p, -1.0, 1.0).prop_filter_map("near-singular draw", orthogonalize),
            prop::collection::vec(-10.0..10.0f64, p).prop_map(Array1::from),
        )
    })
}

/// Laplace expansion along the first row.
fn cofactor_det(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return m[[0, 0]];
    }
    let mut total = 0.0;
    for c in 0..n {
        let minor = Array2::from_shape_fn((n - 1, n - 1), |(i, j)| m[[i + 1, if j < c { j } else { j + 1 }]]);
        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * m[[0, c]] * cofactor_det(&minor);
    }
    total
}

/// Components from the reachability closure (Floyd-Warshall style).
fn closure_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut reach = vec![vec![false; n]; n];
    for (v, row) in reach.iter_mut().enumerate() {
        row[v] = true;
    }
    for &(a, b) in edges {
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let first = (0..n).find(|&u| reach[v][u]).unwrap();
        if first == v {
            out.push((0..n).filter(|&u| reach[v][u]).collect());
        }
    }
    out
}

fn graph_case() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=50).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..=2 * n)))
}

fn dataset() -> impl Strategy<Value = FusionDataset> {
    let modality = (1usize..=4, 1usize..=3, 2usize..=4, 0.01..3.0f64);
    prop::collection::vec(modality, 1..=3).prop_flat_map(|mods| {
        let parts: Vec<_> = mods
            .iter()
            .enumerate()
            .map(|(k, &(dim, bursts, samples, sigma))| {
                prop::collection::vec(prop::collection::vec(prop::collection::vec(-1e3..1e3f64, dim), samples), bursts)
                    .prop_map(move |b| ModalityData {
                        modality_id: k + 1,
                        ambient_dim: dim,
                        sigma,
                        bursts: b
                            .into_iter()
                            .enumerate()
                            .map(|(i, samples)| Burst { burst_id: i, samples })
                            .collect(),
                    })
            })
            .collect();
        (parts, 0usize..4).prop_map(|(modalities, links)| {
            let last = modalities.len();
            let calibration = (0..links.min(modalities[0].bursts.len()))
                .map(|i| CalibrationLink::new(i, 0, 1, last))
                .filter(|_| last > 1)
                .collect();
            FusionDataset {
                intrinsic_dim: 1,
                modalities,
                calibration,
            }
        })
    })
}

/// Point sets over a small sensor universe, so adjacency is frequent.
fn sensor_points(universe: u64) -> impl Strategy<Value = Vec<SensorPoint>> {
    prop::collection::vec(prop::collection::btree_set(0..universe, 0..=universe as usize), 2..=12).prop_map(|sets| {
        sets.into_iter()
            .enumerate()
            .map(|(i, s)| SensorPoint {
                point_id: i as u64,
                sensor_ids: s.into_iter().map(SensorId::from).collect(),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dataset_survives_serialization(ds in dataset()) {
        prop_assert_eq!(roundtrip(&ds).unwrap(), ds);
    }

    #[test]
    fn dfs_components_match_transitive_closure((n, edges) in graph_case()) {
        let mut g = Graph::new(n);
        for &(a, b) in &edges {
            g.add_edge(a, b, 1);
        }
        prop_assert_eq!(disconnected_subgraphs(&g), closure_components(n, &edges));
    }

    #[test]
    fn isometry_error_vanishes_under_rigid_motion((x, q, t) in rigid_case()) {
        let moved = x.dot(&q.t()) + &t.view().insert_axis(Axis(0));
        let s = isometry_error(moved.view(), x.view(), 1000, 0).unwrap();
        prop_assert!(s.rmse < 1e-10, "rmse {}", s.rmse);
        prop_assert!(s.relative_rmse < 1e-10);
    }

    #[test]
    fn eigen_values_match_trace_and_determinant(a in (1usize..=6).prop_flat_map(symmetric)) {
        let eig = sym_eig_small(a.view()).unwrap();
        let trace: f64 = a.diag().sum();
        prop_assert!((eig.values.sum() - trace).abs() < 1e-9);
        let prod: f64 = eig.values.iter().product();
        prop_assert!((prod - cofactor_det(&a)).abs() < 1e-9 * (1.0 + prod.abs()));
        let back = eig.reconstruct();
        prop_assert!((&back - &a).iter().all(|v| v.abs() < 1e-9));
        let gram = eig.vectors.t().dot(&eig.vectors);
        prop_assert!((&gram - &Array2::<f64>::eye(a.nrows())).iter().all(|v| v.abs() < 1e-9));
        prop_assert!(eig.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_values_are_characteristic_roots(a in symmetric(5)) {
        let eig = sym_eig_small(a.view()).unwrap();
        for &lambda in eig.values.iter() {
            let shifted = &a - &(Array2::<f64>::eye(5) * lambda);
            prop_assert!(cofactor_det(&shifted).abs() < 1e-8, "det at {} is {}", lambda, cofactor_det(&shifted));
        }
    }

    #[test]
    fn lu_determinant_matches_cofactors(a in (1usize..=6).prop_flat_map(|n| matrix(n, n, -2.0, 2.0))) {
        let lu = determinant(a.view());
        let cf = cofactor_det(&a);
        prop_assert!((lu - cf).abs() < 1e-9 * (1.0 + cf.abs()));
    }

    #[test]
    fn procrustes_recovers_exact_motions((x, q, t) in rigid_case()) {
        let target = x.dot(&q.t()) + &t.view().insert_axis(Axis(0));
        prop_assume!(x.nrows() > x.ncols() + 1);
        let fit = procrustes_fit(x.view(), target.view(), true).unwrap();
        prop_assert!(residual(&fit, x.view(), target.view()) < 1e-12 * (1.0 + target.iter().map(|v| v * v).sum::<f64>()));
        prop_assert!(fit.orthogonality_defect() < 1e-10);
    }

    #[test]
    fn procrustes_residual_ignores_a_target_motion(
        (x, q, t) in rigid_case(),
        noise in matrix(25, 4, -1.0, 1.0),
        reflect in any::<bool>(),
    ) {
        let (n, p) = x.dim();
        prop_assume!(n > p + 1);
        let target = &x + &noise.slice(ndarray::s![..n, ..p]);
        let mut q = q;
        let det = determinant(q.view());
        if det < 0.0 && !reflect {
            q.column_mut(0).mapv_inplace(|v| -v);
        }
        let moved = target.dot(&q.t()) + &t.view().insert_axis(Axis(0));
        let a = procrustes_fit(x.view(), target.view(), reflect).unwrap();
        let b = procrustes_fit(x.view(), moved.view(), reflect).unwrap();
        let ra = residual(&a, x.view(), target.view());
        let rb = residual(&b, x.view(), moved.view());
        prop_assert!((ra - rb).abs() < 1e-7 * (1.0 + ra), "{} vs {}", ra, rb);
        if !reflect {
            prop_assert!(b.determinant() > 0.0);
        }
    }

    #[test]
    fn completion_is_symmetric_with_zero_diagonal(
        pts in (2usize..=10).prop_flat_map(|n| matrix(n, 2, -3.0, 3.0)),
        mask in prop::collection::vec(any::<bool>(), 100),
    ) {
        let n = pts.nrows();
        let mut partial = PartialDistanceMatrix::new(n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if mask[k % mask.len()] {
                    partial.set(i, j, 1.0 + k as f64);
                }
                k += 1;
            }
        }
        let points: Vec<_> = pts.rows().into_iter().map(|r| Some(r.to_owned())).collect();
        let full = complete_from_points(&points, &partial).unwrap();
        let mut k = 0;
        for i in 0..n {
            prop_assert_eq!(full[[i, i]], 0.0);
            for j in (i + 1)..n {
                prop_assert_eq!(full[[i, j]], full[[j, i]]);
                if mask[k % mask.len()] {
                    prop_assert_eq!(full[[i, j]], 1.0 + k as f64);
                } else {
                    let d = (&pts.row(i) - &pts.row(j)).mapv(|v| v * v).sum().sqrt();
                    prop_assert!((full[[i, j]] - d).abs() < 1e-12);
                }
                k += 1;
            }
        }
    }

    #[test]
    fn more_shared_sensors_never_break_rigidity(
        pts in sensor_points(8),
        d in 1usize..=2,
        extra in prop::collection::vec((0usize..12, 0u64..8), 1..6),
    ) {
        let before = check_point_rigidity(&pts, d).verdict;
        let mut grown = pts.clone();
        for (p, s) in extra {
            let point = &mut grown[p % pts.len()];
            let id = SensorId::from(s);
            if !point.sensor_ids.contains(&id) {
                point.sensor_ids.push(id);
            }
        }
        let after = check_point_rigidity(&grown, d).verdict;
        prop_assert!(!before || after);
    }

    #[test]
    fn selected_modalities_cover_every_point(pts in sensor_points(7), d in 1usize..=2) {
        let need = 2 * d + 1;
        let rigid = check_point_rigidity(&pts, d).verdict;
        match select_point_modalities(&pts, d) {
            Ok(sel) => {
                prop_assert!(rigid);
                prop_assert!(sel.report.verdict);
                for p in 0..pts.len() {
                    prop_assert!(!sel.memberships(p).is_empty(), "point {} uncovered", p);
                }
                for m in &sel.modalities {
                    prop_assert!(m.sensors.len() >= need);
                    let expected: Vec<usize> = (0..pts.len())
                        .filter(|&p| m.sensors.iter().all(|s| pts[p].sensor_ids.contains(s)))
                        .collect();
                    prop_assert_eq!(&m.members, &expected);
                }
            }
            Err(RigidityError::NotRigid { .. }) => prop_assert!(!rigid),
            Err(RigidityError::Uncoverable { points, .. }) => {
                prop_assert!(rigid);
                prop_assert!(!points.is_empty());
            }
        }
    }
}

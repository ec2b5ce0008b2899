use gappy_core::rigidity::*;
use gappy_core::model::{Burst, CalibrationLink, FusionDataset, GroundTruth, ModalityData, ModalityTruth};

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    let mut g = Graph::new(n);
    for &(a, b) in edges {
        g.add_edge(a, b, 1);
    }
    g
}

#[test]
fn path_graph_is_one_component() {
    assert_eq!(disconnected_subgraphs(&graph(3, &[(0, 1), (1, 2)])), vec![vec![0, 1, 2]]);
}

#[test]
fn two_components() {
    assert_eq!(
        disconnected_subgraphs(&graph(4, &[(0, 1), (2, 3)])),
        vec![vec![0, 1], vec![2, 3]]
    );
}

#[test]
fn empty_graph() {
    assert!(disconnected_subgraphs(&Graph::new(0)).is_empty());
}

#[test]
fn counting_constants() {
    assert_eq!(required_connections(2), 3);
    assert_eq!(required_common_sensors(2), 5);
    assert_eq!(required_connections(3), 6);
    assert_eq!(required_common_sensors(3), 7);
}

fn tiny_modality(id: usize, bursts: usize) -> ModalityData {
    ModalityData {
        modality_id: id,
        ambient_dim: 2,
        sigma: 0.1,
        bursts: (0..bursts)
            .map(|b| Burst {
                burst_id: b,
                samples: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            })
            .collect(),
    }
}

fn bodies(k: usize, links: &[(usize, usize)]) -> FusionDataset {
    FusionDataset {
        intrinsic_dim: 2,
        modalities: (0..k).map(|i| tiny_modality(i, 10)).collect(),
        calibration: links
            .iter()
            .enumerate()
            .map(|(n, &(a, b))| CalibrationLink::new(n, n, a, b))
            .collect(),
    }
}

#[test]
fn three_shared_points_are_enough_in_the_plane() {
    let r = check_patch_rigidity(&bodies(2, &[(0, 1); 3]), None);
    assert!(r.verdict);
    assert_eq!(r.deficits, vec![0, 0]);
}

#[test]
fn two_shared_points_leave_a_deficit() {
    let r = check_patch_rigidity(&bodies(2, &[(0, 1); 2]), None);
    assert!(!r.verdict);
    assert!(r.connected);
    assert_eq!(r.deficits, vec![1, 1]);
}

#[test]
fn disconnected_bodies() {
    let r = check_patch_rigidity(&bodies(3, &[(0, 1); 3]), None);
    assert!(!r.verdict);
    assert!(!r.connected);
    assert_eq!(r.components, vec![vec![0, 1], vec![2]]);
}

#[test]
fn single_body_is_trivially_rigid() {
    let r = check_patch_rigidity(&bodies(1, &[]), None);
    assert!(r.verdict);
    assert_eq!(r.required, 0);
}

fn truth_for(ds: &FusionDataset, centers: impl Fn(usize, usize) -> Vec<f64>, patches: impl Fn(usize, usize) -> usize) -> GroundTruth {
    GroundTruth {
        intrinsic_dim: 2,
        scenario: "test".into(),
        modalities: ds
            .modalities
            .iter()
            .map(|m| ModalityTruth {
                modality_id: m.modality_id,
                domain: String::new(),
                centers: (0..m.bursts.len()).map(|b| centers(m.modality_id, b)).collect(),
                patches: (0..m.bursts.len()).map(|b| patches(m.modality_id, b)).collect(),
            })
            .collect(),
    }
}

#[test]
fn collinear_calibration_points_warn() {
    let ds = bodies(2, &[(0, 1); 3]);
    let truth = truth_for(&ds, |_, b| vec![b as f64, 2.0 * b as f64], |_, _| 0);
    let r = check_patch_rigidity(&ds, Some(&truth));
    assert!(r.verdict);
    assert_eq!(r.warnings.len(), 1);

    let spread = truth_for(&ds, |_, b| vec![b as f64, (b * b) as f64], |_, _| 0);
    assert!(check_patch_rigidity(&ds, Some(&spread)).warnings.is_empty());
}

#[test]
fn patches_become_separate_bodies() {
    // modality 0 has two patches: bursts 0..5 and 5..10
    let mut ds = bodies(2, &[]);
    for n in 0..3 {
        ds.calibration.push(CalibrationLink::new(n, n, 0, 1));
        ds.calibration.push(CalibrationLink::new(5 + n, 5 + n, 0, 1));
    }
    let truth = truth_for(&ds, |_, b| vec![b as f64, (b * b) as f64], |m, b| if m == 0 && b >= 5 { 1 } else { 0 });
    let r = check_patch_rigidity(&ds, Some(&truth));
    assert_eq!(r.vertices.len(), 3);
    assert!(r.verdict);

    // only one patch linked: the other one floats
    ds.calibration.truncate(0);
    for n in 0..3 {
        ds.calibration.push(CalibrationLink::new(n, n, 0, 1));
    }
    let r = check_patch_rigidity(&ds, Some(&truth));
    assert!(!r.verdict);
    assert_eq!(r.components.len(), 2);
    // per modality the same links look sufficient
    assert!(check_patch_rigidity(&ds, None).verdict);
}

fn pt(id: u64, sensors: &[u64]) -> SensorPoint {
    SensorPoint {
        point_id: id,
        sensor_ids: sensors.iter().map(|&s| SensorId::Number(s)).collect(),
    }
}

#[test]
fn five_common_sensors_make_an_edge() {
    let g = point_graph(&[pt(0, &[1, 2, 3, 4, 5]), pt(1, &[1, 2, 3, 4, 5, 6])], 2);
    assert_eq!(g.multiplicity(0, 1), 5);
    let g = point_graph(&[pt(0, &[1, 2, 3, 4, 9]), pt(1, &[1, 2, 3, 4, 5, 6])], 2);
    assert_eq!(g.multiplicity(0, 1), 0);
}

#[test]
fn star_leaves_are_deficient() {
    let hub = pt(0, &(0..20).collect::<Vec<_>>());
    let leaves: Vec<_> = (0..4u64)
        .map(|l| pt(l + 1, &(l * 5..l * 5 + 5).collect::<Vec<_>>()))
        .collect();
    let mut points = vec![hub];
    points.extend(leaves);
    let r = check_point_rigidity(&points, 2);
    assert!(r.connected);
    assert_eq!(r.deficits[0], 0);
    assert!(r.deficits[1..].iter().all(|&d| d == 2));
    assert!(!r.verdict);
}

#[test]
fn one_shared_subset_gives_one_modality() {
    let points: Vec<_> = (0..6).map(|i| pt(i, &[1, 2, 3, 4, 5, 100 + i])).collect();
    let sel = select_point_modalities(&points, 2).unwrap();
    assert_eq!(sel.modalities.len(), 1);
    assert_eq!(sel.modalities[0].members, (0..6).collect::<Vec<_>>());
    assert_eq!(sel.modalities[0].sensors.len(), 5);
}

#[test]
fn two_subsets_with_common_points() {
    let a = [1, 2, 3, 4, 5];
    let b = [11, 12, 13, 14, 15];
    let mut points = Vec::new();
    let both: Vec<u64> = a.iter().chain(&b).copied().collect();
    for i in 0..4 {
        points.push(pt(i, &both));
    }
    for i in 4..9 {
        points.push(pt(i, &[a.as_slice(), &[50 + i]].concat()));
    }
    for i in 9..13 {
        points.push(pt(i, &[b.as_slice(), &[50 + i]].concat()));
    }
    let sel = select_point_modalities(&points, 2).unwrap();
    assert_eq!(sel.modalities.len(), 2);
    assert!(sel.report.verdict);
    for p in 0..4 {
        assert_eq!(sel.memberships(p).len(), 2, "type-1 point {p} should be common");
    }
    for p in 4..13 {
        assert_eq!(sel.memberships(p).len(), 1);
    }
}

#[test]
fn selection_requires_point_rigidity() {
    let points = vec![pt(0, &[1, 2, 3, 4, 5]), pt(1, &[1, 2, 3, 4, 5])];
    assert!(matches!(
        select_point_modalities(&points, 2),
        Err(RigidityError::NotRigid { .. })
    ));
}

#[test]
fn sensor_ids_accept_numbers_and_names() {
    let p: Vec<SensorPoint> =
        serde_json::from_str(r#"[{"point_id": 3, "sensor_ids": [1, "wifi-7"]}]"#).unwrap();
    assert_eq!(p[0].sensor_ids, vec![SensorId::Number(1), SensorId::from("wifi-7")]);
}

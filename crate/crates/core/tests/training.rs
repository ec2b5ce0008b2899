use gappy_core::loca::checkpoint::TrainingMeta;
use gappy_core::loca::{train, Checkpoint, GappyLocaModel, PreparedData, Projection, TrainConfig, TrainError};
use gappy_core::model::{from_json_str, to_json_string};
use gappy_core::scenarios::{generate, ScenarioConfig, ScenarioKind};
use gappy_core::FusionDataset;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dataset() -> FusionDataset {
    let mut cfg = ScenarioConfig::new(ScenarioKind::SameDomain);
    cfg.points = Some(24);
    cfg.burst_size = Some(8);
    generate(&cfg, 5).unwrap().0
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        hidden: vec![8, 8],
        batch_bursts: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn params(model: &GappyLocaModel<f64>) -> Vec<f64> {
    model
        .modalities
        .iter()
        .flat_map(|m| m.encoder.params().iter().chain(m.decoder.params()).copied())
        .collect()
}

fn samples(ds: &FusionDataset, k: usize) -> Array2<f64> {
    let rows: Vec<&Vec<f64>> = ds.modalities[k].bursts.iter().flat_map(|b| &b.samples).collect();
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset();
    let cfg = small_config();
    let (a, ha) = train::<f64>(&ds, &cfg).unwrap();
    let (b, hb) = train::<f64>(&ds, &cfg).unwrap();
    assert!(ha.same_losses(&hb));
    assert_eq!(params(&a), params(&b));
}

#[test]
fn worker_count_does_not_change_the_result() {
    let ds = small_dataset();
    let one = TrainConfig {
        threads: Some(1),
        ..small_config()
    };
    let two = TrainConfig {
        threads: Some(2),
        ..small_config()
    };
    let (a, _) = train::<f64>(&ds, &one).unwrap();
    let (b, _) = train::<f64>(&ds, &two).unwrap();
    assert_eq!(params(&a), params(&b));
}

#[test]
fn seed_changes_the_result() {
    let ds = small_dataset();
    let (a, _) = train::<f64>(&ds, &small_config()).unwrap();
    let (b, _) = train::<f64>(&ds, &TrainConfig { seed: 12, ..small_config() }).unwrap();
    assert_ne!(params(&a), params(&b));
}

#[test]
fn training_lowers_the_objective() {
    let ds = small_dataset();
    let (_, h) = train::<f64>(&ds, &TrainConfig { epochs: 60, ..small_config() }).unwrap();
    assert!(h.final_losses.total < h.initial.total, "{} vs {}", h.final_losses.total, h.initial.total);
    assert_eq!(h.epochs.len(), 60);
    assert!(h.to_csv().lines().count() > 60);
}

#[test]
fn extended_schedule_is_deterministic() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        reflection_relaxation: true,
        refine_fraction: 0.5,
        restarts: 2,
        restart_epochs: 3,
        alignment_fraction: 0.3,
        calibration_warmup: 0.2,
        per_sample_reconstruction: true,
        ..small_config()
    };
    let (a, ha) = train::<f64>(&ds, &cfg).unwrap();
    let (b, hb) = train::<f64>(&ds, &cfg).unwrap();
    assert!(ha.same_losses(&hb));
    assert_eq!(params(&a), params(&b));
    assert_eq!(ha.probes.len(), 2);
    // refinement folds the relaxed dimension away
    assert_eq!(a.output_dim(), ds.intrinsic_dim);
    assert!(a.projection.is_none());
}

#[test]
fn single_precision_training_runs() {
    let ds = small_dataset();
    let (model, h) = train::<f32>(&ds, &small_config()).unwrap();
    assert!(h.final_losses.total.is_finite());
    assert_eq!(model.output_dim(), ds.intrinsic_dim);
}

#[test]
fn invalid_config_names_the_field() {
    let ds = small_dataset();
    let err = train::<f64>(&ds, &TrainConfig { batch_bursts: 0, ..small_config() }).unwrap_err();
    match err {
        TrainError::Invalid { field, .. } => assert_eq!(field, "batch_bursts"),
        other => panic!("unexpected error {other}"),
    }
}

fn relaxed_model(ds: &FusionDataset) -> GappyLocaModel<f64> {
    let cfg = TrainConfig {
        reflection_relaxation: true,
        epochs: 5,
        ..small_config()
    };
    let (model, _) = train::<f64>(ds, &cfg).unwrap();
    assert_eq!(model.embedding_dim, ds.intrinsic_dim + 1);
    model
}

#[test]
fn folding_a_projection_is_exact_for_encoders() {
    let ds = small_dataset();
    let mut model = relaxed_model(&ds);
    let y = samples(&ds, 0);
    model.projection = None;
    let z = model.embed(0, y.view()).unwrap();
    model.projection = Some(Projection::fit(z.view(), ds.intrinsic_dim).unwrap());
    let before = model.embed(0, y.view()).unwrap();
    let proj = model.projection.clone().unwrap();
    let mut folded = model.clone();
    folded.fold_projection().unwrap();
    assert!(folded.projection.is_none());
    assert_eq!(folded.embedding_dim, ds.intrinsic_dim);
    let after = folded.embed(0, y.view()).unwrap();
    assert!((&after - &before).iter().all(|v| v.abs() < 1e-12));

    // decoders agree on the projected subspace
    let w = before.slice(ndarray::s![..5, ..]).to_owned();
    let lifted = w.dot(&proj.basis.t()) + &proj.mean.view().insert_axis(Axis(0));
    let old = model.modalities[0].decode(lifted.view()).unwrap();
    let new = folded.modalities[0].decode(w.view()).unwrap();
    assert!((&old - &new).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn embedding_map_composes_with_both_networks() {
    let ds = small_dataset();
    let model = relaxed_model(&ds);
    let p = model.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // upper triangular with unit-ish diagonal, inverted by back substitution
    let mut a = Array2::<f64>::eye(p);
    for i in 0..p {
        a[[i, i]] = rng.random_range(0.5..2.0);
        for j in (i + 1)..p {
            a[[i, j]] = rng.random_range(-1.0..1.0);
        }
    }
    let mut a_inv = Array2::<f64>::zeros((p, p));
    for col in 0..p {
        for i in (0..p).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in (i + 1)..p {
                s -= a[[i, k]] * a_inv[[k, col]];
            }
            a_inv[[i, col]] = s / a[[i, i]];
        }
    }
    let t = Array1::from_shape_fn(p, |_| rng.random_range(-2.0..2.0));
    let back = -a_inv.dot(&t);

    let mut nets = model.modalities[1].clone();
    nets.map_embedding(a.view(), t.view(), a_inv.view(), back.view()).unwrap();
    let y = samples(&ds, 1);
    let old = model.modalities[1].encode(y.view()).unwrap();
    let new = nets.encode(y.view()).unwrap();
    let expected = old.dot(&a.t()) + &t.view().insert_axis(Axis(0));
    assert!((&new - &expected).iter().all(|v| v.abs() < 1e-10));

    let old_dec = model.modalities[1].decode(old.view()).unwrap();
    let new_dec = nets.decode(new.view()).unwrap();
    assert!((&old_dec - &new_dec).iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn checkpoint_roundtrip_preserves_embeddings() {
    let ds = small_dataset();
    let (model, _) = train::<f64>(&ds, &small_config()).unwrap();
    let meta = TrainingMeta {
        seed: 11,
        epochs: 30,
        weights: small_config().weights,
    };
    let ck = Checkpoint::from_model(&model, meta);
    let text = to_json_string(&ck).unwrap();
    let back: Checkpoint = from_json_str(&text, "checkpoint").unwrap();
    assert_eq!(back, ck);
    let restored = back.to_model::<f64>().unwrap();
    for k in 0..ds.modalities.len() {
        let y = samples(&ds, k);
        assert_eq!(model.embed(k, y.view()).unwrap(), restored.embed(k, y.view()).unwrap());
    }
}

#[test]
fn prepared_data_keeps_every_burst() {
    let ds = small_dataset();
    let prepared = PreparedData::<f64>::new(&ds);
    assert_eq!(prepared.bursts.iter().map(Vec::len).sum::<usize>(), ds.total_bursts());
    assert_eq!(prepared.links.len(), ds.calibration.len());
}

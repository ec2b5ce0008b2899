//! The experiment stages and the files they leave in a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gappy_core::evaluation::metrics::write_metrics_csv;
use gappy_core::evaluation::{
    baseline_register, complete_distance_matrix, isometry_error, IsometrySummary, MetricRow, PartialDistanceMatrix,
};
use gappy_core::loca::checkpoint::TrainingMeta;
use gappy_core::loca::{embed_dataset, train};
use gappy_core::model::{read_json, write_json};
use gappy_core::rigidity::check_patch_rigidity;
use gappy_core::scenarios::{derive_seed, generate};
use gappy_core::{Checkpoint, FusionDataset, GroundTruth, Model64, RigidityReport, TrainHistory};
use log::{info, warn};
use ndarray::{Array1, Array2};

use crate::config::ExperimentConfig;
use crate::report::{emit_report, write_checks};
use crate::CliError;

pub const DATASET: &str = "dataset.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const RIGIDITY: &str = "rigidity.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.csv";
pub const EMBEDDING: &str = "embedding.csv";
pub const SCATTER_SVG: &str = "isometry.svg";
pub const SUMMARY: &str = "summary.txt";
pub const CHECKS: &str = "checks.csv";
pub const CONFIG_COPY: &str = "config.toml";

/// Files every complete run leaves behind, besides the scatter CSVs.
pub const ARTIFACTS: [&str; 8] = [
    DATASET,
    GROUND_TRUTH,
    RIGIDITY,
    CHECKPOINT,
    HISTORY,
    METRICS,
    EMBEDDING,
    SCATTER_SVG,
];

pub const METHOD_FUSED: &str = "gappy_loca";
pub const METHOD_BASELINE: &str = "baseline";
pub const METHOD_COMPLETION: &str = "completion";

const HELD_OUT_STREAM: u64 = 0x4E1D_0000;
const PAIR_STREAM: u64 = 0x9A12_0000;

pub fn scatter_file(method: &str) -> String {
    format!("scatter_{method}.csv")
}

/// One pass/fail condition of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub metrics: Vec<MetricRow>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn metric(&self, method: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.method == method)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Creates `<parent>/<scenario>-seed<seed>-<timestamp>`, adding a counter
/// when that name is taken.
pub fn create_run_dir(parent: &Path, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{}-seed{}-{stamp}", config.scenario.kind.name(), config.seed);
    let mut n = 1;
    loop {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
}

/// Uses `dir` as is, creating it when missing.
pub fn open_run_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.to_path_buf())
}

pub fn generate_stage(config: &ExperimentConfig, dir: &Path) -> Result<(FusionDataset, GroundTruth), CliError> {
    info!("generating {} data with seed {}", config.scenario.kind.name(), config.seed);
    let (dataset, truth) = generate(&config.scenario, config.seed)?;
    write_json(&dir.join(DATASET), &dataset)?;
    write_json(&dir.join(GROUND_TRUTH), &truth)?;
    write_text(&dir.join(CONFIG_COPY), &config.to_toml()?)?;
    Ok((dataset, truth))
}

/// Reads the run's dataset, generating it first when absent.
pub fn load_or_generate(config: &ExperimentConfig, dir: &Path) -> Result<(FusionDataset, GroundTruth), CliError> {
    let (d, t) = (dir.join(DATASET), dir.join(GROUND_TRUTH));
    if d.exists() && t.exists() {
        Ok((read_json(&d)?, read_json(&t)?))
    } else {
        generate_stage(config, dir)
    }
}

pub fn rigidity_stage(dataset: &FusionDataset, truth: &GroundTruth, dir: &Path) -> Result<RigidityReport, CliError> {
    let report = check_patch_rigidity(dataset, Some(truth));
    for w in &report.warnings {
        warn!("{w}");
    }
    if !report.verdict {
        warn!("observation graph is not rigid: deficits {:?}, components {:?}", report.deficits, report.components);
    }
    write_json(&dir.join(RIGIDITY), &report)?;
    Ok(report)
}

pub fn train_stage(
    config: &ExperimentConfig,
    dataset: &FusionDataset,
    dir: &Path,
) -> Result<(Model64, TrainHistory), CliError> {
    let tc = config.training_config();
    info!("training for {} epochs", tc.epochs);
    let (model, history) = train::<f64>(dataset, &tc)?;
    let meta = TrainingMeta {
        seed: tc.seed,
        epochs: tc.epochs,
        weights: tc.weights,
    };
    write_json(&dir.join(CHECKPOINT), &Checkpoint::from_model(&model, meta))?;
    write_text(&dir.join(HISTORY), &history.to_csv())?;
    info!("final loss {:.6}", history.final_losses.total);
    Ok((model, history))
}

pub fn load_or_train(config: &ExperimentConfig, dataset: &FusionDataset, dir: &Path) -> Result<Model64, CliError> {
    let path = dir.join(CHECKPOINT);
    if path.exists() {
        let ck: Checkpoint = read_json(&path)?;
        Ok(ck.to_model::<f64>()?)
    } else {
        Ok(train_stage(config, dataset, dir)?.0)
    }
}

fn stack(points: &[Vec<f64>]) -> Array2<f64> {
    let p = points.first().map_or(0, Vec::len);
    Array2::from_shape_fn((points.len(), p), |(i, j)| points[i][j])
}

/// Burst means of `dataset` laid out per modality, with their latent centers.
struct Embedded {
    method: &'static str,
    means: Vec<Vec<Array1<f64>>>,
}

fn flatten(e: &Embedded) -> Vec<Vec<f64>> {
    e.means.iter().flatten().map(|m| m.to_vec()).collect()
}

fn latent_rows(dataset: &FusionDataset, truth: &GroundTruth) -> Result<Vec<Vec<f64>>, CliError> {
    let mut out = Vec::new();
    for m in &dataset.modalities {
        let mt = truth
            .modality(m.modality_id)
            .ok_or_else(|| CliError::Mismatch(format!("ground truth lacks modality {}", m.modality_id)))?;
        if mt.centers.len() != m.bursts.len() {
            return Err(CliError::Mismatch(format!(
                "modality {} has {} bursts but {} ground-truth centers",
                m.modality_id,
                m.bursts.len(),
                mt.centers.len()
            )));
        }
        out.extend(mt.centers.iter().cloned());
    }
    Ok(out)
}

fn thin(pairs: &[(f64, f64)], limit: usize) -> Vec<(f64, f64)> {
    let stride = pairs.len().div_ceil(limit.max(1)).max(1);
    pairs.iter().step_by(stride).copied().collect()
}

/// Scores of the fused model's distance completion on the cross-modality
/// block: distances between bursts of one modality are known, all others
/// are filled in from the embedding.
fn completion_summary(model: &Model64, dataset: &FusionDataset, truth: &GroundTruth) -> Result<IsometrySummary, CliError> {
    // rows: one per latent center; calibration-linked bursts share a row
    let mut row_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut index: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for link in &dataset.calibration {
        let a = (link.modality_a, link.burst_a);
        let b = (link.modality_b, link.burst_b);
        let row = match (row_of.get(&a).copied(), row_of.get(&b).copied()) {
            (Some(r), _) | (None, Some(r)) => r,
            (None, None) => {
                index.push(Vec::new());
                centers.push(truth.center(a.0, a.1).cloned().unwrap_or_default());
                index.len() - 1
            }
        };
        for key in [a, b] {
            if let std::collections::btree_map::Entry::Vacant(v) = row_of.entry(key) {
                v.insert(row);
                index[row].push(key);
            }
        }
    }
    for m in &dataset.modalities {
        for i in 0..m.bursts.len() {
            let key = (m.modality_id, i);
            if !row_of.contains_key(&key) {
                row_of.insert(key, index.len());
                index.push(vec![key]);
                centers.push(
                    truth
                        .center(key.0, key.1)
                        .cloned()
                        .ok_or_else(|| CliError::Mismatch(format!("no ground truth for burst {i} of modality {}", key.0)))?,
                );
            }
        }
    }
    let n = index.len();
    let owners: Vec<Vec<usize>> = index.iter().map(|o| o.iter().map(|&(k, _)| k).collect()).collect();
    let dist = |i: usize, j: usize| -> f64 {
        centers[i]
            .iter()
            .zip(&centers[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut partial = PartialDistanceMatrix::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if owners[i].iter().any(|k| owners[j].contains(k)) {
                partial.set(i, j, dist(i, j));
            }
        }
    }
    let filled = complete_distance_matrix(model, dataset, &index, &partial)?;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !partial.known[[i, j]] {
                pairs.push((dist(i, j), filled[[i, j]]));
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Mismatch("no cross-modality pairs to complete".into()));
    }
    Ok(IsometrySummary::from_pairs(pairs))
}

fn embedding_csv(dataset: &FusionDataset, latent: &[Vec<f64>], sets: &[Embedded]) -> String {
    let d = latent.first().map_or(0, Vec::len);
    let p = sets
        .iter()
        .flat_map(|s| s.means.iter().flatten())
        .next()
        .map_or(0, Array1::len);
    let mut out = String::from("method,modality_id,burst");
    for j in 0..d {
        out.push_str(&format!(",latent_{j}"));
    }
    for j in 0..p {
        out.push_str(&format!(",embedded_{j}"));
    }
    out.push('\n');
    for set in sets {
        let mut row = 0;
        for (k, m) in dataset.modalities.iter().enumerate() {
            for (i, e) in set.means[k].iter().enumerate() {
                out.push_str(&format!("{},{},{i}", set.method, m.modality_id));
                for v in &latent[row] {
                    out.push_str(&format!(",{v}"));
                }
                for v in e {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
                row += 1;
            }
        }
    }
    out
}

fn check(name: &str, value: f64, limit: f64, passed: bool) -> Check {
    Check {
        name: name.to_string(),
        value,
        limit,
        passed,
    }
}

/// Scores `model` (and the configured extras), writes metrics, scatter and
/// embedding files and the report, and returns the threshold checks.
pub fn evaluate_stage(
    config: &ExperimentConfig,
    dataset: &FusionDataset,
    rigidity: &RigidityReport,
    model: &Model64,
    dir: &Path,
) -> Result<Outcome, CliError> {
    let ev = &config.evaluation;
    let scenario = config.scenario.kind.name();
    let (eval_data, eval_truth) = if ev.held_out {
        generate(&config.scenario, derive_seed(config.seed, HELD_OUT_STREAM))?
    } else {
        (dataset.clone(), read_json(&dir.join(GROUND_TRUTH))?)
    };
    let latent = latent_rows(&eval_data, &eval_truth)?;
    let latent_m = stack(&latent);
    let pair_seed = derive_seed(config.seed, PAIR_STREAM);

    let mut sets = vec![Embedded {
        method: METHOD_FUSED,
        means: embed_dataset(model, &eval_data)?
            .into_iter()
            .map(|m| m.into_iter().map(|b| b.mean).collect())
            .collect(),
    }];
    if ev.baseline {
        info!("training the per-modality baseline");
        let baseline = baseline_register::<f64>(dataset, &config.training_config())?;
        for w in &baseline.warnings {
            warn!("baseline: {w}");
        }
        sets.push(Embedded {
            method: METHOD_BASELINE,
            means: baseline.embed_means(&eval_data)?,
        });
    }

    let mut rows = Vec::new();
    let mut scatters = Vec::new();
    for set in &sets {
        let s = isometry_error(stack(&flatten(set)).view(), latent_m.view(), ev.pair_samples, pair_seed)?;
        info!("{}: relative RMSE {:.4}", set.method, s.relative_rmse);
        rows.push(MetricRow::new(scenario, set.method, &s, config.seed));
        scatters.push((set.method, thin(&s.pairs, ev.scatter_points)));
    }
    if ev.completion {
        let s = completion_summary(model, &eval_data, &eval_truth)?;
        info!("{METHOD_COMPLETION}: relative RMSE {:.4}", s.relative_rmse);
        rows.push(MetricRow::new(scenario, METHOD_COMPLETION, &s, config.seed));
        scatters.push((METHOD_COMPLETION, thin(&s.pairs, ev.scatter_points)));
    }

    let t = &ev.thresholds;
    let mut checks = Vec::new();
    if t.require_rigid {
        checks.push(check("rigidity", rigidity.verdict as u8 as f64, 1.0, rigidity.verdict));
    }
    let rel = |method: &str| rows.iter().find(|r| r.method == method).map(|r| r.relative_rmse);
    if let (Some(limit), Some(v)) = (t.max_relative_rmse, rel(METHOD_FUSED)) {
        checks.push(check("gappy_loca_relative_rmse", v, limit, v <= limit));
    }
    if let (Some(limit), Some(v)) = (t.baseline_max_relative_rmse, rel(METHOD_BASELINE)) {
        checks.push(check("baseline_relative_rmse", v, limit, v <= limit));
    }
    if let (Some(limit), Some(b), Some(g)) = (t.min_baseline_ratio, rel(METHOD_BASELINE), rel(METHOD_FUSED)) {
        let ratio = b / g;
        checks.push(check("baseline_over_gappy_loca", ratio, limit, ratio >= limit));
    }
    if let (Some(limit), Some(v)) = (t.completion_max_relative_rmse, rel(METHOD_COMPLETION)) {
        checks.push(check("completion_relative_rmse", v, limit, v <= limit));
    }

    let metrics_path = dir.join(METRICS);
    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    write_metrics_csv(file, &rows)?;
    for (method, pairs) in &scatters {
        let path = dir.join(scatter_file(method));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        gappy_core::evaluation::metrics::write_scatter_csv(file, pairs)?;
    }
    write_text(&dir.join(EMBEDDING), &embedding_csv(&eval_data, &latent, &sets))?;
    write_checks(&dir.join(CHECKS), &checks)?;
    emit_report(dir)?;
    Ok(Outcome {
        run_dir: dir.to_path_buf(),
        metrics: rows,
        checks,
    })
}

/// All stages in order. With `dry_run` only the dataset and the rigidity
/// report are produced.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, dry_run: bool) -> Result<Outcome, CliError> {
    let (dataset, truth) = generate_stage(config, dir)?;
    let rigidity = rigidity_stage(&dataset, &truth, dir)?;
    if dry_run {
        return Ok(Outcome {
            run_dir: dir.to_path_buf(),
            metrics: Vec::new(),
            checks: Vec::new(),
        });
    }
    let (model, _) = train_stage(config, &dataset, dir)?;
    evaluate_stage(config, &dataset, &rigidity, &model, dir)
}

//! Independent per-modality models registered after training.
//!
//! Each modality is trained on its own (no calibration term); the resulting
//! embeddings are then placed in the frame of the lowest-id modality by
//! chaining Procrustes fits of the calibration burst means along a BFS
//! spanning tree of the modality graph.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::procrustes::{procrustes_fit, RigidTransform};
use super::EvalError;
use crate::loca::{embed_dataset, train, GappyLocaModel, TrainConfig, TrainHistory};
use crate::model::FusionDataset;
use crate::rigidity::{disconnected_subgraphs, required_connections, Graph};
use crate::Real;

#[derive(Debug, Clone)]
pub struct BaselineModel<T> {
    /// Sorted by modality id; `models[k]` knows only modality `modality_ids[k]`.
    pub modality_ids: Vec<usize>,
    pub models: Vec<GappyLocaModel<T>>,
    pub histories: Vec<TrainHistory>,
    /// Maps each model's own frame into the common frame.
    pub transforms: Vec<RigidTransform<f64>>,
    pub warnings: Vec<String>,
}

impl<T: Real> BaselineModel<T> {
    /// Mean embedding of every burst in the common frame, laid out like
    /// `dataset.modalities`.
    pub fn embed_means(&self, dataset: &FusionDataset) -> Result<Vec<Vec<Array1<f64>>>, EvalError> {
        let mut out = Vec::with_capacity(dataset.modalities.len());
        for m in &dataset.modalities {
            let k = self
                .modality_ids
                .iter()
                .position(|&id| id == m.modality_id)
                .ok_or_else(|| EvalError::Shape(format!("baseline has no modality {}", m.modality_id)))?;
            let own = own_means(&self.models[k], dataset, m.modality_id)?;
            out.push(own.iter().map(|x| self.transforms[k].apply_point(x.view())).collect());
        }
        Ok(out)
    }
}

fn own_means<T: Real>(
    model: &GappyLocaModel<T>,
    dataset: &FusionDataset,
    modality_id: usize,
) -> Result<Vec<Array1<f64>>, EvalError> {
    let single = dataset
        .restricted_to(modality_id)
        .ok_or_else(|| EvalError::Shape(format!("dataset has no modality {modality_id}")))?;
    let e = embed_dataset(model, &single)?;
    Ok(e[0].iter().map(|b| b.mean.mapv(|v| v.to_f64_lossy())).collect())
}

fn rows(points: &[Array1<f64>]) -> Array2<f64> {
    let p = points.first().map_or(0, Array1::len);
    Array2::from_shape_fn((points.len(), p), |(i, j)| points[i][j])
}

/// Places every position `0..k` in a common frame by chaining Procrustes
/// fits (reflections allowed) over the calibration `links`
/// `(a, burst in a, b, burst in b)`, breadth first from the lowest position
/// of each connected component. `means[k][i]` is the embedded mean of
/// burst `i` of position `k`.
///
/// Also returns the pairs `(parent, child, links)` registered from fewer
/// than `need` links.
pub(crate) fn chain_registration(
    k: usize,
    links: &[(usize, usize, usize, usize)],
    means: &[Vec<Array1<f64>>],
    need: usize,
) -> Result<(Vec<RigidTransform<f64>>, Vec<(usize, usize, usize)>), EvalError> {
    let mut graph = Graph::new(k);
    for &(a, _, b, _) in links {
        graph.add_edge(a, b, 1);
    }
    let p = means.iter().flatten().next().map_or(0, Array1::len);
    let mut transforms: Vec<Option<RigidTransform<f64>>> = vec![None; k];
    let mut short = Vec::new();
    for root in 0..k {
        if transforms[root].is_some() {
            continue;
        }
        transforms[root] = Some(RigidTransform::identity(p));
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let mut next: Vec<usize> = graph.neighbors(u).to_vec();
            next.sort_unstable();
            for v in next {
                if transforms[v].is_some() {
                    continue;
                }
                let parent = transforms[u].as_ref().expect("parent placed before child");
                let mut source = Vec::new();
                let mut target = Vec::new();
                for &(a, ia, b, ib) in links {
                    let pair = if (a, b) == (u, v) {
                        Some((ib, ia))
                    } else if (a, b) == (v, u) {
                        Some((ia, ib))
                    } else {
                        None
                    };
                    if let Some((iv, iu)) = pair {
                        source.push(means[v][iv].clone());
                        target.push(parent.apply_point(means[u][iu].view()));
                    }
                }
                if source.len() < need {
                    short.push((u, v, source.len()));
                }
                let fit = procrustes_fit(rows(&source).view(), rows(&target).view(), true)?;
                transforms[v] = Some(fit);
                queue.push_back(v);
            }
        }
    }
    Ok((transforms.into_iter().map(|t| t.expect("every position is a root or reached")).collect(), short))
}

/// Trains one model per modality and registers them into a common frame.
pub fn baseline_register<T: Real>(dataset: &FusionDataset, config: &TrainConfig) -> Result<BaselineModel<T>, EvalError> {
    let mut modality_ids: Vec<usize> = dataset.modalities.iter().map(|m| m.modality_id).collect();
    modality_ids.sort_unstable();
    let pos = |id: usize| modality_ids.iter().position(|&x| x == id);
    let k = modality_ids.len();

    // links between model positions: (a, burst in a, b, burst in b)
    let mut links = Vec::new();
    let mut graph = Graph::new(k);
    for l in &dataset.calibration {
        if let (Some(a), Some(b)) = (pos(l.modality_a), pos(l.modality_b)) {
            graph.add_edge(a, b, 1);
            links.push((a, l.burst_a, b, l.burst_b));
        }
    }
    let components = disconnected_subgraphs(&graph);
    if components.len() > 1 {
        return Err(EvalError::Disconnected(
            components
                .iter()
                .map(|c| c.iter().map(|&v| modality_ids[v]).collect())
                .collect(),
        ));
    }

    let mut cfg = config.clone();
    cfg.weights.calibration = 0.0;
    let mut models = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    for (n, &id) in modality_ids.iter().enumerate() {
        let single = dataset.restricted_to(id).expect("id taken from dataset");
        cfg.seed = config.seed.wrapping_add(n as u64);
        let (model, history) = train::<T>(&single, &cfg)?;
        means.push(own_means(&model, dataset, id)?);
        models.push(model);
        histories.push(history);
    }

    let need = required_connections(dataset.intrinsic_dim);
    let (transforms, short) = chain_registration(k, &links, &means, need)?;
    let mut warnings = Vec::new();
    for (u, v, count) in short {
        let msg = format!(
            "modalities {} and {} share {count} calibration bursts, fewer than the {need} needed for a unique registration",
            modality_ids[u], modality_ids[v]
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    Ok(BaselineModel {
        modality_ids,
        models,
        histories,
        transforms,
        warnings,
    })
}

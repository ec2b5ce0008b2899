//! Feasibility of a unique rigid assembly of the observed pieces.
//!
//! Two settings are covered. In the patch case every modality (or every
//! path-connected patch of a modality's domain) is a rigid body and the
//! calibration links are the connection points between bodies. In the point
//! case every point is a vertex and two points are adjacent when they share
//! at least `2d + 1` sensors. Either way the assembly is unique up to a
//! global isometry when the graph is connected and every vertex has at least
//! `d(d + 1) / 2` connections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::linalg::{sample_covariance, sym_eig_small};
use crate::model::{FusionDataset, GroundTruth};

/// Connections needed per body to pin down an orthogonal transformation.
pub fn required_connections(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Common sensors needed for two points to be adjacent.
pub fn required_common_sensors(d: usize) -> usize {
    2 * d + 1
}

/// Undirected multigraph on vertices `0..n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    multiplicity: BTreeMap<(usize, usize), usize>,
}

impl Graph {
    pub fn new(vertices: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); vertices],
            multiplicity: BTreeMap::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    /// Adds `count` connections between `a` and `b`. Self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize, count: usize) {
        if a == b || count == 0 {
            return;
        }
        let key = (a.min(b), a.max(b));
        let m = self.multiplicity.entry(key).or_insert(0);
        if *m == 0 {
            self.adjacency[a].push(b);
            self.adjacency[b].push(a);
        }
        *m += count;
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn multiplicity(&self, a: usize, b: usize) -> usize {
        self.multiplicity.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    }

    /// Total connection count incident to `v`.
    pub fn connections(&self, v: usize) -> usize {
        self.adjacency[v].iter().map(|&u| self.multiplicity(u, v)).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.multiplicity.iter().map(|(&k, &v)| (k, v))
    }
}

/// Connected components by depth-first search with an explicit stack.
///
/// Components are returned in order of their smallest vertex, each sorted
/// ascending. Runs in `O(V + E)`.
pub fn disconnected_subgraphs(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_vertices();
    let mut visited = vec![false; n];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut component = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            component.push(v);
            for &u in g.neighbors(v) {
                if !visited[u] {
                    visited[u] = true;
                    stack.push(u);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    /// Name of every vertex, e.g. `modality 1` or `modality 1 / patch 0`.
    pub vertices: Vec<String>,
    pub connected: bool,
    pub components: Vec<Vec<usize>>,
    /// Connections (or neighbors) required per vertex.
    pub required: usize,
    /// Missing connections per vertex, zero when satisfied.
    pub deficits: Vec<usize>,
    pub verdict: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn assess(g: &Graph, vertices: Vec<String>, required: usize, count: impl Fn(usize) -> usize) -> RigidityReport {
    let components = disconnected_subgraphs(g);
    let connected = components.len() <= 1;
    let required = if g.num_vertices() > 1 { required } else { 0 };
    let deficits: Vec<usize> = (0..g.num_vertices())
        .map(|v| required.saturating_sub(count(v)))
        .collect();
    let verdict = connected && deficits.iter().all(|&d| d == 0);
    RigidityReport {
        vertices,
        connected,
        components,
        required,
        deficits,
        verdict,
        warnings: Vec::new(),
    }
}

/// Rank of the centered point cloud, with a relative tolerance.
fn affine_rank(points: &[&Vec<f64>]) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let d = points[0].len();
    let m = Array2::from_shape_fn((points.len(), d), |(i, j)| points[i][j]);
    let cov = sample_covariance(m.view());
    let Ok(eig) = sym_eig_small(cov.view()) else {
        return 0;
    };
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-10 * scale * scale;
    eig.values.iter().filter(|&&v| v > tol).count()
}

/// Patch-case rigidity of the observation graph of `dataset`.
///
/// Without ground truth every modality is one vertex. With ground truth the
/// vertices are the (modality, patch) pairs that own at least one burst, and
/// calibration centers shared by two bodies are checked for affine
/// degeneracy.
pub fn check_patch_rigidity(dataset: &FusionDataset, truth: Option<&GroundTruth>) -> RigidityReport {
    let d = dataset.intrinsic_dim;
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut names = Vec::new();
    let patch_of = |modality_id: usize, burst: usize| -> usize {
        truth
            .and_then(|t| t.modality(modality_id))
            .and_then(|m| m.patches.get(burst).copied())
            .unwrap_or(0)
    };
    for m in &dataset.modalities {
        let patches: BTreeSet<usize> = match truth.and_then(|t| t.modality(m.modality_id)) {
            Some(mt) if !mt.patches.is_empty() => mt.patches.iter().copied().collect(),
            _ => BTreeSet::from([0]),
        };
        let split = patches.len() > 1;
        for p in patches {
            index.insert((m.modality_id, p), names.len());
            names.push(if split {
                format!("modality {} / patch {}", m.modality_id, p)
            } else {
                format!("modality {}", m.modality_id)
            });
        }
    }

    let mut g = Graph::new(names.len());
    let mut shared: BTreeMap<(usize, usize), Vec<&Vec<f64>>> = BTreeMap::new();
    for link in &dataset.calibration {
        let a = index.get(&(link.modality_a, patch_of(link.modality_a, link.burst_a)));
        let b = index.get(&(link.modality_b, patch_of(link.modality_b, link.burst_b)));
        if let (Some(&a), Some(&b)) = (a, b) {
            g.add_edge(a, b, 1);
            if let Some(c) = truth.and_then(|t| t.center(link.modality_a, link.burst_a)) {
                shared.entry((a.min(b), a.max(b))).or_default().push(c);
            }
        }
    }

    let mut report = assess(&g, names, required_connections(d), |v| g.connections(v));
    for ((a, b), points) in shared {
        let rank = affine_rank(&points);
        if rank < d {
            report.warnings.push(format!(
                "calibration centers shared by {} and {} span only {rank} of {d} dimensions; \
                 the count condition holds but the assembly may not be rigid",
                report.vertices[a], report.vertices[b]
            ));
        }
    }
    report
}

/// Sensor identifier; numbers and names are both accepted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorId {
    Number(u64),
    Name(String),
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorId::Number(n) => write!(f, "{n}"),
            SensorId::Name(s) => write!(f, "{s}"),
        }
    }
}

impl From<u64> for SensorId {
    fn from(v: u64) -> Self {
        SensorId::Number(v)
    }
}

impl From<&str> for SensorId {
    fn from(v: &str) -> Self {
        SensorId::Name(v.to_string())
    }
}

/// A point together with the sensors that observe it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPoint {
    pub point_id: u64,
    pub sensor_ids: Vec<SensorId>,
}

fn sensor_set(p: &SensorPoint) -> BTreeSet<&SensorId> {
    p.sensor_ids.iter().collect()
}

/// Point-case graph: points adjacent when they share `2d + 1` sensors.
pub fn point_graph(points: &[SensorPoint], d: usize) -> Graph {
    let sets: Vec<_> = points.iter().map(sensor_set).collect();
    let need = required_common_sensors(d);
    let mut g = Graph::new(points.len());
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let common = sets[i].intersection(&sets[j]).count();
            if common >= need {
                g.add_edge(i, j, common);
            }
        }
    }
    g
}

/// Point-case rigidity: connected graph and `d(d + 1) / 2` distinct
/// neighbors per point.
pub fn check_point_rigidity(points: &[SensorPoint], d: usize) -> RigidityReport {
    let g = point_graph(points, d);
    let names = points.iter().map(|p| format!("point {}", p.point_id)).collect();
    assess(&g, names, required_connections(d), |v| g.neighbors(v).len())
}

/// A synthesized modality: a sensor subset and the points it observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModality {
    pub sensors: Vec<SensorId>,
    /// Indices into the input point list.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModalities {
    pub modalities: Vec<SensorModality>,
    /// Rigidity of the induced patch graph.
    pub report: RigidityReport,
}

impl PointModalities {
    /// Modalities (by position) that contain point `p`.
    pub fn memberships(&self, p: usize) -> Vec<usize> {
        self.modalities
            .iter()
            .enumerate()
            .filter(|(_, m)| m.members.contains(&p))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigidityError {
    #[error("point graph is not rigid (components {components:?}, deficient points {deficient:?})")]
    NotRigid {
        components: Vec<Vec<usize>>,
        deficient: Vec<u64>,
    },
    #[error("no sensor subset of size {need} covers points {points:?} rigidly")]
    Uncoverable { need: usize, points: Vec<u64> },
}

/// Induced patch graph: modalities as vertices, points in several
/// modalities as connection points.
fn modality_graph(modalities: &[SensorModality], n_points: usize) -> Graph {
    let mut g = Graph::new(modalities.len());
    let mut member_of: Vec<Vec<usize>> = vec![Vec::new(); n_points];
    for (mi, m) in modalities.iter().enumerate() {
        for &p in &m.members {
            member_of[p].push(mi);
        }
    }
    for list in &member_of {
        for a in 0..list.len() {
            for b in (a + 1)..list.len() {
                g.add_edge(list[a], list[b], 1);
            }
        }
    }
    g
}

fn modality_report(modalities: &[SensorModality], n_points: usize, d: usize) -> RigidityReport {
    let g = modality_graph(modalities, n_points);
    let names = (0..modalities.len()).map(|i| format!("sensor modality {i}")).collect();
    assess(&g, names, required_connections(d), |v| g.connections(v))
}

fn shortfall(r: &RigidityReport) -> (usize, usize) {
    (r.components.len(), r.deficits.iter().sum())
}

/// Greedily groups points into sensor-subset modalities.
///
/// Candidate subsets are the sensor sets of single points and the pairwise
/// intersections of at least `2d + 1` sensors. The subset shared by the
/// most still-uncovered points is taken first until every point is covered;
/// further subsets are then added while they reduce the number of
/// components or the total connection deficit of the induced patch graph.
pub fn select_point_modalities(points: &[SensorPoint], d: usize) -> Result<PointModalities, RigidityError> {
    let pre = check_point_rigidity(points, d);
    if !pre.verdict {
        return Err(RigidityError::NotRigid {
            components: pre.components.clone(),
            deficient: pre
                .deficits
                .iter()
                .enumerate()
                .filter(|(_, &def)| def > 0)
                .map(|(i, _)| points[i].point_id)
                .collect(),
        });
    }
    let need = required_common_sensors(d);
    let sets: Vec<_> = points.iter().map(sensor_set).collect();

    let mut candidates: BTreeSet<Vec<&SensorId>> = BTreeSet::new();
    for i in 0..points.len() {
        if sets[i].len() >= need {
            candidates.insert(sets[i].iter().copied().collect());
        }
        for j in (i + 1)..points.len() {
            let common: Vec<&SensorId> = sets[i].intersection(&sets[j]).copied().collect();
            if common.len() >= need {
                candidates.insert(common);
            }
        }
    }
    let candidates: Vec<(Vec<&SensorId>, Vec<usize>)> = candidates
        .into_iter()
        .map(|c| {
            let members = (0..points.len())
                .filter(|&p| c.iter().all(|s| sets[p].contains(s)))
                .collect();
            (c, members)
        })
        .collect();

    let to_modality = |c: &(Vec<&SensorId>, Vec<usize>)| SensorModality {
        sensors: c.0.iter().map(|&s| s.clone()).collect(),
        members: c.1.clone(),
    };

    let mut chosen: Vec<usize> = Vec::new();
    let mut covered = vec![false; points.len()];
    while covered.iter().any(|&c| !c) {
        let best = candidates
            .iter()
            .enumerate()
            .filter(|(ci, _)| !chosen.contains(ci))
            .map(|(ci, (set, members))| {
                let gain = members.iter().filter(|&&p| !covered[p]).count();
                (gain, members.len(), std::cmp::Reverse(set.len()), std::cmp::Reverse(ci), ci)
            })
            .max();
        match best {
            Some((gain, _, _, _, ci)) if gain > 0 => {
                for &p in &candidates[ci].1 {
                    covered[p] = true;
                }
                chosen.push(ci);
            }
            _ => {
                return Err(RigidityError::Uncoverable {
                    need,
                    points: (0..points.len())
                        .filter(|&p| !covered[p])
                        .map(|p| points[p].point_id)
                        .collect(),
                })
            }
        }
    }

    let mut modalities: Vec<SensorModality> = chosen.iter().map(|&ci| to_modality(&candidates[ci])).collect();
    let mut report = modality_report(&modalities, points.len(), d);
    while !report.verdict {
        let current = shortfall(&report);
        let mut best: Option<((usize, usize), usize)> = None;
        for (ci, c) in candidates.iter().enumerate() {
            if chosen.contains(&ci) {
                continue;
            }
            let mut trial = modalities.clone();
            trial.push(to_modality(c));
            let s = shortfall(&modality_report(&trial, points.len(), d));
            if s < current && best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, ci));
            }
        }
        let Some((_, ci)) = best else {
            let mut stuck = BTreeSet::new();
            for (v, &def) in report.deficits.iter().enumerate() {
                if def > 0 || !report.connected {
                    stuck.extend(modalities[v].members.iter().map(|&p| points[p].point_id));
                }
            }
            return Err(RigidityError::Uncoverable {
                need,
                points: stuck.into_iter().collect(),
            });
        };
        chosen.push(ci);
        modalities.push(to_modality(&candidates[ci]));
        report = modality_report(&modalities, points.len(), d);
    }
    Ok(PointModalities { modalities, report })
}

//! Points carrying their own sensor lists, grouped into modalities by the
//! greedy sensor-subset cover.
//!
//! Two sensor families `A` and `B` (five sensors each in the plane) observe
//! three point types: type 1 carries both families, type 2 only `A` and
//! type 3 only `B`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{assemble, invalid, stream, BurstShape, BurstSpec, CalibrationPlan, ModalityPlan, Rect, ScenarioError};
use crate::model::{FusionDataset, GroundTruth};
use crate::rigidity::{select_point_modalities, PointModalities, SensorId, SensorPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointCaseConfig {
    pub points_per_type: [usize; 3],
    /// Latent regions of point types 1, 2 and 3.
    pub regions: [Rect; 3],
    pub burst_size: usize,
    pub sigma: f64,
    pub burst_shape: BurstShape,
}

impl Default for PointCaseConfig {
    fn default() -> Self {
        Self {
            points_per_type: [100, 200, 200],
            regions: [
                Rect::new(&[1.0, 0.0], &[2.0, 1.0]),
                Rect::new(&[0.0, 0.0], &[1.0, 1.0]),
                Rect::new(&[2.0, 0.0], &[3.0, 1.0]),
            ],
            burst_size: 50,
            sigma: 0.02,
            burst_shape: BurstShape::Gaussian,
        }
    }
}

impl PointCaseConfig {
    pub fn validate(&self, prefix: &str) -> Result<(), ScenarioError> {
        if self.points_per_type.contains(&0) {
            return Err(invalid(format!("{prefix}.point_case.points_per_type"), "every type needs at least one point"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            r.validate(&format!("{prefix}.point_case.regions[{i}]"))?;
            if r.dim() != 2 {
                return Err(invalid(format!("{prefix}.point_case.regions[{i}]"), "regions are planar"));
            }
        }
        if self.burst_size < 2 {
            return Err(invalid(format!("{prefix}.burst_size"), "must be at least 2"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("{prefix}.sigma"), format!("must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Value of a named sensor at a latent point.
pub fn sensor_eval(name: &str, x: &[f64]) -> Option<f64> {
    let (a, b) = (x[0], x[1]);
    Some(match name {
        "A1" => a,
        "A2" => b,
        "A3" => a.sin(),
        "A4" => b.cos(),
        "A5" => 0.3 * a * b,
        "B1" => a + b,
        "B2" => a - b,
        "B3" => (a + 0.5).cos(),
        "B4" => b.sin(),
        "B5" => 0.2 * a * a,
        _ => return None,
    })
}

fn family(prefix: char) -> Vec<SensorId> {
    (1..=5).map(|i| SensorId::Name(format!("{prefix}{i}"))).collect()
}

#[derive(Debug, Clone)]
pub struct PointCaseOutput {
    pub dataset: FusionDataset,
    pub truth: GroundTruth,
    pub points: Vec<SensorPoint>,
    pub selection: PointModalities,
}

pub fn make_point_case(cfg: &PointCaseConfig, seed: u64) -> Result<PointCaseOutput, ScenarioError> {
    cfg.validate("scenario")?;
    let mut rng = stream(seed, 1);
    let (a, b) = (family('A'), family('B'));
    let mut points = Vec::new();
    let mut centers = Vec::new();
    for (ty, &count) in cfg.points_per_type.iter().enumerate() {
        let sensors: Vec<SensorId> = match ty {
            0 => a.iter().chain(&b).cloned().collect(),
            1 => a.clone(),
            _ => b.clone(),
        };
        for _ in 0..count {
            points.push(SensorPoint {
                point_id: points.len() as u64,
                sensor_ids: sensors.clone(),
            });
            centers.push(cfg.regions[ty].sample(&mut rng));
        }
    }
    let selection = select_point_modalities(&points, 2)?;

    let mut plans = Vec::new();
    let mut owners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, m) in selection.modalities.iter().enumerate() {
        let names: Vec<String> = m.sensors.iter().map(|s| s.to_string()).collect();
        if let Some(bad) = names.iter().find(|n| sensor_eval(n, &[0.0, 0.0]).is_none()) {
            return Err(invalid("scenario.point_case", format!("unknown sensor {bad}")));
        }
        for &p in &m.members {
            owners.entry(p).or_default().push(k + 1);
        }
        plans.push(ModalityPlan {
            modality_id: k + 1,
            ambient_dim: names.len(),
            domain: format!("points carrying sensors {}", names.join(",")),
            // common points are added below as calibration bursts
            centers: m
                .members
                .iter()
                .filter(|p| selection.memberships(**p).len() == 1)
                .map(|&p| (centers[p].clone(), 0))
                .collect(),
            observe: Box::new(move |x| names.iter().map(|n| sensor_eval(n, x).unwrap_or(f64::NAN)).collect()),
            patch_of: Box::new(|_| 0),
        });
    }
    let mut calibration = Vec::new();
    for (p, mods) in &owners {
        for i in 0..mods.len() {
            for j in (i + 1)..mods.len() {
                calibration.push(CalibrationPlan {
                    center: centers[*p].clone(),
                    modality_a: mods[i],
                    modality_b: mods[j],
                });
            }
        }
    }
    let burst = BurstSpec {
        size: cfg.burst_size,
        sigma: cfg.sigma,
        shape: cfg.burst_shape,
    };
    let (dataset, truth) = assemble(2, "point_case", burst, &plans, &calibration, seed)?;
    Ok(PointCaseOutput {
        dataset,
        truth,
        points,
        selection,
    })
}
